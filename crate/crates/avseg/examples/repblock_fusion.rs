//! Structural reparameterization: a training-time block with parallel 3x3,
//! 1x1, and identity branches collapses into a single 3x3 convolution for
//! inference. The fused form computes the same function with one kernel.
//!
//! Run with: `cargo run --example repblock_fusion`

use avseg::decoder::{fuse_repblock, RepBlockParams};
use avseg::flops;
use avseg::rng::Rng;

fn main() -> avseg::Result<()> {
    let mut rng = Rng::new(5);
    let d = 32;
    let block = RepBlockParams::init(d, &mut rng);
    let fused = fuse_repblock(&block)?;

    let x = rng.tensor_normal(&[d, 14, 14]);
    let (multi, multi_flops) = flops::counted(|| block.forward(&x));
    let (single, single_flops) = flops::counted(|| fused.forward(&x));
    let multi = multi?;
    let single = single?;

    println!("multi-branch output flops: {multi_flops}");
    println!("fused output flops:        {single_flops}");
    println!(
        "flop reduction:            {:.1}%",
        100.0 * (1.0 - single_flops as f64 / multi_flops as f64)
    );
    println!(
        "max |multi - fused|:       {:.3e}",
        multi.max_abs_diff(&single)
    );
    println!(
        "parameter count: {} (multi-branch) -> {} (fused)",
        block.param_count(),
        fused.param_count()
    );
    Ok(())
}

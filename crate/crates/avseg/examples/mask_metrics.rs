//! Scores predicted masks against ground truth with the Jaccard index and
//! the F-score (beta^2 = 0.3), including the text tensor round trip used by
//! the `eval` subcommand.
//!
//! Run with: `cargo run --example mask_metrics`

use avseg::io::{load_tensor, save_tensor};
use avseg::metrics::{binarize, f_score, jaccard, DEFAULT_BETA_SQ};
use avseg::rng::Rng;
use avseg::tensor::Tensor;

fn main() -> anyhow::Result<()> {
    let mut rng = Rng::new(9);
    let gt = Tensor::new(
        vec![8, 8],
        (0..64)
            .map(|_| if rng.next_f64() < 0.4 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    // soft prediction: the ground truth with noise, thresholded at 0.5
    let soft = Tensor::new(
        vec![8, 8],
        gt.data()
            .iter()
            .map(|&g| (0.35 * g + 0.45 * rng.next_f64() + 0.1).clamp(0.0, 1.0))
            .collect(),
    )?;

    // round-trip through the text format, as the eval subcommand does
    let dir = std::env::temp_dir().join("avseg_mask_metrics");
    std::fs::create_dir_all(&dir)?;
    save_tensor(&dir.join("pred.txt"), &soft)?;
    let pred = binarize(&load_tensor(&dir.join("pred.txt"))?);

    println!("jaccard: {:.6}", jaccard(&pred, &gt)?);
    println!("f-score: {:.6}", f_score(&pred, &gt, DEFAULT_BETA_SQ)?);
    println!(
        "identical masks score 1.0: jaccard {:.1}, f-score {:.1}",
        jaccard(&gt, &gt)?,
        f_score(&gt, &gt, DEFAULT_BETA_SQ)?
    );
    Ok(())
}

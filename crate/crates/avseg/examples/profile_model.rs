//! Per-component profile of the full model: analytic FLOPs, parameter
//! counts, measured wall time, and wall-time share. Also verifies that the
//! analytic FLOP totals match the instrumented execution counter exactly.
//!
//! Run with: `cargo run --release --example profile_model`

use avseg::flops;
use avseg::model::{
    model_forward, model_graph, runtime_breakdown, synth_scene, ModelConfig, ModelParams,
};
use avseg::profiler::count_flops;

fn main() -> avseg::Result<()> {
    let cfg = ModelConfig::default();
    let params = ModelParams::init(&cfg)?;
    let scene = synth_scene(&cfg, 0)?;

    // analytic graph vs instrumented execution
    let analytic = count_flops(&model_graph(&cfg))?;
    let (result, counted) = flops::counted(|| model_forward(&scene, &cfg, &params));
    result?;
    println!("analytic flops:     {analytic}");
    println!("instrumented flops: {counted}");
    assert_eq!(analytic, counted, "cost model must match execution exactly");

    let report = runtime_breakdown(&cfg, &params, &scene, 5, 1)?;
    println!();
    print!("{}", report.to_text());
    println!("total parameters: {}", params.param_count());
    Ok(())
}

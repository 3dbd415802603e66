//! Compares the four decoder stage layouts on analytic FLOPs, parameter
//! counts, and measured forward latency.
//!
//! Run with: `cargo run --release --example layout_costs`

use avseg::decoder::{decoder_forward, DecoderLayout};
use avseg::model::{synth_scene, ModelConfig, ModelParams};
use avseg::pqg::pqg_forward;
use avseg::profiler::{bench_latency, count_flops, decoder_graph};

fn main() -> avseg::Result<()> {
    let cfg = ModelConfig::default();
    let scene = synth_scene(&cfg, 0)?;

    println!(
        "{:<8} {:>14} {:>10} {:>11} {:>11} {:>11}",
        "layout", "flops", "params", "median_ms", "p25_ms", "p75_ms"
    );
    let mut measured = Vec::new();
    for layout in DecoderLayout::ablation_set() {
        let mut lc = cfg.clone();
        lc.layout = layout.clone();
        let params = ModelParams::init(&lc)?;
        let f_gen = pqg_forward(&scene.audio, &params.pqg)?;
        let flops = count_flops(&decoder_graph(
            &layout,
            lc.embed_dim,
            lc.num_heads,
            &lc.channels,
            lc.height,
            lc.width,
            lc.num_queries,
        ))?;
        let dparams: u64 = params.decoder.param_count();
        let stats = bench_latency(
            || decoder_forward(&scene.pyramid, &f_gen, &layout, &params.decoder).unwrap(),
            2,
            10,
        )?;
        println!(
            "{:<8} {:>14} {:>10} {:>11.3} {:>11.3} {:>11.3}",
            layout.to_string(),
            flops,
            dparams,
            stats.median_ms,
            stats.p25_ms,
            stats.p75_ms
        );
        measured.push((layout.to_string(), flops, stats.median_ms));
    }

    let find = |n: &str| measured.iter().find(|(l, ..)| l == n).unwrap().clone();
    let (_, f_ctt, t_ctt) = find("C-T-T");
    let (_, f_ttt, t_ttt) = find("T-T-T");
    println!();
    println!(
        "C-T-T vs T-T-T: {:.1}% fewer flops, {:.1}% faster",
        100.0 * (1.0 - f_ctt as f64 / f_ttt as f64),
        100.0 * (1.0 - t_ctt / t_ttt)
    );
    Ok(())
}

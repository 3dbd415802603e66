//! Shows how the prompt query generator repairs dissipated cross-attention:
//! a single audio token expands into a bank of generated queries, so the
//! decoder attends over many audio-conditioned tokens instead of one.
//!
//! Run with: `cargo run --example query_repair`

use avseg::attention::cross_attention;
use avseg::pqg::{pqg_breaks_dissipation, pqg_forward, PqgConfig, PqgState};
use avseg::rng::Rng;

fn main() -> avseg::Result<()> {
    let mut rng = Rng::new(11);
    let d = 64;
    let visual = rng.tensor_normal(&[32, d]); // 32 patch tokens
    let audio = rng.tensor_normal(&[1, d]);

    // raw audio token as key/value: guaranteed dissipation
    let raw = cross_attention(&visual, &audio, &audio, true)?;
    println!(
        "raw audio key/value: index {:.6} (weights all 1.0: {})",
        avseg::attention::dissipation_index(&raw)?,
        raw.weights.data().iter().all(|&w| w == 1.0)
    );

    // generated queries as key/value
    let cfg = PqgConfig {
        num_queries: 16,
        embed_dim: d,
        num_layers: 3,
        num_heads: 8,
    };
    let state = PqgState::init(cfg, &mut rng)?;
    let f_gen = pqg_forward(&audio, &state)?;
    println!("generated query bank: {:?}", f_gen.shape());

    let report = pqg_breaks_dissipation(&audio, &state, &visual)?;
    println!(
        "generated key/value: index {:.6}, dissipated: {}",
        report.index, report.dissipated
    );

    // a single generated query reproduces the degenerate case
    let cfg1 = PqgConfig {
        num_queries: 1,
        ..cfg
    };
    let state1 = PqgState::init(cfg1, &mut rng)?;
    let report1 = pqg_breaks_dissipation(&audio, &state1, &visual)?;
    println!(
        "single generated query: index {:.6}, dissipated: {}",
        report1.index, report1.dissipated
    );
    Ok(())
}

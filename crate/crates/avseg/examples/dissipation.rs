//! Demonstrates attention dissipation: when the key/value sequence holds a
//! single token, every softmax row normalizes over one column, every weight
//! is exactly 1.0, and every output row is a bitwise copy of the value
//! vector — the attention layer degenerates into a broadcast.
//!
//! Run with: `cargo run --example dissipation`

use avseg::attention::{cross_attention, dissipation_index};
use avseg::rng::Rng;

fn main() -> avseg::Result<()> {
    let mut rng = Rng::new(1);
    let n = 6;
    let c = 8;
    let queries = rng.tensor_normal(&[n, c]);
    let kv = rng.tensor_normal(&[1, c]);

    let res = cross_attention(&queries, &kv, &kv, true)?;

    println!("attention weights with a single key/value token ({n}x1):");
    for i in 0..n {
        println!("  row {i}: {:.6}", res.weights.data()[i]);
    }

    let replicated = (0..n).all(|i| res.output.row(i) == kv.row(0));
    println!("all output rows bitwise equal to the value vector: {replicated}");
    println!("dissipation index: {:.6}", dissipation_index(&res)?);

    // contrast with a two-token key/value sequence
    let kv2 = rng.tensor_normal(&[2, c]);
    let res2 = cross_attention(&queries, &kv2, &kv2, true)?;
    println!();
    println!("with two key/value tokens the weights differentiate:");
    for i in 0..n {
        println!(
            "  row {i}: {:.6} {:.6}",
            res2.weights.at2(i, 0),
            res2.weights.at2(i, 1)
        );
    }
    println!("dissipation index: {:.6}", dissipation_index(&res2)?);
    Ok(())
}

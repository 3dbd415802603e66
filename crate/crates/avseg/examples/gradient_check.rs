//! Validates the analytic dice and soft-IoU loss gradients against central
//! finite differences, and prints the weighted total loss under both
//! training profiles.
//!
//! Run with: `cargo run --example gradient_check`

use avseg::loss::{
    dice_grad, dice_loss, iou_grad, iou_loss, total_loss, LossWeights, MaskPair, DEFAULT_EPS,
};
use avseg::rng::Rng;
use avseg::tensor::Tensor;

fn main() -> avseg::Result<()> {
    let mut rng = Rng::new(3);
    let pred = rng.tensor_uniform(&[8, 8], 1e-3, 1.0 - 1e-3);
    let gt = Tensor::new(
        vec![8, 8],
        (0..64)
            .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    let pair = MaskPair::new(pred.clone(), gt.clone())?;

    let step = 1e-6;
    let mut max_rel = 0.0_f64;
    for (name, loss, grad) in [
        (
            "dice",
            dice_loss as fn(&MaskPair, f64) -> f64,
            dice_grad(&pair, DEFAULT_EPS),
        ),
        ("soft-IoU", iou_loss, iou_grad(&pair, DEFAULT_EPS)),
    ] {
        let mut worst = 0.0_f64;
        for i in 0..pred.len() {
            let bump = |delta: f64| -> avseg::Result<f64> {
                let mut data = pred.data().to_vec();
                data[i] += delta;
                Ok(loss(
                    &MaskPair::new(Tensor::new(vec![8, 8], data)?, gt.clone())?,
                    DEFAULT_EPS,
                ))
            };
            let fd = (bump(step)? - bump(-step)?) / (2.0 * step);
            let a = grad.data()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
        }
        println!(
            "{name}: loss {:.6}, max relative gradient error {worst:.3e}",
            loss(&pair, DEFAULT_EPS)
        );
        max_rel = max_rel.max(worst);
    }
    println!("overall max relative error: {max_rel:.3e} (threshold 1e-5)");

    // weighted totals under the two training profiles
    let f_elf = rng.tensor_normal(&[4, 8, 8]);
    for (name, w) in [
        ("S4/MS3", LossWeights::s4_ms3()),
        ("AVSS", LossWeights::avss()),
    ] {
        let total = total_loss(&pair, &f_elf, &gt, &w)?;
        println!(
            "{name} profile ({}, {}, {}): total loss {total:.6}",
            w.iou, w.dice, w.aux
        );
    }
    Ok(())
}

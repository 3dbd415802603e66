//! Segmentation losses with analytic gradients.
//!
//! Dice and soft-IoU losses over a soft prediction and a binary ground
//! truth, an auxiliary per-channel dice loss on the intermediate convolution
//! feature, and the weighted total. Gradients are closed-form and checked
//! against central finite differences in the tests.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Weights of the loss components. Two shipped profiles differ only in the
/// IoU weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub iou: f64,
    pub dice: f64,
    pub aux: f64,
}

impl LossWeights {
    pub fn s4_ms3() -> Self {
        LossWeights {
            iou: 1.8,
            dice: 1.0,
            aux: 0.1,
        }
    }

    pub fn avss() -> Self {
        LossWeights {
            iou: 1.0,
            dice: 1.0,
            aux: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou < 0.0 || self.dice < 0.0 || self.aux < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Soft prediction in (0,1) paired with a binary ground-truth mask of the
/// same extents.
#[derive(Debug, Clone)]
pub struct MaskPair {
    pub pred: Tensor,
    pub gt: Tensor,
}

impl MaskPair {
    pub fn new(pred: Tensor, gt: Tensor) -> Result<Self> {
        if pred.shape() != gt.shape() {
            return Err(Error::shape(
                "MaskPair",
                format!("{:?}", pred.shape()),
                format!("{:?}", gt.shape()),
            ));
        }
        if pred.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "prediction values must lie in [0,1]".into(),
            ));
        }
        if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("ground truth must be binary".into()));
        }
        Ok(MaskPair { pred, gt })
    }
}

fn sums(pair: &MaskPair) -> (f64, f64, f64) {
    let mut sp = 0.0;
    let mut sg = 0.0;
    let mut spg = 0.0;
    for (&p, &g) in pair.pred.data().iter().zip(pair.gt.data()) {
        sp += p;
        sg += g;
        spg += p * g;
    }
    (sp, sg, spg)
}

/// `1 - (2 Σpg + eps) / (Σp + Σg + eps)`
pub fn dice_loss(pair: &MaskPair, eps: f64) -> f64 {
    let (sp, sg, spg) = sums(pair);
    1.0 - (2.0 * spg + eps) / (sp + sg + eps)
}

/// Soft IoU: `1 - (Σpg + eps) / (Σp + Σg - Σpg + eps)`
pub fn iou_loss(pair: &MaskPair, eps: f64) -> f64 {
    let (sp, sg, spg) = sums(pair);
    1.0 - (spg + eps) / (sp + sg - spg + eps)
}

/// Analytic `∂L_dice/∂p` per pixel.
pub fn dice_grad(pair: &MaskPair, eps: f64) -> Tensor {
    let (sp, sg, spg) = sums(pair);
    let denom = sp + sg + eps;
    let num = 2.0 * spg + eps;
    let data: Vec<f64> = pair
        .gt
        .data()
        .iter()
        .map(|&g| -(2.0 * g * denom - num) / (denom * denom))
        .collect();
    Tensor::from_parts(pair.pred.shape().to_vec(), data)
}

/// Analytic `∂L_iou/∂p` per pixel.
pub fn iou_grad(pair: &MaskPair, eps: f64) -> Tensor {
    let (sp, sg, spg) = sums(pair);
    let union = sp + sg - spg + eps;
    let inter = spg + eps;
    let data: Vec<f64> = pair
        .gt
        .data()
        .iter()
        .map(|&g| -(g * union - inter * (1.0 - g)) / (union * union))
        .collect();
    Tensor::from_parts(pair.pred.shape().to_vec(), data)
}

/// Mean per-channel dice loss of the logistic-squashed intermediate feature
/// against the foreground mask at the working resolution.
pub fn aux_loss(f_elf: &Tensor, foreground: &Tensor) -> Result<f64> {
    let (c, h, w) = f_elf.dims3()?;
    if foreground.shape() != [h, w] {
        return Err(Error::shape(
            "aux_loss",
            format!("foreground [{h}x{w}]"),
            format!("{:?}", foreground.shape()),
        ));
    }
    let mut acc = 0.0;
    for ch in 0..c {
        let start = ch * h * w;
        let squashed: Vec<f64> = f_elf.data()[start..start + h * w]
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let pair = MaskPair::new(Tensor::from_parts(vec![h, w], squashed), foreground.clone())?;
        acc += dice_loss(&pair, DEFAULT_EPS);
    }
    Ok(acc / c as f64)
}

/// `λ_iou L_iou + λ_dice L_dice + λ_aux L_aux`
pub fn total_loss(
    pair: &MaskPair,
    f_elf: &Tensor,
    foreground: &Tensor,
    w: &LossWeights,
) -> Result<f64> {
    w.validate()?;
    Ok(w.iou * iou_loss(pair, DEFAULT_EPS)
        + w.dice * dice_loss(pair, DEFAULT_EPS)
        + w.aux * aux_loss(f_elf, foreground)?)
}

/// Nearest-neighbor downsample of a binary mask to the working resolution.
pub fn nearest_downsample(gt: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (gh, gw) = gt.dims2()?;
    let mut data = vec![0.0; h * w];
    for oy in 0..h {
        let iy = ((oy as f64 + 0.5) * gh as f64 / h as f64) as usize;
        let iy = iy.min(gh - 1);
        for ox in 0..w {
            let ix = ((ox as f64 + 0.5) * gw as f64 / w as f64) as usize;
            let ix = ix.min(gw - 1);
            data[oy * w + ox] = gt.data()[iy * gw + ix];
        }
    }
    Ok(Tensor::from_parts(vec![h, w], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn seeded_pair(rng: &mut Rng, h: usize, w: usize) -> MaskPair {
        let pred = rng.tensor_uniform(&[h, w], 0.01, 0.99);
        let gt_data: Vec<f64> = (0..h * w)
            .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 })
            .collect();
        MaskPair::new(pred, Tensor::from_parts(vec![h, w], gt_data)).unwrap()
    }

    #[test]
    fn dice_perfect_overlap_near_zero() {
        let gt = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let pair = MaskPair::new(gt.clone(), gt).unwrap();
        assert!(dice_loss(&pair, 1e-6) < 1e-6);
        assert!(iou_loss(&pair, 1e-6) < 1e-6);
    }

    #[test]
    fn dice_disjoint_limit_approaches_one() {
        let pred = Tensor::filled(&[4, 4], 1e-9);
        let gt = Tensor::filled(&[4, 4], 1.0);
        let pair = MaskPair::new(pred, gt).unwrap();
        assert!(dice_loss(&pair, 1e-9) > 0.999);
        assert!(iou_loss(&pair, 1e-9) > 0.999);
    }

    #[test]
    fn dice_half_overlap_hand_value() {
        // p = 0.5 everywhere, g = half ones on 2x2
        let pred = Tensor::filled(&[2, 2], 0.5);
        let gt = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let pair = MaskPair::new(pred, gt).unwrap();
        let eps = 1e-6;
        let want = 1.0 - (2.0 * 1.0 + eps) / (2.0 + 2.0 + eps);
        assert!((dice_loss(&pair, eps) - want).abs() < 1e-15);
        // soft IoU: 1 - 1/(2+2-1)
        let want_iou = 1.0 - (1.0 + eps) / (2.0 + 2.0 - 1.0 + eps);
        assert!((iou_loss(&pair, eps) - want_iou).abs() < 1e-15);
        assert!((iou_loss(&pair, eps) - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn losses_stay_in_range() {
        let mut rng = Rng::new(1);
        for _ in 0..50 {
            let pair = seeded_pair(&mut rng, 6, 6);
            for l in [dice_loss(&pair, 1e-6), iou_loss(&pair, 1e-6)] {
                assert!((0.0..1.0).contains(&l), "{l}");
            }
        }
    }

    fn fd_grad(pair: &MaskPair, eps: f64, loss: impl Fn(&MaskPair, f64) -> f64) -> Vec<f64> {
        let step = 1e-6;
        let n = pair.pred.len();
        let mut grad = vec![0.0; n];
        for (i, g) in grad.iter_mut().enumerate() {
            let mut plus = pair.clone();
            plus.pred.data_mut()[i] += step;
            let mut minus = pair.clone();
            minus.pred.data_mut()[i] -= step;
            *g = (loss(&plus, eps) - loss(&minus, eps)) / (2.0 * step);
        }
        grad
    }

    fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(fd)
            .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(2);
        for case in 0..50 {
            let size = 4 + (case % 13);
            let pair = seeded_pair(&mut rng, size, size);
            let dg = dice_grad(&pair, DEFAULT_EPS);
            let ig = iou_grad(&pair, DEFAULT_EPS);
            let dfd = fd_grad(&pair, DEFAULT_EPS, dice_loss);
            let ifd = fd_grad(&pair, DEFAULT_EPS, iou_loss);
            assert!(max_rel_err(dg.data(), &dfd) < 1e-5, "dice case {case}");
            assert!(max_rel_err(ig.data(), &ifd) < 1e-5, "iou case {case}");
        }
    }

    #[test]
    fn perfect_prediction_loss_and_gradient() {
        let gt = Tensor::filled(&[4, 4], 1.0);
        let pair = MaskPair::new(gt.clone(), gt).unwrap();
        let eps = 1e-6;
        assert!(dice_loss(&pair, eps).abs() < 1e-6);
        assert!(iou_loss(&pair, eps).abs() < 1e-6);
        // at p == g == 1 the dice gradient is -1/(Σp+Σg+eps) per pixel
        let g = dice_grad(&pair, eps);
        let expected = -1.0 / (32.0 + eps);
        assert!(g.data().iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn gradient_closed_form_for_empty_ground_truth() {
        // g = 0 everywhere: L_dice = 1 - eps/(Σp+eps), dL/dp = eps/(Σp+eps)^2
        let mut rng = Rng::new(3);
        let pred = rng.tensor_uniform(&[3, 3], 0.1, 0.9);
        let sp: f64 = pred.data().iter().sum();
        let pair = MaskPair::new(pred, Tensor::zeros(&[3, 3])).unwrap();
        let eps = 1e-6;
        let g = dice_grad(&pair, eps);
        let want = eps / ((sp + eps) * (sp + eps));
        for &v in g.data() {
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn single_pixel_moves_toward_gt_never_increase_dice() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let pair = seeded_pair(&mut rng, 5, 5);
            let before = dice_loss(&pair, DEFAULT_EPS);
            let i = (rng.next_u64() % 25) as usize;
            let mut moved = pair.clone();
            let p = moved.pred.data()[i];
            let g = moved.gt.data()[i];
            moved.pred.data_mut()[i] = p + 0.5 * (g - p);
            let after = dice_loss(&moved, DEFAULT_EPS);
            assert!(after <= before + 1e-12, "{after} > {before}");
        }
    }

    #[test]
    fn aux_loss_saturated_correct_channels_near_zero() {
        let fg = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut data = Vec::new();
        for _ in 0..3 {
            for &g in fg.data() {
                data.push(if g == 1.0 { 50.0 } else { -50.0 });
            }
        }
        let f_elf = Tensor::new(vec![3, 2, 2], data).unwrap();
        assert!(aux_loss(&f_elf, &fg).unwrap() < 1e-6);
    }

    #[test]
    fn aux_loss_zero_feature_reduces_to_uniform_half_dice() {
        let fg = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let f_elf = Tensor::zeros(&[5, 2, 2]);
        let got = aux_loss(&f_elf, &fg).unwrap();
        let pair = MaskPair::new(Tensor::filled(&[2, 2], 0.5), fg).unwrap();
        let want = dice_loss(&pair, DEFAULT_EPS);
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn aux_loss_single_channel_equals_dice() {
        let mut rng = Rng::new(5);
        let f_elf = rng.tensor_normal(&[1, 3, 3]);
        let fg_data: Vec<f64> = (0..9).map(|i| (i % 2) as f64).collect();
        let fg = Tensor::new(vec![3, 3], fg_data).unwrap();
        let got = aux_loss(&f_elf, &fg).unwrap();
        let squashed = f_elf.reshape(&[3, 3]).unwrap().logistic();
        let pair = MaskPair::new(squashed, fg).unwrap();
        assert!((got - dice_loss(&pair, DEFAULT_EPS)).abs() < 1e-15);
    }

    #[test]
    fn aux_loss_spatial_mismatch_rejected() {
        let f_elf = Tensor::zeros(&[2, 4, 4]);
        let fg = Tensor::zeros(&[3, 3]);
        assert!(aux_loss(&f_elf, &fg).is_err());
    }

    #[test]
    fn total_loss_zero_weights_is_zero() {
        let mut rng = Rng::new(6);
        let pair = seeded_pair(&mut rng, 4, 4);
        let f_elf = rng.tensor_normal(&[2, 4, 4]);
        let w = LossWeights {
            iou: 0.0,
            dice: 0.0,
            aux: 0.0,
        };
        assert_eq!(total_loss(&pair, &f_elf, &pair.gt, &w).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_is_linear_in_weights() {
        let mut rng = Rng::new(7);
        let pair = seeded_pair(&mut rng, 4, 4);
        let f_elf = rng.tensor_normal(&[2, 4, 4]);
        let w = LossWeights::s4_ms3();
        let base = total_loss(&pair, &f_elf, &pair.gt, &w).unwrap();
        let doubled = LossWeights {
            iou: 2.0 * w.iou,
            dice: 2.0 * w.dice,
            aux: 2.0 * w.aux,
        };
        let twice = total_loss(&pair, &f_elf, &pair.gt, &doubled).unwrap();
        assert!((twice - 2.0 * base).abs() < 1e-12);
        // decomposition against individually computed components
        let want = w.iou * iou_loss(&pair, DEFAULT_EPS)
            + w.dice * dice_loss(&pair, DEFAULT_EPS)
            + w.aux * aux_loss(&f_elf, &pair.gt).unwrap();
        assert!((base - want).abs() < 1e-12);
    }

    #[test]
    fn nearest_downsample_preserves_binary_values() {
        let gt = Tensor::new(
            vec![4, 4],
            vec![
                1.0, 1.0, 0.0, 0.0, //
                1.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 1.0, //
                0.0, 0.0, 1.0, 1.0,
            ],
        )
        .unwrap();
        let down = nearest_downsample(&gt, 2, 2).unwrap();
        assert_eq!(down.data(), &[1.0, 0.0, 0.0, 1.0]);
    }
}

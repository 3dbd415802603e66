//! Evaluation metrics: Jaccard index (mIoU) and the F-score with beta^2 = 0.3.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BETA_SQ: f64 = 0.3;

fn check_binary(name: &'static str, t: &Tensor) -> Result<()> {
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} mask must be binary"
        )));
    }
    Ok(())
}

/// Thresholds a soft mask at 0.5.
pub fn binarize(soft: &Tensor) -> Tensor {
    soft.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// Intersection over union of two binary masks; 1.0 when both are empty.
pub fn jaccard(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "jaccard",
            format!("{:?}", gt.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    check_binary("prediction", pred)?;
    check_binary("ground truth", gt)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let p = p == 1.0;
        let g = g == 1.0;
        inter += (p && g) as u64;
        union += (p || g) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// `(1+β²)·precision·recall / (β²·precision + recall)` from pixel counts;
/// 0 when the denominator vanishes.
pub fn f_score(pred: &Tensor, gt: &Tensor, beta_sq: f64) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "f_score",
            format!("{:?}", gt.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    check_binary("prediction", pred)?;
    check_binary("ground truth", gt)?;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fnn = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let p = p == 1.0;
        let g = g == 1.0;
        tp += (p && g) as u64;
        fp += (p && !g) as u64;
        fnn += (!p && g) as u64;
    }
    if tp + fp == 0 || tp + fnn == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fnn) as f64;
    let denom = beta_sq * precision + recall;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + beta_sq) * precision * recall / denom)
}

/// F-score straight from precision/recall, for hand-value checks.
pub fn f_score_from_pr(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let denom = beta_sq * precision + recall;
    if denom == 0.0 {
        return 0.0;
    }
    (1.0 + beta_sq) * precision * recall / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_mask(rng: &mut Rng, h: usize, w: usize) -> Tensor {
        let data: Vec<f64> = (0..h * w)
            .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(vec![h, w], data).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let mut rng = Rng::new(1);
        let m = random_mask(&mut rng, 8, 8);
        assert_eq!(jaccard(&m, &m).unwrap(), 1.0);
        assert_eq!(f_score(&m, &m, DEFAULT_BETA_SQ).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = Tensor::new(vec![1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![1, 4], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        assert_eq!(f_score(&a, &b, DEFAULT_BETA_SQ).unwrap(), 0.0);
    }

    #[test]
    fn both_empty_jaccard_is_one() {
        let z = Tensor::zeros(&[4, 4]);
        assert_eq!(jaccard(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn empty_prediction_f_score_zero() {
        let z = Tensor::zeros(&[2, 2]);
        let g = Tensor::filled(&[2, 2], 1.0);
        assert_eq!(f_score(&z, &g, DEFAULT_BETA_SQ).unwrap(), 0.0);
    }

    #[test]
    fn f_score_hand_value() {
        // precision 0.5, recall 1.0 -> 1.3*0.5/(0.15+1.0)
        let got = f_score_from_pr(0.5, 1.0, 0.3);
        assert!((got - 0.565_217_391_304_347_8).abs() < 1e-12);
        // realized with masks: gt one pixel, pred two pixels including it
        let gt = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let pred = Tensor::new(vec![1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let f = f_score(&pred, &gt, 0.3).unwrap();
        assert!((f - got).abs() < 1e-15);
    }

    // brute-force pixel counting oracle
    fn counting_oracle(pred: &Tensor, gt: &Tensor) -> (f64, f64) {
        let pixels: Vec<(bool, bool)> = pred
            .data()
            .iter()
            .zip(gt.data())
            .map(|(&p, &g)| (p == 1.0, g == 1.0))
            .collect();
        let inter = pixels.iter().filter(|(p, g)| *p && *g).count() as f64;
        let union = pixels.iter().filter(|(p, g)| *p || *g).count() as f64;
        let pp = pixels.iter().filter(|(p, _)| *p).count() as f64;
        let gp = pixels.iter().filter(|(_, g)| *g).count() as f64;
        let j = if union == 0.0 { 1.0 } else { inter / union };
        let f = if pp == 0.0 || gp == 0.0 {
            0.0
        } else {
            f_score_from_pr(inter / pp, inter / gp, 0.3)
        };
        (j, f)
    }

    #[test]
    fn metrics_match_counting_oracle() {
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let pred = random_mask(&mut rng, 8, 8);
            let gt = random_mask(&mut rng, 8, 8);
            let (j, f) = counting_oracle(&pred, &gt);
            assert_eq!(jaccard(&pred, &gt).unwrap(), j);
            assert_eq!(f_score(&pred, &gt, 0.3).unwrap(), f);
        }
    }

    #[test]
    fn binarize_thresholds_at_half() {
        let soft = Tensor::new(vec![1, 4], vec![0.49, 0.5, 0.51, 0.0]).unwrap();
        assert_eq!(binarize(&soft).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn non_binary_input_rejected() {
        let bad = Tensor::new(vec![1, 2], vec![0.5, 1.0]).unwrap();
        let ok = Tensor::zeros(&[1, 2]);
        assert!(jaccard(&bad, &ok).is_err());
    }
}

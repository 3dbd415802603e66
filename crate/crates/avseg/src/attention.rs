//! Scaled dot-product and multi-head cross-attention, plus the dissipation
//! analyzer.
//!
//! The dissipation phenomenon: with a single key/value token, softmax over a
//! one-column logit matrix is identically 1, so the attention output is a
//! plain replication of the value row no matter what the queries are. The
//! analyzer detects this on both the output rows and the weight matrix.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Full attention evaluation: output `O`, probabilities `P`, and raw logits.
#[derive(Debug, Clone)]
pub struct AttentionResult {
    pub output: Tensor,
    pub weights: Tensor,
    pub logits: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub use_projections: bool,
}

impl MultiHeadConfig {
    pub fn new(embed_dim: usize, num_heads: usize, use_projections: bool) -> Result<Self> {
        if num_heads == 0 || !embed_dim.is_multiple_of(num_heads) {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {embed_dim} not divisible by num_heads {num_heads}"
            )));
        }
        Ok(MultiHeadConfig {
            embed_dim,
            num_heads,
            use_projections,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// Learned projection weights for multi-head attention.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionParams {
    /// Seeded uniform init in `[-1/sqrt(D), 1/sqrt(D)]`.
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut w = || rng.tensor_uniform(&[d, d], -bound, bound);
        let wq = w();
        let wk = w();
        let wv = w();
        let wo = w();
        AttentionParams {
            wq,
            bq: Tensor::zeros(&[d]),
            wk,
            bk: Tensor::zeros(&[d]),
            wv,
            bv: Tensor::zeros(&[d]),
            wo,
            bo: Tensor::zeros(&[d]),
        }
    }

    pub fn zeros(d: usize) -> Self {
        AttentionParams {
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
        }
    }

    pub fn param_count(&self) -> u64 {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
        ]
        .iter()
        .map(|t| t.len() as u64)
        .sum()
    }
}

/// Variance floor used by every layer norm in the crate.
pub const LN_EPS: f64 = 1e-6;

/// Layer-norm affine parameters over a channel axis.
#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        LayerNormParams {
            gamma: Tensor::filled(&[d], 1.0),
            beta: Tensor::zeros(&[d]),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, LN_EPS)
    }

    pub fn param_count(&self) -> u64 {
        (self.gamma.len() + self.beta.len()) as u64
    }
}

/// Two-layer feed-forward block with ReLU.
#[derive(Debug, Clone)]
pub struct FfnParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FfnParams {
    pub fn init(d: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let w1 = rng.tensor_uniform(&[d, hidden], -bound, bound);
        let w2 = rng.tensor_uniform(&[hidden, d], -bound, bound);
        FfnParams {
            w1,
            b1: Tensor::zeros(&[hidden]),
            w2,
            b2: Tensor::zeros(&[d]),
        }
    }

    pub fn zeros(d: usize, hidden: usize) -> Self {
        FfnParams {
            w1: Tensor::zeros(&[d, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, d]),
            b2: Tensor::zeros(&[d]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w1)?
            .add_bias_row(&self.b1)?
            .relu()
            .matmul(&self.w2)?
            .add_bias_row(&self.b2)
    }

    pub fn param_count(&self) -> u64 {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .map(|t| t.len() as u64)
            .sum()
    }
}

/// Single-head cross-attention `O = Softmax(QK^T [/sqrt(c)]) V`.
///
/// Returns logits and probabilities alongside the output so the dissipation
/// analyzer can inspect them.
pub fn cross_attention(
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
    scaled: bool,
) -> Result<AttentionResult> {
    let (_, c) = query.dims2()?;
    let (m, kc) = key.dims2()?;
    let (mv, _) = value.dims2()?;
    if kc != c {
        return Err(Error::shape(
            "cross_attention",
            format!("key [Mx{c}]"),
            format!("[{m}x{kc}]"),
        ));
    }
    if mv != m {
        return Err(Error::shape(
            "cross_attention",
            format!("value with {m} rows"),
            format!("{mv} rows"),
        ));
    }
    let logits = query.matmul(&key.transpose2()?)?;
    let scale = if scaled {
        Some(1.0 / (c as f64).sqrt())
    } else {
        None
    };
    let weights = logits.softmax_rows_scaled(scale)?;
    let output = weights.matmul(value)?;
    Ok(AttentionResult {
        output,
        weights,
        logits,
    })
}

/// Multi-head attention over `D/num_heads` column slices, optionally wrapped
/// in learned projections. Returns the per-head attention results too.
pub fn multi_head_attention_detailed(
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
    cfg: &MultiHeadConfig,
    params: Option<&AttentionParams>,
) -> Result<(Tensor, Vec<AttentionResult>)> {
    let (_, d) = query.dims2()?;
    if d != cfg.embed_dim {
        return Err(Error::shape(
            "multi_head_attention",
            format!("embed_dim {}", cfg.embed_dim),
            format!("{d}"),
        ));
    }
    if cfg.use_projections != params.is_some() {
        return Err(Error::InvalidArgument(
            "projection params must be present iff use_projections".to_string(),
        ));
    }
    let (q, k, v) = match params {
        Some(p) => (
            query.matmul(&p.wq)?.add_bias_row(&p.bq)?,
            key.matmul(&p.wk)?.add_bias_row(&p.bk)?,
            value.matmul(&p.wv)?.add_bias_row(&p.bv)?,
        ),
        None => (query.clone(), key.clone(), value.clone()),
    };
    let hd = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    let mut outputs = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let res = cross_attention(
            &q.col_slice(lo, hi)?,
            &k.col_slice(lo, hi)?,
            &v.col_slice(lo, hi)?,
            true,
        )?;
        outputs.push(res.output.clone());
        heads.push(res);
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    let cat = Tensor::hcat(&refs)?;
    let out = match params {
        Some(p) => cat.matmul(&p.wo)?.add_bias_row(&p.bo)?,
        None => cat,
    };
    Ok((out, heads))
}

pub fn multi_head_attention(
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
    cfg: &MultiHeadConfig,
    params: Option<&AttentionParams>,
) -> Result<Tensor> {
    multi_head_attention_detailed(query, key, value, cfg, params).map(|(o, _)| o)
}

/// Dispersion of the attention output rows around their mean, in `[0, 1]`.
/// Exactly zero when all rows are identical (the dissipated case).
pub fn dissipation_index(result: &AttentionResult) -> Result<f64> {
    let (n, c) = result.output.dims2()?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "dissipation_index needs at least 2 output rows, got {n}"
        )));
    }
    let first = result.output.row(0);
    if (1..n).all(|i| result.output.row(i) == first) {
        return Ok(0.0);
    }
    let mut mean = vec![0.0; c];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(result.output.row(i)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mean_norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut acc = 0.0;
    for i in 0..n {
        let dist = result
            .output
            .row(i)
            .iter()
            .zip(mean.iter())
            .map(|(&o, &m)| (o - m) * (o - m))
            .sum::<f64>()
            .sqrt();
        acc += dist / (mean_norm + 1e-12);
    }
    Ok((acc / n as f64).clamp(0.0, 1.0))
}

/// True iff the result shows attention dissipation: near-zero output
/// dispersion and uniform `1/M` weights. Both conditions are required so
/// genuinely uniform logits over differing values are not misflagged.
pub fn is_dissipated(result: &AttentionResult, tol: f64) -> Result<bool> {
    if tol <= 0.0 {
        return Err(Error::InvalidArgument("tol must be > 0".to_string()));
    }
    let index = dissipation_index(result)?;
    if index >= tol {
        return Ok(false);
    }
    let (_, m) = result.weights.dims2()?;
    let uniform = 1.0 / m as f64;
    Ok(result
        .weights
        .data()
        .iter()
        .all(|&w| (w - uniform).abs() < tol))
}

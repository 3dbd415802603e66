//! Prompt query generator.
//!
//! A single-frame audio feature is concatenated as a prompt row onto a bank
//! of learnable queries, the stack runs through self-attention blocks, and
//! the prompt row is discarded at the output. The generated queries carry
//! audio conditioning while providing enough key/value tokens for downstream
//! cross-attention to escape dissipation.

use crate::attention::{self, AttentionParams, FfnParams, LayerNormParams, MultiHeadConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct PqgConfig {
    pub num_queries: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
}

impl Default for PqgConfig {
    fn default() -> Self {
        PqgConfig {
            num_queries: 16,
            embed_dim: 256,
            num_layers: 3,
            num_heads: 8,
        }
    }
}

impl PqgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 || self.num_layers == 0 {
            return Err(Error::InvalidArgument(
                "num_queries and num_layers must be >= 1".to_string(),
            ));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn ffn_hidden(&self) -> usize {
        4 * self.embed_dim
    }
}

/// One pre-norm block: self-attention + residual, then feed-forward + residual.
#[derive(Debug, Clone)]
pub struct PqgLayer {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone)]
pub struct PqgState {
    pub cfg: PqgConfig,
    pub q_learn: Tensor,
    pub layers: Vec<PqgLayer>,
    pub final_ln: LayerNormParams,
}

impl PqgState {
    /// Seeded initialization; learnable queries start uniform in
    /// `[-1/sqrt(D), 1/sqrt(D)]` so the rows are distinct.
    pub fn init(cfg: PqgConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let bound = 1.0 / (d as f64).sqrt();
        let q_learn = rng.tensor_uniform(&[cfg.num_queries, d], -bound, bound);
        if cfg.num_queries > 1 {
            let first = q_learn.row(0);
            if (1..cfg.num_queries).all(|i| q_learn.row(i) == first) {
                return Err(Error::InvalidArgument(
                    "learnable query rows collapsed at initialization".to_string(),
                ));
            }
        }
        let layers = (0..cfg.num_layers)
            .map(|_| PqgLayer {
                ln1: LayerNormParams::identity(d),
                attn: AttentionParams::init(d, rng),
                ln2: LayerNormParams::identity(d),
                ffn: FfnParams::init(d, cfg.ffn_hidden(), rng),
            })
            .collect();
        Ok(PqgState {
            cfg,
            q_learn,
            layers,
            final_ln: LayerNormParams::identity(d),
        })
    }

    pub fn param_count(&self) -> u64 {
        let layers: u64 = self
            .layers
            .iter()
            .map(|l| {
                l.ln1.param_count()
                    + l.attn.param_count()
                    + l.ln2.param_count()
                    + l.ffn.param_count()
            })
            .sum();
        self.q_learn.len() as u64 + layers + self.final_ln.param_count()
    }
}

/// Runs the prompt-concatenated stack and drops the prompt row, yielding the
/// `N_q x D` generated query set.
pub fn pqg_forward(audio: &Tensor, state: &PqgState) -> Result<Tensor> {
    let d = state.cfg.embed_dim;
    if audio.shape() != [1, d] {
        return Err(Error::shape(
            "pqg_forward",
            format!("[1x{d}]"),
            format!("{:?}", audio.shape()),
        ));
    }
    let mha_cfg = MultiHeadConfig::new(d, state.cfg.num_heads, true)?;
    let mut x = Tensor::vcat(&[audio, &state.q_learn])?;
    for layer in &state.layers {
        let normed = layer.ln1.apply(&x)?;
        let attn_out = attention::multi_head_attention(
            &normed,
            &normed,
            &normed,
            &mha_cfg,
            Some(&layer.attn),
        )?;
        x = x.add(&attn_out)?;
        let normed = layer.ln2.apply(&x)?;
        x = x.add(&layer.ffn.forward(&normed)?)?;
    }
    let x = state.final_ln.apply(&x)?;
    // discard the prompt row
    x.row_slice(1, state.cfg.num_queries + 1)
}

/// The prompt-augmented self-attention logit matrix `Q† Q†^T`.
///
/// Block layout: entry (0,0) is the audio-audio product, row 0 tail the
/// audio-query products, column 0 tail the query-audio products, and the
/// remainder the query-query Gram matrix.
pub fn pqg_attention_logits(audio: &Tensor, q_learn: &Tensor) -> Result<Tensor> {
    let aug = Tensor::vcat(&[audio, q_learn])?;
    aug.matmul(&aug.transpose2()?)
}

#[derive(Debug, Clone, Copy)]
pub struct DissipationReport {
    pub index: f64,
    pub dissipated: bool,
}

/// Generates queries from the audio prompt and checks whether cross-attention
/// keyed by them still dissipates.
pub fn pqg_breaks_dissipation(
    audio: &Tensor,
    state: &PqgState,
    visual: &Tensor,
) -> Result<DissipationReport> {
    let f_gen = pqg_forward(audio, state)?;
    let res = attention::cross_attention(visual, &f_gen, &f_gen, true)?;
    Ok(DissipationReport {
        index: attention::dissipation_index(&res)?,
        dissipated: attention::is_dissipated(&res, 1e-9)?,
    })
}

/// Baseline query expansion: audio row added to a learned bias bank. Kept
/// only as a comparison point; it is not trained here.
pub fn bqg_forward(audio: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (nq, d) = bias.dims2()?;
    if audio.shape() != [1, d] {
        return Err(Error::shape(
            "bqg_forward",
            format!("[1x{d}]"),
            format!("{:?}", audio.shape()),
        ));
    }
    let mut rows = Vec::with_capacity(nq);
    for i in 0..nq {
        rows.push(
            audio
                .row(0)
                .iter()
                .zip(bias.row(i))
                .map(|(a, b)| a + b)
                .collect::<Vec<f64>>(),
        );
    }
    Tensor::from_rows(&rows)
}

//! Early-focus decoder: a configurable stage pipeline mixing convolution
//! stages (residual RepBlock + layer norm on the spatial map) and
//! cross-attention stages (generated queries as key/value, on flattened
//! patches). Early convolution captures the narrow local patterns that make
//! early attention stages wasteful.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::attention::{
    self, AttentionParams, AttentionResult, FfnParams, LayerNormParams, MultiHeadConfig,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Conv,
    Transformer,
}

/// Ordered stage kinds, e.g. `C-T-T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderLayout(pub Vec<Stage>);

impl DecoderLayout {
    pub fn stages(&self) -> &[Stage] {
        &self.0
    }

    pub fn num_conv(&self) -> usize {
        self.0.iter().filter(|s| **s == Stage::Conv).count()
    }

    pub fn num_transformer(&self) -> usize {
        self.0.len() - self.num_conv()
    }

    /// The four ablation layouts, best-first order not implied.
    pub fn ablation_set() -> Vec<DecoderLayout> {
        ["T-T-T", "C-T-T", "T-C-T", "T-T-C"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }
}

impl Default for DecoderLayout {
    fn default() -> Self {
        "C-T-T".parse().unwrap()
    }
}

impl FromStr for DecoderLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let stages: Vec<Stage> = s
            .split('-')
            .map(|tok| match tok {
                "C" | "c" => Ok(Stage::Conv),
                "T" | "t" => Ok(Stage::Transformer),
                other => Err(Error::Parse(format!(
                    "bad stage '{other}' in layout '{s}' (expected C or T)"
                ))),
            })
            .collect::<Result<_>>()?;
        if stages.is_empty() {
            return Err(Error::Parse("layout must have at least one stage".into()));
        }
        Ok(DecoderLayout(stages))
    }
}

impl fmt::Display for DecoderLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .0
            .iter()
            .map(|s| match s {
                Stage::Conv => "C",
                Stage::Transformer => "T",
            })
            .collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// Multi-branch convolution (3x3 + 1x1 + identity) with an optional fused
/// single-kernel form that must agree with the branches on every input.
#[derive(Debug, Clone)]
pub struct RepBlockParams {
    pub w3: Tensor,
    pub b3: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub identity: bool,
    pub fused: Option<(Tensor, Tensor)>,
}

impl RepBlockParams {
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (9.0 * d as f64).sqrt();
        let w3 = rng.tensor_uniform(&[d, d, 3, 3], -bound, bound);
        let w1 = rng.tensor_uniform(&[d, d, 1, 1], -bound, bound);
        RepBlockParams {
            w3,
            b3: Tensor::zeros(&[d]),
            w1,
            b1: Tensor::zeros(&[d]),
            identity: true,
            fused: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.w3.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if let Some((w, b)) = &self.fused {
            return x.conv2d(w, b, 1, 1);
        }
        let mut out = x.conv2d(&self.w3, &self.b3, 1, 1)?;
        out = out.add(&x.conv2d(&self.w1, &self.b1, 1, 0)?)?;
        if self.identity {
            out = out.add(x)?;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> u64 {
        match &self.fused {
            Some((w, b)) => (w.len() + b.len()) as u64,
            None => (self.w3.len() + self.b3.len() + self.w1.len() + self.b1.len()) as u64,
        }
    }
}

/// Folds the 1x1 and identity branches into the 3x3 kernel: the 1x1 weight
/// lands at the kernel center, the identity branch becomes a per-channel
/// centered delta, biases sum.
pub fn fuse_repblock(params: &RepBlockParams) -> Result<RepBlockParams> {
    let d = params.channels();
    if params.w3.shape() != [d, d, 3, 3] || params.w1.shape() != [d, d, 1, 1] {
        return Err(Error::shape(
            "fuse_repblock",
            format!("[{d}x{d}x3x3] and [{d}x{d}x1x1]"),
            format!("{:?} and {:?}", params.w3.shape(), params.w1.shape()),
        ));
    }
    let mut w = params.w3.data().to_vec();
    for co in 0..d {
        for ci in 0..d {
            // center of the 3x3 window for (co, ci)
            let center = ((co * d + ci) * 3 + 1) * 3 + 1;
            w[center] += params.w1.data()[co * d + ci];
            if params.identity && co == ci {
                w[center] += 1.0;
            }
        }
    }
    let b: Vec<f64> = params
        .b3
        .data()
        .iter()
        .zip(params.b1.data())
        .map(|(a, c)| a + c)
        .collect();
    Ok(RepBlockParams {
        fused: Some((Tensor::new(vec![d, d, 3, 3], w)?, Tensor::new(vec![d], b)?)),
        ..params.clone()
    })
}

/// Hierarchical visual features at strides 4/8/16/32.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
    pub channels: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>, height: usize, width: usize) -> Result<Self> {
        if levels.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "pyramid needs 4 levels, got {}",
                levels.len()
            )));
        }
        if !height.is_multiple_of(32) || !width.is_multiple_of(32) {
            return Err(Error::InvalidArgument(format!(
                "image extents {height}x{width} must be divisible by 32"
            )));
        }
        let mut channels = Vec::with_capacity(4);
        for (i, level) in levels.iter().enumerate() {
            let (c, h, w) = level.dims3()?;
            let div = 1usize << (i + 2); // strides 4, 8, 16, 32
            if h != height / div || w != width / div {
                return Err(Error::shape(
                    "FeaturePyramid",
                    format!("level {i} extents {}x{}", height / div, width / div),
                    format!("{h}x{w}"),
                ));
            }
            channels.push(c);
        }
        Ok(FeaturePyramid {
            levels,
            channels,
            height,
            width,
        })
    }

    /// Decoder working resolution (stride 8).
    pub fn working_extents(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }
}

#[derive(Debug, Clone)]
pub struct ConvStageParams {
    pub rep: RepBlockParams,
    pub ln: LayerNormParams,
}

#[derive(Debug, Clone)]
pub struct AttnStageParams {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ffn: FfnParams,
    pub ln2: LayerNormParams,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // a handful per model; boxing buys nothing
pub enum StageParams {
    Conv(ConvStageParams),
    Attn(AttnStageParams),
}

/// Per-level 1x1 projection used to merge the pyramid to the working
/// resolution.
#[derive(Debug, Clone)]
pub struct MergeProj {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub merge: Vec<MergeProj>,
    pub stages: Vec<StageParams>,
}

impl DecoderParams {
    /// Seeded parameters for a given layout; RepBlocks are fused at
    /// construction (inference form).
    pub fn init(
        layout: &DecoderLayout,
        embed_dim: usize,
        num_heads: usize,
        channels: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        MultiHeadConfig::new(embed_dim, num_heads, true)?;
        let bound = 1.0 / (embed_dim as f64).sqrt();
        let merge = channels
            .iter()
            .map(|&c| MergeProj {
                w: rng.tensor_uniform(&[embed_dim, c, 1, 1], -bound, bound),
                b: Tensor::zeros(&[embed_dim]),
            })
            .collect();
        let stages = layout
            .stages()
            .iter()
            .map(|s| {
                Ok(match s {
                    Stage::Conv => StageParams::Conv(ConvStageParams {
                        rep: fuse_repblock(&RepBlockParams::init(embed_dim, rng))?,
                        ln: LayerNormParams::identity(embed_dim),
                    }),
                    Stage::Transformer => StageParams::Attn(AttnStageParams {
                        attn: AttentionParams::init(embed_dim, rng),
                        ln1: LayerNormParams::identity(embed_dim),
                        ffn: FfnParams::init(embed_dim, 4 * embed_dim, rng),
                        ln2: LayerNormParams::identity(embed_dim),
                    }),
                })
            })
            .collect::<Result<_>>()?;
        Ok(DecoderParams {
            embed_dim,
            num_heads,
            merge,
            stages,
        })
    }

    pub fn param_count(&self) -> u64 {
        let merge: u64 = self
            .merge
            .iter()
            .map(|m| (m.w.len() + m.b.len()) as u64)
            .sum();
        let stages: u64 = self
            .stages
            .iter()
            .map(|s| match s {
                StageParams::Conv(c) => c.rep.param_count() + c.ln.param_count(),
                StageParams::Attn(a) => {
                    a.attn.param_count()
                        + a.ln1.param_count()
                        + a.ffn.param_count()
                        + a.ln2.param_count()
                }
            })
            .sum();
        merge + stages
    }
}

/// `C×H×W` map to `N×C` patch rows. Lossless data movement.
pub fn flatten_patches(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for p in 0..h * w {
            data[p * c + ch] = x.data()[ch * h * w + p];
        }
    }
    Tensor::new(vec![h * w, c], data)
}

/// Inverse of [`flatten_patches`].
pub fn unflatten_patches(p: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c) = p.dims2()?;
    if n != h * w {
        return Err(Error::shape(
            "unflatten_patches",
            format!("{}x{} patches", h, w),
            format!("{n} rows"),
        ));
    }
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for pos in 0..n {
            data[ch * n + pos] = p.data()[pos * c + ch];
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// Residual RepBlock convolution followed by layer norm over channels at
/// every spatial position.
pub fn conv_stage(x: &Tensor, rep: &RepBlockParams, ln: &LayerNormParams) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if c != rep.channels() {
        return Err(Error::shape(
            "conv_stage",
            format!("{} channels", rep.channels()),
            format!("{c}"),
        ));
    }
    let y = x.add(&rep.forward(x)?)?;
    let normed = ln.apply(&flatten_patches(&y)?)?;
    unflatten_patches(&normed, h, w)
}

/// Attention output recorded per transformer stage for inspection.
#[derive(Debug, Clone)]
pub struct StageAttention {
    pub per_head: Vec<AttentionResult>,
    /// Head-averaged probability matrix, `N x N_q`.
    pub mean_weights: Tensor,
}

fn mean_weights(heads: &[AttentionResult]) -> Tensor {
    let (n, m) = heads[0].weights.dims2().expect("weights are 2-D");
    let mut data = vec![0.0; n * m];
    for h in heads {
        for (d, &v) in data.iter_mut().zip(h.weights.data()) {
            *d += v;
        }
    }
    let k = heads.len() as f64;
    for d in data.iter_mut() {
        *d /= k;
    }
    Tensor::from_parts(vec![n, m], data)
}

/// Cross-attention stage on flattened patches: multi-head attention with the
/// generated queries as key/value, residual + norm, then a feed-forward
/// sub-block with residual + norm.
pub fn attn_stage(
    p_visual: &Tensor,
    f_gen: &Tensor,
    cfg: &MultiHeadConfig,
    params: &AttnStageParams,
) -> Result<(Tensor, StageAttention)> {
    let (out, heads) =
        attention::multi_head_attention_detailed(p_visual, f_gen, f_gen, cfg, Some(&params.attn))?;
    let x = params.ln1.apply(&p_visual.add(&out)?)?;
    let y = params.ln2.apply(&x.add(&params.ffn.forward(&x)?)?)?;
    let mw = mean_weights(&heads);
    Ok((
        y,
        StageAttention {
            per_head: heads,
            mean_weights: mw,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct FusedOutput {
    /// Final spatial feature, `D×h×w`.
    pub fused: Tensor,
    /// Output of the last convolution stage, absent for all-transformer
    /// layouts.
    pub f_elf: Option<Tensor>,
    pub attention: Vec<StageAttention>,
}

/// Projects every pyramid level to the embed dim with a 1x1 convolution,
/// resizes to the stride-8 working resolution, and sums.
pub fn merge_pyramid(pyramid: &FeaturePyramid, params: &DecoderParams) -> Result<Tensor> {
    if params.merge.len() != pyramid.levels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} merge projections for {} levels",
            params.merge.len(),
            pyramid.levels.len()
        )));
    }
    let (h, w) = pyramid.working_extents();
    let mut acc: Option<Tensor> = None;
    for (level, proj) in pyramid.levels.iter().zip(&params.merge) {
        let projected = level.conv2d(&proj.w, &proj.b, 1, 0)?;
        let resized = projected.bilinear_resize(h, w)?;
        acc = Some(match acc {
            Some(a) => a.add(&resized)?,
            None => resized,
        });
    }
    Ok(acc.expect("pyramid has levels"))
}

pub fn decoder_forward(
    pyramid: &FeaturePyramid,
    f_gen: &Tensor,
    layout: &DecoderLayout,
    params: &DecoderParams,
) -> Result<FusedOutput> {
    decoder_forward_impl(pyramid, f_gen, layout, params, None)
}

/// Like [`decoder_forward`] but records wall time (ms) per named section.
pub fn decoder_forward_timed(
    pyramid: &FeaturePyramid,
    f_gen: &Tensor,
    layout: &DecoderLayout,
    params: &DecoderParams,
) -> Result<(FusedOutput, Vec<(String, f64)>)> {
    let mut timings = Vec::new();
    let out = decoder_forward_impl(pyramid, f_gen, layout, params, Some(&mut timings))?;
    Ok((out, timings))
}

fn decoder_forward_impl(
    pyramid: &FeaturePyramid,
    f_gen: &Tensor,
    layout: &DecoderLayout,
    params: &DecoderParams,
    mut timings: Option<&mut Vec<(String, f64)>>,
) -> Result<FusedOutput> {
    if layout.stages().is_empty() {
        return Err(Error::InvalidArgument("layout has zero stages".into()));
    }
    if layout.stages().len() != params.stages.len() {
        return Err(Error::InvalidArgument(format!(
            "layout has {} stages but params have {}",
            layout.stages().len(),
            params.stages.len()
        )));
    }
    let cfg = MultiHeadConfig::new(params.embed_dim, params.num_heads, true)?;
    let (h, w) = pyramid.working_extents();

    let t0 = Instant::now();
    let mut x = merge_pyramid(pyramid, params)?;
    if let Some(t) = timings.as_deref_mut() {
        t.push(("merge".to_string(), t0.elapsed().as_secs_f64() * 1e3));
    }

    let mut f_elf = None;
    let mut attention_log = Vec::new();
    for (i, (kind, stage)) in layout.stages().iter().zip(&params.stages).enumerate() {
        let t0 = Instant::now();
        let name;
        match (kind, stage) {
            (Stage::Conv, StageParams::Conv(p)) => {
                x = conv_stage(&x, &p.rep, &p.ln)?;
                f_elf = Some(x.clone());
                name = format!("stage{}_conv", i + 1);
            }
            (Stage::Transformer, StageParams::Attn(p)) => {
                let patches = flatten_patches(&x)?;
                let (out, att) = attn_stage(&patches, f_gen, &cfg, p)?;
                x = unflatten_patches(&out, h, w)?;
                attention_log.push(att);
                name = format!("stage{}_attn", i + 1);
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "stage {} params do not match layout kind",
                    i + 1
                )))
            }
        }
        if let Some(t) = timings.as_deref_mut() {
            t.push((name, t0.elapsed().as_secs_f64() * 1e3));
        }
    }
    Ok(FusedOutput {
        fused: x,
        f_elf,
        attention: attention_log,
    })
}

#[derive(Debug, Clone)]
pub struct MaskHeadParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl MaskHeadParams {
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        MaskHeadParams {
            w: rng.tensor_uniform(&[1, d, 1, 1], -bound, bound),
            b: Tensor::zeros(&[1]),
        }
    }

    pub fn param_count(&self) -> u64 {
        (self.w.len() + self.b.len()) as u64
    }
}

/// 1x1 projection to a single logit channel, bilinear upsample to the image
/// resolution, logistic squashing into (0, 1).
pub fn mask_head(fused: &Tensor, params: &MaskHeadParams, h: usize, w: usize) -> Result<Tensor> {
    let logits = fused.conv2d(&params.w, &params.b, 1, 0)?;
    Ok(logits.bilinear_resize(h, w)?.logistic())
}

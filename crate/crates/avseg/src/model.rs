//! Model assembly over synthetic inputs, configuration handling, and the
//! profiling entry points used by the command line.
//!
//! Backbones are replaced by seeded feature generators: a four-level visual
//! pyramid with stride-law extents and a single-frame audio feature. All
//! parameters are seeded and untrained; the artifact demonstrates mechanism
//! and cost, not segmentation quality.

use std::path::Path;

use crate::decoder::{
    self, DecoderLayout, DecoderParams, FeaturePyramid, MaskHeadParams, Stage, StageAttention,
};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::pqg::{self, PqgConfig, PqgState};
use crate::profiler::{
    self, attn_stage_graph, conv_stage_graph, count_flops, mask_head_graph, merge_graph, pqg_graph,
    ComponentGraph, ProfileReport,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossProfile {
    S4Ms3,
    Avss,
}

impl LossProfile {
    pub fn weights(&self) -> LossWeights {
        match self {
            LossProfile::S4Ms3 => LossWeights::s4_ms3(),
            LossProfile::Avss => LossWeights::avss(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_queries: usize,
    pub pqg_layers: usize,
    pub num_heads: usize,
    pub layout: DecoderLayout,
    pub height: usize,
    pub width: usize,
    pub loss_profile: LossProfile,
    pub seed: u64,
    /// Pyramid channel plan, smallest stride first.
    pub channels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 256,
            num_queries: 16,
            pqg_layers: 3,
            num_heads: 8,
            layout: DecoderLayout::default(),
            height: 224,
            width: 224,
            loss_profile: LossProfile::S4Ms3,
            seed: 0,
            channels: vec![64, 128, 256, 512],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return Err(Error::InvalidArgument(format!(
                "image extents {}x{} must be divisible by 32",
                self.height, self.width
            )));
        }
        if self.embed_dim == 0 || self.num_queries == 0 || self.pqg_layers == 0 {
            return Err(Error::InvalidArgument("counts must be positive".into()));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.channels.len() != 4 {
            return Err(Error::InvalidArgument("channel plan needs 4 levels".into()));
        }
        Ok(())
    }

    pub fn pqg_config(&self) -> PqgConfig {
        PqgConfig {
            num_queries: self.num_queries,
            embed_dim: self.embed_dim,
            num_layers: self.pqg_layers,
            num_heads: self.num_heads,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.loss_profile.weights()
    }

    /// Working resolution of the decoder (stride 8).
    pub fn working_extents(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }
}

/// Parses the `key = value` config format; `#` starts a comment, unknown
/// keys are rejected with their line number, missing keys take defaults.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: line_no,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |msg: String| Error::Config { line: line_no, msg };
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| bad(format!("bad integer '{v}'")))
        };
        match key {
            "embed_dim" => cfg.embed_dim = parse_usize(value)?,
            "num_queries" => cfg.num_queries = parse_usize(value)?,
            "pqg_layers" => cfg.pqg_layers = parse_usize(value)?,
            "num_heads" => cfg.num_heads = parse_usize(value)?,
            "height" => cfg.height = parse_usize(value)?,
            "width" => cfg.width = parse_usize(value)?,
            "seed" => {
                cfg.seed = value
                    .parse::<u64>()
                    .map_err(|_| bad(format!("bad seed '{value}'")))?
            }
            "layout" => {
                cfg.layout = value
                    .parse()
                    .map_err(|e| bad(format!("bad layout '{value}': {e}")))?
            }
            "loss_profile" => {
                cfg.loss_profile = match value.to_ascii_lowercase().as_str() {
                    "s4ms3" | "s4_ms3" => LossProfile::S4Ms3,
                    "avss" => LossProfile::Avss,
                    other => return Err(bad(format!("unknown loss profile '{other}'"))),
                }
            }
            "channels" => {
                cfg.channels = value
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|_| bad(format!("bad channel '{t}'")))
                    })
                    .collect::<Result<_>>()?
            }
            other => {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Synthetic inputs replacing a dataset sample: pyramid, audio feature, and
/// a binary ground-truth mask, all deterministic in (seed, scene index).
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub pyramid: FeaturePyramid,
    pub audio: Tensor,
    pub gt_mask: Tensor,
}

/// Four-level pyramid with exact stride-law extents and seeded Gaussian
/// values.
pub fn synth_pyramid(cfg: &ModelConfig, rng: &mut Rng) -> Result<FeaturePyramid> {
    cfg.validate()?;
    let levels = cfg
        .channels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let div = 1usize << (i + 2);
            rng.tensor_normal(&[c, cfg.height / div, cfg.width / div])
        })
        .collect();
    FeaturePyramid::new(levels, cfg.height, cfg.width)
}

pub fn synth_scene(cfg: &ModelConfig, index: u64) -> Result<SyntheticScene> {
    let mut rng = Rng::new(
        cfg.seed
            .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    );
    let pyramid = synth_pyramid(cfg, &mut rng)?;
    let audio = rng.tensor_normal(&[1, cfg.embed_dim]);
    // ground truth: a random disk of foreground
    let cy = rng.uniform(0.25, 0.75) * cfg.height as f64;
    let cx = rng.uniform(0.25, 0.75) * cfg.width as f64;
    let r = rng.uniform(0.1, 0.3) * cfg.height.min(cfg.width) as f64;
    let mut data = vec![0.0; cfg.height * cfg.width];
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            if dy * dy + dx * dx <= r * r {
                data[y * cfg.width + x] = 1.0;
            }
        }
    }
    Ok(SyntheticScene {
        pyramid,
        audio,
        gt_mask: Tensor::new(vec![cfg.height, cfg.width], data)?,
    })
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub pqg: PqgState,
    pub decoder: DecoderParams,
    pub head: MaskHeadParams,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        Ok(ModelParams {
            pqg: PqgState::init(cfg.pqg_config(), &mut rng)?,
            decoder: DecoderParams::init(
                &cfg.layout,
                cfg.embed_dim,
                cfg.num_heads,
                &cfg.channels,
                &mut rng,
            )?,
            head: MaskHeadParams::init(cfg.embed_dim, &mut rng),
        })
    }

    pub fn param_count(&self) -> u64 {
        self.pqg.param_count() + self.decoder.param_count() + self.head.param_count()
    }
}

#[derive(Debug)]
pub struct ForwardReport {
    /// Predicted mask, `1×H×W`, values in (0, 1).
    pub mask: Tensor,
    pub f_elf: Option<Tensor>,
    pub stage_attention: Vec<StageAttention>,
    /// Per transformer stage: true iff every head dissipated.
    pub stage_dissipated: Vec<bool>,
    /// Per transformer stage: mean per-head dissipation index.
    pub stage_indices: Vec<f64>,
}

fn stage_dissipation(stages: &[StageAttention]) -> Result<(Vec<bool>, Vec<f64>)> {
    let mut flags = Vec::with_capacity(stages.len());
    let mut indices = Vec::with_capacity(stages.len());
    for stage in stages {
        let mut all = true;
        let mut acc = 0.0;
        for head in &stage.per_head {
            all &= crate::attention::is_dissipated(head, 1e-9)?;
            acc += crate::attention::dissipation_index(head)?;
        }
        flags.push(all);
        indices.push(acc / stage.per_head.len() as f64);
    }
    Ok((flags, indices))
}

pub fn model_forward(
    scene: &SyntheticScene,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<ForwardReport> {
    let f_gen = pqg::pqg_forward(&scene.audio, &params.pqg)?;
    let out = decoder::decoder_forward(&scene.pyramid, &f_gen, &cfg.layout, &params.decoder)?;
    let mask = decoder::mask_head(&out.fused, &params.head, cfg.height, cfg.width)?;
    let (stage_dissipated, stage_indices) = stage_dissipation(&out.attention)?;
    Ok(ForwardReport {
        mask,
        f_elf: out.f_elf,
        stage_attention: out.attention,
        stage_dissipated,
        stage_indices,
    })
}

/// Forward pass with wall time (ms) recorded per named component.
pub fn model_forward_timed(
    scene: &SyntheticScene,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(ForwardReport, Vec<(String, f64)>)> {
    let mut sections = Vec::new();
    let t0 = std::time::Instant::now();
    let f_gen = pqg::pqg_forward(&scene.audio, &params.pqg)?;
    sections.push(("pqg".to_string(), t0.elapsed().as_secs_f64() * 1e3));

    let (out, decoder_sections) =
        decoder::decoder_forward_timed(&scene.pyramid, &f_gen, &cfg.layout, &params.decoder)?;
    sections.extend(decoder_sections);

    let t0 = std::time::Instant::now();
    let mask = decoder::mask_head(&out.fused, &params.head, cfg.height, cfg.width)?;
    sections.push(("mask_head".to_string(), t0.elapsed().as_secs_f64() * 1e3));

    let (stage_dissipated, stage_indices) = stage_dissipation(&out.attention)?;
    Ok((
        ForwardReport {
            mask,
            f_elf: out.f_elf,
            stage_attention: out.attention,
            stage_dissipated,
            stage_indices,
        },
        sections,
    ))
}

/// Named cost graphs for every component of the assembled model, in forward
/// order.
pub fn component_graphs(cfg: &ModelConfig) -> Vec<ComponentGraph> {
    let (h, w) = cfg.working_extents();
    let n = h * w;
    let mut graphs = vec![pqg_graph(&cfg.pqg_config())];
    graphs.push(merge_graph(
        &cfg.channels,
        cfg.height,
        cfg.width,
        cfg.embed_dim,
    ));
    for (i, stage) in cfg.layout.stages().iter().enumerate() {
        let mut g = match stage {
            Stage::Conv => conv_stage_graph(cfg.embed_dim, h, w, true),
            Stage::Transformer => {
                attn_stage_graph(n, cfg.num_queries, cfg.embed_dim, cfg.num_heads)
            }
        };
        g.name = match stage {
            Stage::Conv => format!("stage{}_conv", i + 1),
            Stage::Transformer => format!("stage{}_attn", i + 1),
        };
        graphs.push(g);
    }
    graphs.push(mask_head_graph(cfg.embed_dim, h, w, cfg.height, cfg.width));
    graphs
}

/// Whole-model cost graph (concatenation of [`component_graphs`]).
pub fn model_graph(cfg: &ModelConfig) -> ComponentGraph {
    let mut ops = Vec::new();
    for g in component_graphs(cfg) {
        ops.extend(g.ops);
    }
    ComponentGraph::new("model", ops)
}

fn component_params(cfg: &ModelConfig, params: &ModelParams) -> Vec<(String, u64)> {
    let mut out = vec![("pqg".to_string(), params.pqg.param_count())];
    let merge: u64 = params
        .decoder
        .merge
        .iter()
        .map(|m| (m.w.len() + m.b.len()) as u64)
        .sum();
    out.push(("merge".to_string(), merge));
    for (i, (kind, stage)) in cfg
        .layout
        .stages()
        .iter()
        .zip(&params.decoder.stages)
        .enumerate()
    {
        let (name, count) = match (kind, stage) {
            (Stage::Conv, decoder::StageParams::Conv(c)) => (
                format!("stage{}_conv", i + 1),
                c.rep.param_count() + c.ln.param_count(),
            ),
            (Stage::Transformer, decoder::StageParams::Attn(a)) => (
                format!("stage{}_attn", i + 1),
                a.attn.param_count()
                    + a.ln1.param_count()
                    + a.ffn.param_count()
                    + a.ln2.param_count(),
            ),
            _ => unreachable!("params built from the same layout"),
        };
        out.push((name, count));
    }
    out.push(("mask_head".to_string(), params.head.param_count()));
    out
}

/// Runs the assembled model `runs` times and reports per-component FLOPs,
/// parameters, latency statistics, and wall-time percentages.
pub fn runtime_breakdown(
    cfg: &ModelConfig,
    params: &ModelParams,
    scene: &SyntheticScene,
    runs: usize,
    warmup: usize,
) -> Result<ProfileReport> {
    if runs < 3 {
        return Err(Error::InvalidArgument(format!(
            "runs must be >= 3, got {runs}"
        )));
    }
    for _ in 0..warmup {
        std::hint::black_box(model_forward_timed(scene, cfg, params)?);
    }
    let graphs = component_graphs(cfg);
    let flops: Vec<(String, u64)> = graphs
        .iter()
        .map(|g| Ok((g.name.clone(), count_flops(g)?)))
        .collect::<Result<_>>()?;
    let param_counts = component_params(cfg, params);
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(runs); flops.len()];
    for _ in 0..runs {
        let (report, sections) = model_forward_timed(scene, cfg, params)?;
        std::hint::black_box(report);
        if sections.len() != flops.len() {
            return Err(Error::InvalidArgument(
                "component sections do not match cost graphs".into(),
            ));
        }
        for (i, (name, ms)) in sections.into_iter().enumerate() {
            debug_assert_eq!(name, flops[i].0);
            samples[i].push(ms);
        }
    }
    let components = flops
        .into_iter()
        .zip(param_counts)
        .zip(samples)
        .map(|(((name, f), (pname, p)), s)| {
            debug_assert_eq!(name, pname);
            (name, f, p, s)
        })
        .collect();
    Ok(ProfileReport::from_components(components))
}

/// Decoder-only latency over whole forwards of a given layout; used for
/// layout comparisons.
pub fn bench_decoder_forward(
    cfg: &ModelConfig,
    layout: &DecoderLayout,
    warmup: usize,
    runs: usize,
) -> Result<profiler::LatencyStats> {
    let mut bench_cfg = cfg.clone();
    bench_cfg.layout = layout.clone();
    let params = ModelParams::init(&bench_cfg)?;
    let scene = synth_scene(&bench_cfg, 0)?;
    let f_gen = pqg::pqg_forward(&scene.audio, &params.pqg)?;
    profiler::bench_latency(
        || decoder::decoder_forward(&scene.pyramid, &f_gen, layout, &params.decoder).unwrap(),
        warmup,
        runs,
    )
}

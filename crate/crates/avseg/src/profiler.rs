//! Analytic FLOP/parameter accounting and a wall-clock latency harness.
//!
//! The cost model is fixed so golden numbers stay stable:
//!
//! * matmul `2·m·k·n`
//! * conv2d `2·C_out·C_in·K²·H'·W'` (bias uncounted)
//! * softmax `5` per element
//! * layer norm `8` per element
//! * bilinear resize `8` per output element
//! * elementwise `1` per element
//!
//! These are the same conventions the instrumented counter in
//! [`crate::flops`] uses, so an analytic component graph must agree exactly
//! with an instrumented execution of that component.

use std::time::Instant;

use crate::decoder::{DecoderLayout, Stage};
use crate::error::{Error, Result};
use crate::pqg::PqgConfig;

/// Fixed per-op FLOP formulas.
pub mod cost {
    pub fn matmul(m: usize, k: usize, n: usize) -> u64 {
        2 * (m * k * n) as u64
    }

    pub fn conv2d(c_out: usize, c_in: usize, k: usize, h_out: usize, w_out: usize) -> u64 {
        2 * (c_out * c_in * k * k * h_out * w_out) as u64
    }

    pub fn softmax(elements: usize) -> u64 {
        5 * elements as u64
    }

    pub fn layer_norm(elements: usize) -> u64 {
        8 * elements as u64
    }

    pub fn elementwise(elements: usize) -> u64 {
        elements as u64
    }

    pub fn resize(out_elements: usize) -> u64 {
        8 * out_elements as u64
    }
}

/// One op in a component cost graph.
#[derive(Debug, Clone)]
pub enum GraphOp {
    Matmul {
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        c_out: usize,
        c_in: usize,
        k: usize,
        h_out: usize,
        w_out: usize,
    },
    Softmax {
        elements: usize,
    },
    LayerNorm {
        elements: usize,
    },
    Elementwise {
        elements: usize,
    },
    Resize {
        out_elements: usize,
    },
    /// An op the cost model does not cover; rejected by [`count_flops`].
    Unmodeled(String),
}

#[derive(Debug, Clone)]
pub struct ComponentGraph {
    pub name: String,
    pub ops: Vec<GraphOp>,
}

impl ComponentGraph {
    pub fn new(name: impl Into<String>, ops: Vec<GraphOp>) -> Self {
        ComponentGraph {
            name: name.into(),
            ops,
        }
    }
}

/// Sums the per-op formulas; exact integer count.
pub fn count_flops(graph: &ComponentGraph) -> Result<u64> {
    let mut total = 0u64;
    for op in &graph.ops {
        total += match op {
            GraphOp::Matmul { m, k, n } => cost::matmul(*m, *k, *n),
            GraphOp::Conv2d {
                c_out,
                c_in,
                k,
                h_out,
                w_out,
            } => cost::conv2d(*c_out, *c_in, *k, *h_out, *w_out),
            GraphOp::Softmax { elements } => cost::softmax(*elements),
            GraphOp::LayerNorm { elements } => cost::layer_norm(*elements),
            GraphOp::Elementwise { elements } => cost::elementwise(*elements),
            GraphOp::Resize { out_elements } => cost::resize(*out_elements),
            GraphOp::Unmodeled(name) => return Err(Error::UnmodeledOp(name.clone())),
        };
    }
    Ok(total)
}

// ----- graph builders mirroring the executed kernels -----

fn cross_attention_ops(n: usize, m: usize, c: usize, scaled: bool) -> Vec<GraphOp> {
    let mut ops = vec![GraphOp::Matmul { m: n, k: c, n: m }];
    if scaled {
        ops.push(GraphOp::Elementwise { elements: n * m });
    }
    ops.push(GraphOp::Softmax { elements: n * m });
    ops.push(GraphOp::Matmul { m: n, k: m, n: c });
    ops
}

fn mha_ops(n: usize, m: usize, d: usize, heads: usize, projections: bool) -> Vec<GraphOp> {
    let mut ops = Vec::new();
    if projections {
        for rows in [n, m, m] {
            ops.push(GraphOp::Matmul {
                m: rows,
                k: d,
                n: d,
            });
            ops.push(GraphOp::Elementwise { elements: rows * d });
        }
    }
    let hd = d / heads;
    for _ in 0..heads {
        ops.extend(cross_attention_ops(n, m, hd, true));
    }
    if projections {
        ops.push(GraphOp::Matmul { m: n, k: d, n: d });
        ops.push(GraphOp::Elementwise { elements: n * d });
    }
    ops
}

fn ffn_ops(n: usize, d: usize, hidden: usize) -> Vec<GraphOp> {
    vec![
        GraphOp::Matmul {
            m: n,
            k: d,
            n: hidden,
        },
        GraphOp::Elementwise {
            elements: n * hidden,
        }, // bias
        GraphOp::Elementwise {
            elements: n * hidden,
        }, // relu
        GraphOp::Matmul {
            m: n,
            k: hidden,
            n: d,
        },
        GraphOp::Elementwise { elements: n * d }, // bias
    ]
}

fn attn_stage_ops(n: usize, m: usize, d: usize, heads: usize) -> Vec<GraphOp> {
    let mut ops = mha_ops(n, m, d, heads, true);
    ops.push(GraphOp::Elementwise { elements: n * d }); // residual
    ops.push(GraphOp::LayerNorm { elements: n * d });
    ops.extend(ffn_ops(n, d, 4 * d));
    ops.push(GraphOp::Elementwise { elements: n * d }); // residual
    ops.push(GraphOp::LayerNorm { elements: n * d });
    ops
}

/// Cross-attention stage over `n` patches against `m` generated queries.
pub fn attn_stage_graph(n: usize, m: usize, d: usize, heads: usize) -> ComponentGraph {
    ComponentGraph::new("attn_stage", attn_stage_ops(n, m, d, heads))
}

fn conv_stage_ops(d: usize, h: usize, w: usize, fused: bool) -> Vec<GraphOp> {
    let mut ops = Vec::new();
    if fused {
        ops.push(GraphOp::Conv2d {
            c_out: d,
            c_in: d,
            k: 3,
            h_out: h,
            w_out: w,
        });
    } else {
        ops.push(GraphOp::Conv2d {
            c_out: d,
            c_in: d,
            k: 3,
            h_out: h,
            w_out: w,
        });
        ops.push(GraphOp::Conv2d {
            c_out: d,
            c_in: d,
            k: 1,
            h_out: h,
            w_out: w,
        });
        ops.push(GraphOp::Elementwise {
            elements: d * h * w,
        }); // 1x1 branch add
        ops.push(GraphOp::Elementwise {
            elements: d * h * w,
        }); // identity branch add
    }
    ops.push(GraphOp::Elementwise {
        elements: d * h * w,
    }); // residual
    ops.push(GraphOp::LayerNorm {
        elements: d * h * w,
    });
    ops
}

/// Residual RepBlock convolution stage at the working resolution.
pub fn conv_stage_graph(d: usize, h: usize, w: usize, fused: bool) -> ComponentGraph {
    ComponentGraph::new("conv_stage", conv_stage_ops(d, h, w, fused))
}

fn merge_ops(channels: &[usize], height: usize, width: usize, d: usize) -> Vec<GraphOp> {
    let (h, w) = (height / 8, width / 8);
    let mut ops = Vec::new();
    for (i, &c) in channels.iter().enumerate() {
        let div = 1usize << (i + 2);
        let (lh, lw) = (height / div, width / div);
        ops.push(GraphOp::Conv2d {
            c_out: d,
            c_in: c,
            k: 1,
            h_out: lh,
            w_out: lw,
        });
        ops.push(GraphOp::Resize {
            out_elements: d * h * w,
        });
        if i > 0 {
            ops.push(GraphOp::Elementwise {
                elements: d * h * w,
            }); // sum
        }
    }
    ops
}

/// Pyramid 1x1 projection + resize + sum to the working resolution.
pub fn merge_graph(channels: &[usize], height: usize, width: usize, d: usize) -> ComponentGraph {
    ComponentGraph::new("merge", merge_ops(channels, height, width, d))
}

fn mask_head_ops(d: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<GraphOp> {
    vec![
        GraphOp::Conv2d {
            c_out: 1,
            c_in: d,
            k: 1,
            h_out: h,
            w_out: w,
        },
        GraphOp::Resize {
            out_elements: out_h * out_w,
        },
        GraphOp::Elementwise {
            elements: out_h * out_w,
        }, // logistic
    ]
}

pub fn mask_head_graph(d: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> ComponentGraph {
    ComponentGraph::new("mask_head", mask_head_ops(d, h, w, out_h, out_w))
}

fn pqg_ops(cfg: &PqgConfig) -> Vec<GraphOp> {
    let s = cfg.num_queries + 1;
    let d = cfg.embed_dim;
    let mut ops = Vec::new();
    for _ in 0..cfg.num_layers {
        ops.push(GraphOp::LayerNorm { elements: s * d });
        ops.extend(mha_ops(s, s, d, cfg.num_heads, true));
        ops.push(GraphOp::Elementwise { elements: s * d }); // residual
        ops.push(GraphOp::LayerNorm { elements: s * d });
        ops.extend(ffn_ops(s, d, cfg.ffn_hidden()));
        ops.push(GraphOp::Elementwise { elements: s * d }); // residual
    }
    ops.push(GraphOp::LayerNorm { elements: s * d }); // final norm
    ops
}

/// Prompt query generator forward pass.
pub fn pqg_graph(cfg: &PqgConfig) -> ComponentGraph {
    ComponentGraph::new("pqg", pqg_ops(cfg))
}

fn decoder_stage_ops(
    layout: &DecoderLayout,
    d: usize,
    heads: usize,
    h: usize,
    w: usize,
    num_queries: usize,
) -> Vec<GraphOp> {
    let n = h * w;
    let mut ops = Vec::new();
    for stage in layout.stages() {
        match stage {
            Stage::Conv => ops.extend(conv_stage_ops(d, h, w, true)),
            Stage::Transformer => ops.extend(attn_stage_ops(n, num_queries, d, heads)),
        }
    }
    ops
}

/// Full decoder forward: pyramid merge plus the stage pipeline.
#[allow(clippy::too_many_arguments)]
pub fn decoder_graph(
    layout: &DecoderLayout,
    d: usize,
    heads: usize,
    channels: &[usize],
    height: usize,
    width: usize,
    num_queries: usize,
) -> ComponentGraph {
    let mut ops = merge_ops(channels, height, width, d);
    ops.extend(decoder_stage_ops(
        layout,
        d,
        heads,
        height / 8,
        width / 8,
        num_queries,
    ));
    ComponentGraph::new(format!("decoder[{layout}]"), ops)
}

/// Stage pipeline only (no merge), for per-stage reporting.
pub fn decoder_stages_graph(
    layout: &DecoderLayout,
    d: usize,
    heads: usize,
    h: usize,
    w: usize,
    num_queries: usize,
) -> ComponentGraph {
    ComponentGraph::new(
        format!("stages[{layout}]"),
        decoder_stage_ops(layout, d, heads, h, w, num_queries),
    )
}

// ----- latency harness -----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub p25_ms: f64,
    pub p75_ms: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        LatencyStats {
            median_ms: quantile(&samples, 0.5),
            p25_ms: quantile(&samples, 0.25),
            p75_ms: quantile(&samples, 0.75),
        }
    }
}

/// Times `f` over `runs` samples after `warmup` discarded calls; the result
/// of every call is passed through `black_box` so the measured work cannot
/// be elided. Calls faster than 1 ms are repeated in an inner loop until a
/// sample spans at least 10 ms, and the per-call time is reported.
pub fn bench_latency<R>(
    mut f: impl FnMut() -> R,
    warmup: usize,
    runs: usize,
) -> Result<LatencyStats> {
    if runs < 3 {
        return Err(Error::InvalidArgument(format!(
            "runs must be >= 3, got {runs}"
        )));
    }
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let probe_start = Instant::now();
    std::hint::black_box(f());
    let probe = probe_start.elapsed().as_secs_f64();
    let reps = if probe < 1e-3 {
        ((10e-3 / probe.max(1e-9)).ceil() as usize).max(1)
    } else {
        1
    };
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(f());
        }
        samples.push(start.elapsed().as_secs_f64() * 1e3 / reps as f64);
    }
    Ok(LatencyStats::from_samples(samples))
}

// ----- reports -----

#[derive(Debug, Clone)]
pub struct ProfileEntry {
    pub component: String,
    pub flops: u64,
    pub params: u64,
    pub wall: LatencyStats,
    /// Share of the total median wall time, in percent.
    pub percent: f64,
}

#[derive(Debug, Clone)]
pub struct ProfileReport {
    pub entries: Vec<ProfileEntry>,
}

impl ProfileReport {
    /// Builds a report from per-component samples; percentages are computed
    /// from the medians and sum to 100 up to rounding.
    pub fn from_components(components: Vec<(String, u64, u64, Vec<f64>)>) -> Self {
        let entries: Vec<(String, u64, u64, LatencyStats)> = components
            .into_iter()
            .map(|(name, flops, params, samples)| {
                (name, flops, params, LatencyStats::from_samples(samples))
            })
            .collect();
        let total: f64 = entries.iter().map(|e| e.3.median_ms).sum();
        let entries = entries
            .into_iter()
            .map(|(component, flops, params, wall)| ProfileEntry {
                component,
                flops,
                params,
                percent: if total > 0.0 {
                    100.0 * wall.median_ms / total
                } else {
                    0.0
                },
                wall,
            })
            .collect();
        ProfileReport { entries }
    }

    pub fn total_flops(&self) -> u64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("component,flops,params,wall_ms_median,wall_ms_p25,wall_ms_p75,percent\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.2}\n",
                e.component,
                e.flops,
                e.params,
                e.wall.median_ms,
                e.wall.p25_ms,
                e.wall.p75_ms,
                e.percent
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<16} {:>14} {:>10} {:>12} {:>12} {:>12} {:>8}\n",
            "component", "flops", "params", "median_ms", "p25_ms", "p75_ms", "percent"
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:<16} {:>14} {:>10} {:>12.4} {:>12.4} {:>12.4} {:>7.2}%\n",
                e.component,
                e.flops,
                e.params,
                e.wall.median_ms,
                e.wall.p25_ms,
                e.wall.p75_ms,
                e.percent
            ));
        }
        out
    }
}

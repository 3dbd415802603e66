//! Command-line front end: dissipation demo, layout benchmarks and ablation,
//! attention-map export, loss gradient checking, and mask evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use avseg::attention::{self, cross_attention};
use avseg::decoder::{DecoderLayout, Stage};
use avseg::io;
use avseg::loss::{dice_grad, dice_loss, iou_grad, iou_loss, MaskPair, DEFAULT_EPS};
use avseg::metrics::{binarize, f_score, jaccard, DEFAULT_BETA_SQ};
use avseg::model::{self, ModelConfig, ModelParams};
use avseg::pqg::{PqgConfig, PqgState};
use avseg::rng::Rng;
use avseg::tensor::Tensor;

#[derive(Parser)]
#[command(
    name = "avseg",
    about = "Audio-visual segmentation decoder experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Show that single-token cross-attention collapses to value replication,
    /// and that generated queries restore informative attention.
    DissipationDemo {
        /// Number of query rows.
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Embedding width.
        #[arg(long, default_value_t = 8)]
        c: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Profile one decoder layout and write the report as CSV.
    Bench {
        /// Stage layout, e.g. C-T-T or T-T-T.
        #[arg(long)]
        layout: DecoderLayout,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Profile all four stage layouts and write per-layout reports plus a
    /// comparison summary.
    AblateLayouts {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-stage, per-query attention probability maps as PGM images.
    AttnMaps {
        /// Number of transformer stages in the inspected layout.
        #[arg(long, default_value_t = 2)]
        stage_count: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic loss gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score predicted masks against ground truth, matching files by name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ModelConfig> {
    match path {
        Some(p) => Ok(model::load_config(p).with_context(|| format!("reading {}", p.display()))?),
        None => Ok(ModelConfig::default()),
    }
}

fn dissipation_demo(n: usize, c: usize, seed: u64) -> Result<()> {
    if n < 2 || c < 1 {
        bail!("need n >= 2 and c >= 1");
    }
    let mut rng = Rng::new(seed);
    let queries = rng.tensor_normal(&[n, c]);
    let kv = rng.tensor_normal(&[1, c]);
    let res = cross_attention(&queries, &kv, &kv, true)?;

    println!("single-token attention weights ({n}x1):");
    for i in 0..n {
        println!("  {:.6}", res.weights.data()[i]);
    }
    let index = attention::dissipation_index(&res)?;
    println!("dissipation index: {index:.6}");

    let weights_unit = res.weights.data().iter().all(|&w| w == 1.0);
    let replicated = (0..n).all(|i| res.output.row(i) == kv.row(0));
    if !(weights_unit && replicated && index == 0.0) {
        bail!("single-token attention did not collapse to value replication");
    }
    println!("every output row is a bitwise copy of the value vector");

    // repaired counterpart: queries generated from the same audio token
    let heads = [8usize, 4, 2, 1]
        .into_iter()
        .find(|h| c.is_multiple_of(*h))
        .expect("1 divides c");
    let cfg = PqgConfig {
        num_queries: 16,
        embed_dim: c,
        num_layers: 3,
        num_heads: heads,
    };
    let state = PqgState::init(cfg, &mut rng)?;
    let report = avseg::pqg::pqg_breaks_dissipation(&kv, &state, &queries)?;
    println!("with generated queries as key/value:");
    println!("dissipation index: {:.6}", report.index);
    println!("dissipated: {}", report.dissipated);
    if report.dissipated {
        bail!("generated queries failed to break dissipation");
    }
    Ok(())
}

fn bench(
    layout: DecoderLayout,
    config: &Option<PathBuf>,
    runs: usize,
    warmup: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.layout = layout;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let params = ModelParams::init(&cfg)?;
    let scene = model::synth_scene(&cfg, 0)?;
    let report = model::runtime_breakdown(&cfg, &params, &scene, runs, warmup)?;
    fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", report.to_text());
    println!("total flops: {}", report.total_flops());
    Ok(())
}

fn ablate_layouts(config: &Option<PathBuf>, runs: usize, warmup: usize, out: &Path) -> Result<()> {
    let base = load_config(config)?;
    fs::create_dir_all(out)?;
    let mut totals = Vec::new();
    for layout in DecoderLayout::ablation_set() {
        let mut cfg = base.clone();
        cfg.layout = layout.clone();
        let params = ModelParams::init(&cfg)?;
        let scene = model::synth_scene(&cfg, 0)?;
        let report = model::runtime_breakdown(&cfg, &params, &scene, runs, warmup)?;
        let path = out.join(format!("report_{layout}.csv"));
        fs::write(&path, report.to_csv())?;
        let median: f64 = report.entries.iter().map(|e| e.wall.median_ms).sum();
        totals.push((layout, report.total_flops(), params.param_count(), median));
    }
    let rows: Vec<String> = totals
        .iter()
        .map(|(l, f, p, ms)| format!("{l},{f},{p},{ms:.6}"))
        .collect();
    io::save_csv(
        &out.join("summary.csv"),
        "layout,total_flops,params,total_wall_ms_median",
        &rows,
    )?;
    println!("layout       total_flops       params   wall_ms");
    for (l, f, p, ms) in &totals {
        println!("{l:<12} {f:>11} {p:>12} {ms:>9.3}");
    }
    let flops_of = |name: &str| {
        totals
            .iter()
            .find(|(l, ..)| l.to_string() == name)
            .map(|(_, f, ..)| *f)
            .expect("layout in ablation set")
    };
    let (ctt, ttt) = (flops_of("C-T-T"), flops_of("T-T-T"));
    println!(
        "flops(C-T-T) {} flops(T-T-T)  [{ctt} vs {ttt}]",
        if ctt < ttt { "<" } else { ">=" }
    );
    if ctt >= ttt {
        bail!("expected the convolution-leading layout to cost fewer flops");
    }
    Ok(())
}

fn attn_maps(stage_count: usize, config: &Option<PathBuf>, out: &Path) -> Result<()> {
    if stage_count == 0 {
        bail!("stage count must be positive");
    }
    let mut cfg = load_config(config)?;
    cfg.layout = DecoderLayout(vec![Stage::Transformer; stage_count]);
    let params = ModelParams::init(&cfg)?;
    let scene = model::synth_scene(&cfg, 0)?;
    let report = model::model_forward(&scene, &cfg, &params)?;
    let (h, w) = cfg.working_extents();
    fs::create_dir_all(out)?;
    let mut written = 0usize;
    for (s, stage) in report.stage_attention.iter().enumerate() {
        for q in 0..cfg.num_queries {
            let map = Tensor::new(
                vec![h, w],
                (0..h * w).map(|p| stage.mean_weights.at2(p, q)).collect(),
            )?;
            io::save_pgm(&out.join(format!("stage{}_query{q}.pgm", s + 1)), &map)?;
            written += 1;
        }
    }
    println!(
        "wrote {written} maps ({} stages x {} queries, {h}x{w} pixels) to {}",
        report.stage_attention.len(),
        cfg.num_queries,
        out.display()
    );
    Ok(())
}

fn gradcheck(cases: usize, seed: u64) -> Result<()> {
    if cases == 0 {
        bail!("need at least one case");
    }
    let mut rng = Rng::new(seed);
    let step = 1e-6;
    let mut max_rel = 0.0_f64;
    for _ in 0..cases {
        let pred = rng.tensor_uniform(&[8, 8], 1e-3, 1.0 - 1e-3);
        let gt = Tensor::new(
            vec![8, 8],
            (0..64)
                .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 })
                .collect(),
        )?;
        let pair = MaskPair::new(pred.clone(), gt.clone())?;
        for (loss, grad) in [
            (
                dice_loss as fn(&MaskPair, f64) -> f64,
                dice_grad(&pair, DEFAULT_EPS),
            ),
            (
                iou_loss as fn(&MaskPair, f64) -> f64,
                iou_grad(&pair, DEFAULT_EPS),
            ),
        ] {
            for i in 0..pred.len() {
                let bump = |delta: f64| -> Result<f64> {
                    let mut data = pred.data().to_vec();
                    data[i] += delta;
                    let p = MaskPair::new(Tensor::new(vec![8, 8], data)?, gt.clone())?;
                    Ok(loss(&p, DEFAULT_EPS))
                };
                let fd = (bump(step)? - bump(-step)?) / (2.0 * step);
                let a = grad.data()[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
    }
    println!("max relative error over {cases} cases: {max_rel:.3e}");
    if max_rel >= 1e-5 {
        bail!("analytic gradients disagree with finite differences");
    }
    Ok(())
}

fn eval(pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<()> {
    let mut gt_files = BTreeMap::new();
    for entry in fs::read_dir(gt_dir).with_context(|| format!("reading {}", gt_dir.display()))? {
        let path = entry?.path();
        if path.is_file() {
            gt_files.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                path,
            );
        }
    }
    let mut rows = Vec::new();
    let mut preds = BTreeMap::new();
    for entry in
        fs::read_dir(pred_dir).with_context(|| format!("reading {}", pred_dir.display()))?
    {
        let path = entry?.path();
        if path.is_file() {
            preds.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                path,
            );
        }
    }
    if preds.is_empty() {
        bail!("no prediction files in {}", pred_dir.display());
    }
    for (name, pred_path) in &preds {
        let gt_path = gt_files
            .get(name)
            .with_context(|| format!("no ground truth for '{name}'"))?;
        let pred = binarize(&io::load_tensor(pred_path)?);
        let gt = io::load_tensor(gt_path)?;
        let sample_id = name.strip_suffix(".txt").unwrap_or(name);
        rows.push(format!(
            "{sample_id},{:.6},{:.6}",
            jaccard(&pred, &gt)?,
            f_score(&pred, &gt, DEFAULT_BETA_SQ)?
        ));
    }
    io::save_csv(out, "sample_id,jaccard,f_score", &rows)?;
    println!("scored {} mask pairs -> {}", rows.len(), out.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::DissipationDemo { n, c, seed } => dissipation_demo(*n, *c, *seed),
        Command::Bench {
            layout,
            config,
            runs,
            warmup,
            seed,
            out,
        } => bench(layout.clone(), config, *runs, *warmup, *seed, out),
        Command::AblateLayouts {
            config,
            runs,
            warmup,
            out,
        } => ablate_layouts(config, *runs, *warmup, out),
        Command::AttnMaps {
            stage_count,
            config,
            out,
        } => attn_maps(*stage_count, config, out),
        Command::Gradcheck { cases, seed } => gradcheck(*cases, *seed),
        Command::Eval { pred, gt, out } => eval(pred, gt, out),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

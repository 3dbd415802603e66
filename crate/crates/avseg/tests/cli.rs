//! Golden invocation tests for the command-line interface: success paths on
//! a small configuration and the nonzero-exit contract on bad input.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_avseg"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    fs::write(
        &path,
        "# fast desk-scale setup\nembed_dim = 16\nnum_queries = 4\npqg_layers = 1\nnum_heads = 4\nheight = 64\nwidth = 64\nchannels = 4, 8, 8, 16\n",
    )
    .unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn dissipation_demo_prints_unit_weights_and_exits_zero() {
    let out = bin()
        .args(["dissipation-demo", "--n", "4", "--c", "8", "--seed", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("dissipation index: 0.000000"), "{text}");
    assert_eq!(text.matches("1.000000").count(), 4, "{text}");
    assert!(text.contains("dissipated: false"), "{text}");
}

#[test]
fn unknown_flag_exits_nonzero() {
    let out = bin()
        .args(["dissipation-demo", "--bogus"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn unknown_subcommand_exits_nonzero() {
    let out = bin().arg("train").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn bench_writes_csv_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let csv = dir.path().join("report.csv");
    let out = bin()
        .args([
            "bench", "--layout", "C-T-T", "--runs", "3", "--warmup", "0", "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(
        text.starts_with("component,flops,params,wall_ms_median,wall_ms_p25,wall_ms_p75,percent")
    );
    assert_eq!(text.lines().count(), 7); // header + 6 components
    assert!(text.contains("stage1_conv"));
}

#[test]
fn bench_rejects_bad_layout() {
    let out = bin()
        .args(["bench", "--layout", "C-X-T", "--out", "/tmp/never.csv"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_with_unknown_key_is_rejected_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "embed_dim = 16\nbogus_key = 3\n").unwrap();
    let out = bin()
        .args(["bench", "--layout", "C-T-T", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("never.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("line 2") && err.contains("bogus_key"), "{err}");
}

#[test]
fn ablate_layouts_writes_reports_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("ablation");
    let out = bin()
        .args(["ablate-layouts", "--runs", "3", "--warmup", "0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    for layout in ["T-T-T", "C-T-T", "T-C-T", "T-T-C"] {
        assert!(out_dir.join(format!("report_{layout}.csv")).is_file());
    }
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("layout,total_flops,params,total_wall_ms_median"));
    assert_eq!(summary.lines().count(), 5);
    assert!(stdout(&out).contains("flops(C-T-T) < flops(T-T-T)"));
}

#[test]
fn attn_maps_exports_pgm_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("maps");
    let out = bin()
        .args(["attn-maps", "--stage-count", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let mut files: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files.len(), 8); // 2 stages x 4 queries
    assert!(files.contains(&"stage1_query0.pgm".to_string()));
    let bytes = fs::read(out_dir.join("stage2_query3.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n8 8\n255\n")); // 64/8 = 8 pixel working grid
    assert_eq!(bytes.len(), 11 + 64);
}

#[test]
fn gradcheck_exits_zero_and_reports_error() {
    let out = bin()
        .args(["gradcheck", "--cases", "3", "--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).contains("max relative error"));
}

#[test]
fn eval_scores_matching_files() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred");
    let gt = dir.path().join("gt");
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    // identical soft prediction and binary truth -> perfect scores
    for name in ["a.txt", "b.txt"] {
        fs::write(pred.join(name), "2 2\n0.9 0.1 0.8 0.2\n").unwrap();
        fs::write(gt.join(name), "2 2\n1 0 1 0\n").unwrap();
    }
    let csv = dir.path().join("metrics.csv");
    let out = bin()
        .args(["eval", "--pred"])
        .arg(&pred)
        .arg("--gt")
        .arg(&gt)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample_id,jaccard,f_score");
    assert_eq!(lines[1], "a,1.000000,1.000000");
    assert_eq!(lines[2], "b,1.000000,1.000000");
}

#[test]
fn eval_fails_on_missing_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred");
    let gt = dir.path().join("gt");
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    fs::write(pred.join("only.txt"), "1 1\n1\n").unwrap();
    let out = bin()
        .args(["eval", "--pred"])
        .arg(&pred)
        .arg("--gt")
        .arg(&gt)
        .arg("--out")
        .arg(dir.path().join("m.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("only.txt"), "{}", stderr(&out));
}

#[test]
fn eval_fails_on_unreadable_directory() {
    let out = bin()
        .args([
            "eval",
            "--pred",
            "/nonexistent/preds",
            "--gt",
            "/nonexistent/gts",
            "--out",
            "/tmp/never_metrics.csv",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

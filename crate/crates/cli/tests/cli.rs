use std::path::Path;
use std::process::{Command, Output};

use cdmd::frames_io::{save_frames, FrameSequence};
use cdmd::Mat;
use serde_json::Value;
use tempfile::TempDir;

fn cdmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdmd")).args(args).env_remove("CDMD_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cdmd(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Default synthetic block scene written to `dir`.
fn block_scene(dir: &Path) {
    ok(&["synth", "--out", path(dir), "--seed", "5"]);
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let help = ok(&["mask", "--help"]);
    for (flag, default) in [
        ("--format", Some("pgm_dir")),
        ("--method", Some("compressed")),
        ("--sensing", Some("sparse")),
        ("--p", Some("1000")),
        ("--sparsity-s", Some("auto")),
        ("--rank", Some("auto")),
        ("--K", Some("10")),
        ("--amplitude", Some("full")),
        ("--omega-tol", Some("0.01")),
        ("--tau", Some("25")),
        ("--postfilter", Some("none")),
        ("--batch", Some("200")),
        ("--seed", Some("0")),
        ("--threads", Some("auto")),
        ("--input", None),
        ("--out", None),
        ("--truth", None),
        ("--sweep", None),
    ] {
        let line = help.lines().find(|l| l.trim_start().starts_with(flag)).unwrap_or_else(|| panic!("{flag} missing"));
        if let Some(d) = default {
            let block: String = help.split(line).nth(1).unwrap().lines().take(3).collect::<Vec<_>>().join(" ");
            assert!(
                line.contains(&format!("[default: {d}]")) || block.contains(&format!("[default: {d}]")),
                "{flag} lacks default {d}"
            );
        }
    }
    assert!(help.contains("CDMD_THREADS"));
    for sub in ["decompose", "background", "mask", "eval", "bench", "synth"] {
        assert!(ok(&["--help"]).contains(sub));
    }
}

#[test]
fn version_and_help_exit_zero() {
    assert_eq!(cdmd(&["--version"]).status.code(), Some(0));
    assert_eq!(cdmd(&["bench", "--help"]).status.code(), Some(0));
}

#[test]
fn static_video_has_one_unit_mode() {
    let dir = TempDir::new().unwrap();
    ok(&["synth", "--out", path(dir.path()), "--block", "0", "--noise", "0", "--frames", "20"]);
    let input = dir.path().join("frames.raw");
    let report = json(&["decompose", "--input", path(&input), "--format", "raw", "--method", "exact"]);
    assert_eq!(report["k"], 1);
    let l = &report["lambdas"][0];
    assert!((l[0].as_f64().unwrap() - 1.0).abs() < 1e-10 && l[1].as_f64().unwrap().abs() < 1e-10);
}

#[test]
fn decompose_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    block_scene(dir.path());
    let input = dir.path().join("frames.raw");
    let args = ["decompose", "--input", path(&input), "--format", "raw", "--sensing", "spixel", "--p", "1000", "--seed", "7"];
    let a = without_timings(json(&args));
    let b = without_timings(json(&args));
    assert_eq!(a, b);
    let mut other = args;
    other[10] = "8";
    assert_ne!(a, without_timings(json(&other)));
}

#[test]
fn planted_rank_three_is_found() {
    let dir = TempDir::new().unwrap();
    ok(&["synth", "--out", path(dir.path()), "--planted", "1,0.98@0.3,0.98@-0.3", "--n", "500", "--frames", "50"]);
    let input = dir.path().join("frames.raw");
    for method in ["exact", "compressed"] {
        let report = json(&["decompose", "--input", path(&input), "--format", "raw", "--method", method, "--rank", "auto"]);
        assert_eq!(report["k"], 3, "{method}");
    }
    let out = dir.path().join("modes");
    ok(&["decompose", "--input", path(&input), "--format", "raw", "--dump-modes", "--out", path(&out)]);
    assert!(out.join("modes_re.raw").is_file() && out.join("modes_im.raw").is_file());
    assert!(out.join("model_report.json").is_file());
}

#[test]
fn mask_sweep_and_eval() {
    let dir = TempDir::new().unwrap();
    block_scene(dir.path());
    let input = dir.path().join("frames.raw");
    let truth = dir.path().join("truth");
    let out = dir.path().join("run");
    let report = json(&[
        "mask",
        "--input",
        path(&input),
        "--format",
        "raw",
        "--truth",
        path(&truth),
        "--sweep",
        "10,15,20,25,30,40,50",
        "--out",
        path(&out),
    ]);
    let sweep = report["metrics"]["threshold_sweep"].as_array().unwrap();
    let best = sweep.iter().map(|p| p[1].as_f64().unwrap()).fold(0.0, f64::max);
    assert!(best >= 0.9, "best swept F {best}");
    assert!(out.join("run_report.json").is_file() && out.join("background_000.pgm").is_file());

    let masks = out.join("masks");
    let same = json(&["eval", "--mask", path(&masks), "--truth", path(&masks)]);
    assert_eq!(same["f_measure"], 1.0);
    let forward = json(&["eval", "--mask", path(&masks), "--truth", path(&truth)]);
    let backward = json(&["eval", "--mask", path(&truth), "--truth", path(&masks)]);
    assert_eq!(forward["precision"], backward["recall"]);
    assert_eq!(forward["recall"], backward["precision"]);
    assert_eq!(forward["fp"], backward["fn"]);
}

#[test]
fn background_writes_one_frame_per_batch() {
    let dir = TempDir::new().unwrap();
    block_scene(dir.path());
    let input = dir.path().join("frames.raw");
    let out = dir.path().join("bg");
    let report = json(&["background", "--input", path(&input), "--format", "raw", "--batch", "100", "--threads", "2", "--out", path(&out)]);
    assert_eq!(report["batches"].as_array().unwrap().len(), 2);
    assert!(out.join("background_000.pgm").is_file() && out.join("background_001.pgm").is_file());
}

#[test]
fn bench_reports_consistent_fps() {
    let out = json(&["bench", "--resolutions", "32x24", "--frames", "12", "--methods", "exact,compressed_sparse", "--p", "100", "--json"]);
    for r in out.as_array().unwrap() {
        let fps = r["fps"].as_f64().unwrap();
        let total = r["total_ms"].as_f64().unwrap();
        assert!((fps - 12.0 / (total / 1e3)).abs() <= 1e-9 * fps);
        let stages: f64 = r["stage_times_ms"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
        assert!(stages <= total + 1e-9);
    }
    assert!(ok(&["bench", "--resolutions", "32x24", "--frames", "12", "--methods", "exact", "--p", "100"]).contains("exact"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(cdmd(&["decompose", "--bogus"]).status.code(), Some(1));
    assert_eq!(cdmd(&["decompose", "--input", "x", "--K", "zero"]).status.code(), Some(1));
    assert_eq!(cdmd(&["bench", "--resolutions", "64by48"]).status.code(), Some(1));
    let missing = dir.path().join("missing");
    assert_eq!(cdmd(&["decompose", "--input", path(&missing)]).status.code(), Some(2));

    let zeros = dir.path().join("zeros.raw");
    save_frames(&FrameSequence::new(Mat::zeros(12, 6), 4, 3, 1.0).unwrap(), &zeros).unwrap();
    let out = cdmd(&["decompose", "--input", path(&zeros), "--format", "raw", "--method", "exact"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

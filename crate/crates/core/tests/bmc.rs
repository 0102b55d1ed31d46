//! Average F-measure on the BMC real videos. Skipped unless `CDMD_BMC_DIR`
//! points at a directory holding one folder per video, each with `input/`
//! (grayscale PGM frames) and `truth/` (PGM foreground masks).

use std::path::PathBuf;

use cdmd::frames_io::{load_frames, load_mask, FrameFormat};
use cdmd::pipeline::{run_pipeline, PipelineConfig};

const REFERENCE_F: f64 = 0.648;

#[test]
fn bmc_average_f_measure() {
    let Some(root) = std::env::var_os("CDMD_BMC_DIR").map(PathBuf::from) else {
        eprintln!("CDMD_BMC_DIR not set; skipping");
        return;
    };
    if !root.is_dir() {
        eprintln!("{} is not a directory; skipping", root.display());
        return;
    }
    let mut videos: Vec<PathBuf> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("input").is_dir() && p.join("truth").is_dir())
        .collect();
    videos.sort();
    assert!(!videos.is_empty(), "no videos under {}", root.display());
    let config = PipelineConfig::default();
    let mut scores = Vec::new();
    for video in &videos {
        let frames = load_frames(&video.join("input"), FrameFormat::PgmDir).unwrap();
        let (truth, _, _) = load_mask(&video.join("truth")).unwrap();
        let out = run_pipeline(&frames, &config, Some(&truth)).unwrap();
        let f = out.eval.unwrap().f_measure;
        eprintln!("{}: F = {f:.3}", video.display());
        scores.push(f);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((mean - REFERENCE_F).abs() <= 0.05, "average F {mean:.3}");
}

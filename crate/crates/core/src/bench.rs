//! Runtime harness: exact versus compressed DMD on synthetic scenes, with a
//! per-stage breakdown.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dmd::{dmd_compressed, dmd_exact, DmdModel, DmdOptions};
use crate::error::{CdmdError, Result};
use crate::frames_io::{split_snapshots, FrameSequence};
use crate::modeselect::{select_background, ModeSource};
use crate::pipeline::{foreground_mask, Postfilter};
use crate::sensing::{make_sensing, SensingKind};
use crate::synth::{make_scene, MovingObject};

/// Resolutions swept by default: 320x240, 720x480, 1280x720.
pub const DEFAULT_RESOLUTIONS: [(usize, usize); 3] = [(320, 240), (720, 480), (1280, 720)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchMethod {
    Exact,
    Compressed(SensingKind),
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchMethod::Exact => f.write_str("exact"),
            BenchMethod::Compressed(k) => write!(f, "compressed_{k}"),
        }
    }
}

impl FromStr for BenchMethod {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(BenchMethod::Exact);
        }
        let kind = s.strip_prefix("compressed_").unwrap_or(s);
        kind.parse().map(BenchMethod::Compressed)
    }
}

impl Serialize for BenchMethod {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BenchMethod {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub resolutions: Vec<(usize, usize)>,
    pub n_frames: usize,
    pub methods: Vec<BenchMethod>,
    pub p: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub sparsity: usize,
    pub tau: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
            n_frames: 200,
            methods: vec![
                BenchMethod::Exact,
                BenchMethod::Compressed(SensingKind::Sparse),
                BenchMethod::Compressed(SensingKind::SinglePixel),
                BenchMethod::Compressed(SensingKind::Gaussian),
                BenchMethod::Compressed(SensingKind::Srft),
            ],
            p: 1000,
            repetitions: 3,
            seed: 0,
            sparsity: 10,
            tau: 25.0,
        }
    }
}

/// Timings of one method at one resolution. Stage times come from the
/// repetition with the median wall time, so they sum to at most `total_ms`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub resolution: (usize, usize),
    pub m: usize,
    pub method: BenchMethod,
    pub p: usize,
    pub k: usize,
    pub stage_times_ms: BTreeMap<String, f64>,
    /// Decomposition stages only (compress through amplitudes).
    pub decomposition_ms: f64,
    /// Median wall time including background selection and the mask.
    pub total_ms: f64,
    /// Median decomposition time over repetitions.
    pub decomposition_median_ms: f64,
    /// Median compress-stage time over repetitions.
    pub compress_median_ms: f64,
    /// Frames per wall second, mask included.
    pub fps: f64,
    pub repetitions: usize,
}

struct Run {
    stages: BTreeMap<String, f64>,
    decomposition: f64,
    wall: f64,
    k: usize,
}

/// Benchmark scene: textured background with one block crossing the frame.
pub fn bench_scene(width: usize, height: usize, m: usize, seed: u64) -> Result<FrameSequence> {
    let side = (width.min(height) / 8).max(1);
    let object = MovingObject {
        width: side,
        height: side,
        x0: 0.0,
        y0: ((height - side) / 2) as f64,
        vx: (width - side) as f64 / m as f64,
        vy: 0.0,
        intensity: 250.0,
        start_frame: 0,
        end_frame: m,
    };
    Ok(make_scene(width, height, m, &[object], 2.0, seed)?.frames)
}

fn decompose(frames: &FrameSequence, method: BenchMethod, p: usize, seed: u64) -> Result<(DmdModel, f64)> {
    let pair = split_snapshots(frames)?;
    let options = DmdOptions::default();
    match method {
        BenchMethod::Exact => Ok((dmd_exact(&pair, &options)?, 0.0)),
        BenchMethod::Compressed(kind) => {
            let start = Instant::now();
            let c = make_sensing(kind, p.min(frames.n_pixels()), frames.n_pixels(), seed, None)?;
            let build_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((dmd_compressed(&pair, &c, &options)?, build_ms))
        }
    }
}

fn run_once(frames: &FrameSequence, method: BenchMethod, config: &BenchConfig) -> Result<Run> {
    let start = Instant::now();
    let (model, build_ms) = decompose(frames, method, config.p, config.seed)?;
    let t = model.timings;
    let omp_start = Instant::now();
    let bg = select_background(&model, config.sparsity.min(model.rank()), ModeSource::FullModes, frames)?;
    let omp = omp_start.elapsed().as_secs_f64() * 1e3;
    let mask_start = Instant::now();
    let mask = foreground_mask(frames, &bg, config.tau, Postfilter::None)?;
    let mask_ms = mask_start.elapsed().as_secs_f64() * 1e3;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    std::hint::black_box(mask.count());
    let mut stages = BTreeMap::new();
    stages.insert("compress".to_string(), t.compress + build_ms);
    stages.insert("svd".to_string(), t.svd);
    stages.insert("eig".to_string(), t.eig);
    stages.insert("modes".to_string(), t.modes);
    stages.insert("amplitudes".to_string(), t.amplitudes);
    stages.insert("omp".to_string(), omp);
    stages.insert("mask".to_string(), mask_ms);
    Ok(Run { decomposition: t.total() + build_ms, stages, wall, k: model.rank() })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times `method` on `frames` for `config.repetitions` runs, single-threaded.
pub fn bench_method(frames: &FrameSequence, method: BenchMethod, config: &BenchConfig) -> Result<BenchResult> {
    if config.repetitions == 0 {
        return Err(CdmdError::InvalidArgument("need at least one repetition".into()));
    }
    let previous = faer::get_global_parallelism();
    faer::set_global_parallelism(faer::Par::Seq);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CdmdError::InvalidArgument(format!("thread pool: {e}")))?;
    let runs: Result<Vec<Run>> = pool.install(|| (0..config.repetitions).map(|_| run_once(frames, method, config)).collect());
    faer::set_global_parallelism(previous);
    let mut runs = runs?;

    let mut decomposition: Vec<f64> = runs.iter().map(|r| r.decomposition).collect();
    let mut compress: Vec<f64> = runs.iter().map(|r| r.stages["compress"]).collect();
    runs.sort_by(|a, b| a.wall.total_cmp(&b.wall));
    let mid = &runs[(runs.len() - 1) / 2];
    let total_ms = mid.wall;
    Ok(BenchResult {
        resolution: (frames.width(), frames.height()),
        m: frames.n_frames(),
        method,
        p: config.p.min(frames.n_pixels()),
        k: mid.k,
        stage_times_ms: mid.stages.clone(),
        decomposition_ms: mid.decomposition,
        total_ms,
        decomposition_median_ms: median(&mut decomposition),
        compress_median_ms: median(&mut compress),
        fps: frames.n_frames() as f64 / (total_ms / 1e3),
        repetitions: config.repetitions,
    })
}

/// Every resolution x method combination of `config`.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchResult>> {
    let mut out = Vec::new();
    for &(w, h) in &config.resolutions {
        let frames = bench_scene(w, h, config.n_frames, config.seed)?;
        for &method in &config.methods {
            log::info!("bench {w}x{h} {method}");
            out.push(bench_method(&frames, method, config)?);
        }
    }
    Ok(out)
}

/// Aligned plain-text table of results.
pub fn format_table(results: &[BenchResult]) -> String {
    let mut s = format!(
        "{:<11} {:<20} {:>4} {:>11} {:>11} {:>11} {:>11} {:>8}\n",
        "resolution", "method", "k", "compress_ms", "svd_ms", "decomp_ms", "total_ms", "fps"
    );
    for r in results {
        s.push_str(&format!(
            "{:<11} {:<20} {:>4} {:>11.1} {:>11.1} {:>11.1} {:>11.1} {:>8.2}\n",
            format!("{}x{}", r.resolution.0, r.resolution.1),
            r.method.to_string(),
            r.k,
            r.stage_times_ms["compress"],
            r.stage_times_ms["svd"],
            r.decomposition_ms,
            r.total_ms,
            r.fps
        ));
    }
    s
}

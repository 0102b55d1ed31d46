//! Batch background modeling: per batch, (compressed) DMD, sparse background
//! selection and thresholded foreground masks, with optional evaluation
//! against ground truth.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use faer::c64;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dmd::{
    continuous_eigs, dmd_compressed, dmd_exact, split_low_rank_sparse, AmplitudeMode, DmdModel, DmdOptions,
    RankSelection,
};
use crate::error::{CdmdError, Result};
use crate::frames_io::{batch, split_snapshots, FrameSequence};
use crate::modeselect::{cross_validate_sparsity, select_background, BackgroundModel, ModeSource};
use crate::sensing::{make_sensing, SensingKind, SensingParams};

/// Binary foreground mask, `n_pixels x n_frames`, stored frame after frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundMask {
    bits: Vec<u8>,
    n_pixels: usize,
    n_frames: usize,
    tau: f64,
}

impl ForegroundMask {
    /// Wraps 0/1 bits (frame-contiguous). `tau` records the threshold that
    /// produced the mask, 0 for ground truth.
    pub fn from_bits(bits: Vec<u8>, n_pixels: usize, n_frames: usize, tau: f64) -> Result<Self> {
        if bits.len() != n_pixels * n_frames {
            return Err(CdmdError::Shape(format!(
                "{} mask bits for {n_pixels} pixels x {n_frames} frames",
                bits.len()
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(CdmdError::InvalidArgument(format!("mask bit {b} is not 0 or 1")));
        }
        Ok(Self { bits, n_pixels, n_frames, tau })
    }

    pub fn zeros(n_pixels: usize, n_frames: usize) -> Self {
        Self { bits: vec![0; n_pixels * n_frames], n_pixels, n_frames, tau: 0.0 }
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, pixel: usize, frame: usize) -> bool {
        self.bits[frame * self.n_pixels + pixel] != 0
    }

    pub fn set(&mut self, pixel: usize, frame: usize, on: bool) {
        self.bits[frame * self.n_pixels + pixel] = u8::from(on);
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        &self.bits[t * self.n_pixels..(t + 1) * self.n_pixels]
    }

    /// Number of foreground bits.
    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_subset_of(&self, other: &ForegroundMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }

    /// Frames `start..start + count`.
    pub fn slice(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.n_frames || count == 0 {
            return Err(CdmdError::Shape(format!(
                "frames {start}..{} outside a {}-frame mask",
                start + count,
                self.n_frames
            )));
        }
        let bits = self.bits[start * self.n_pixels..(start + count) * self.n_pixels].to_vec();
        Ok(Self { bits, n_pixels: self.n_pixels, n_frames: count, tau: self.tau })
    }

    /// Concatenates masks in time.
    pub fn concat(parts: &[ForegroundMask]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| CdmdError::InvalidArgument("no masks to concatenate".into()))?;
        let mut bits = Vec::with_capacity(first.bits.len() * parts.len());
        let mut n_frames = 0;
        for p in parts {
            if p.n_pixels != first.n_pixels {
                return Err(CdmdError::Shape("masks differ in pixel count".into()));
            }
            bits.extend_from_slice(&p.bits);
            n_frames += p.n_frames;
        }
        Ok(Self { bits, n_pixels: first.n_pixels, n_frames, tau: first.tau })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Postfilter {
    #[default]
    None,
    /// 3x3 spatial median (majority of 9, outside pixels count as 0).
    Median3,
}

impl FromStr for Postfilter {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Postfilter::None),
            "median3" => Ok(Postfilter::Median3),
            other => Err(CdmdError::InvalidArgument(format!("unknown postfilter `{other}`"))),
        }
    }
}

/// Bit `(j, t)` is set iff `|x_jt − x̂_j| > tau`.
pub fn foreground_mask(
    frames: &FrameSequence,
    background: &BackgroundModel,
    tau: f64,
    postfilter: Postfilter,
) -> Result<ForegroundMask> {
    threshold(frames, &background.background, tau, postfilter)
}

/// [`foreground_mask`] against a plain background vector.
pub fn threshold(frames: &FrameSequence, background: &[f64], tau: f64, postfilter: Postfilter) -> Result<ForegroundMask> {
    if background.len() != frames.n_pixels() {
        return Err(CdmdError::Shape(format!(
            "background has {} pixels, frames have {}",
            background.len(),
            frames.n_pixels()
        )));
    }
    if !(tau > 0.0) {
        return Err(CdmdError::InvalidArgument(format!("threshold must be positive, got {tau}")));
    }
    let (n, m) = (frames.n_pixels(), frames.n_frames());
    let mut bits = Vec::with_capacity(n * m);
    for t in 0..m {
        let start = bits.len();
        bits.extend(frames.frame(t).iter().zip(background).map(|(x, b)| u8::from((x - b).abs() > tau)));
        if postfilter == Postfilter::Median3 {
            let filtered = median3(&bits[start..], frames.width(), frames.height());
            bits[start..].copy_from_slice(&filtered);
        }
    }
    Ok(ForegroundMask { bits, n_pixels: n, n_frames: m, tau })
}

/// 3x3 binary median of one row-major frame with zero padding.
pub fn median3(bits: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut out = vec![0u8; bits.len()];
    for r in 0..height {
        for c in 0..width {
            let mut ones = 0;
            for rr in r.saturating_sub(1)..(r + 2).min(height) {
                for cc in c.saturating_sub(1)..(c + 2).min(width) {
                    ones += bits[rr * width + cc] as usize;
                }
            }
            out[r * width + c] = u8::from(ones >= 5);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: f64,
    pub precision: f64,
    pub f_measure: f64,
}

impl Metrics {
    /// Recall, precision and their harmonic mean; each is 0 when its
    /// denominator is 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let recall = ratio(tp, tp + fn_);
        let precision = ratio(tp, tp + fp);
        let f_measure = if recall + precision == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { recall, precision, f_measure }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub recall: f64,
    pub precision: f64,
    pub f_measure: f64,
    pub per_frame: Vec<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold_sweep: Option<Vec<(f64, f64)>>,
}

/// Confusion counts pooled over all pixels and frames, plus per-frame
/// metrics.
pub fn evaluate(mask: &ForegroundMask, truth: &ForegroundMask) -> Result<EvalReport> {
    if mask.n_pixels != truth.n_pixels || mask.n_frames != truth.n_frames {
        return Err(CdmdError::Shape(format!(
            "mask is {}x{}, truth is {}x{}",
            mask.n_pixels, mask.n_frames, truth.n_pixels, truth.n_frames
        )));
    }
    let mut report = EvalReport::default();
    for t in 0..mask.n_frames {
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (&a, &b) in mask.frame(t).iter().zip(truth.frame(t)) {
            match (a, b) {
                (1, 1) => tp += 1,
                (1, _) => fp += 1,
                (_, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        report.per_frame.push(Metrics::from_counts(tp, fp, fn_));
        report.tp += tp;
        report.fp += fp;
        report.fn_ += fn_;
        report.tn += tn;
    }
    let m = Metrics::from_counts(report.tp, report.fp, report.fn_);
    report.recall = m.recall;
    report.precision = m.precision;
    report.f_measure = m.f_measure;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub recall: f64,
    pub precision: f64,
    pub f_measure: f64,
    pub foreground_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub points: Vec<SweepPoint>,
    /// Foreground count is nonincreasing along increasing `tau` (checked
    /// before any postfilter).
    pub monotone: bool,
}

impl ThresholdSweep {
    pub fn best(&self) -> SweepPoint {
        *self
            .points
            .iter()
            .fold(None::<&SweepPoint>, |acc, p| match acc {
                Some(b) if b.f_measure >= p.f_measure => Some(b),
                _ => Some(p),
            })
            .expect("sweep has at least one point")
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.tau, p.f_measure)).collect()
    }
}

/// F-measure for each threshold in `tau_grid`.
pub fn sweep_threshold(
    frames: &FrameSequence,
    background: &[f64],
    truth: &ForegroundMask,
    tau_grid: &[f64],
    postfilter: Postfilter,
) -> Result<ThresholdSweep> {
    if tau_grid.is_empty() {
        return Err(CdmdError::InvalidArgument("empty threshold grid".into()));
    }
    let mut points = Vec::with_capacity(tau_grid.len());
    let mut raw_counts = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let raw = threshold(frames, background, tau, Postfilter::None)?;
        raw_counts.push((tau, raw.count()));
        let mask = if postfilter == Postfilter::None { raw } else { threshold(frames, background, tau, postfilter)? };
        let r = evaluate(&mask, truth)?;
        points.push(SweepPoint {
            tau,
            recall: r.recall,
            precision: r.precision,
            f_measure: r.f_measure,
            foreground_pixels: mask.count(),
        });
    }
    raw_counts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = raw_counts.windows(2).all(|w| w[1].1 <= w[0].1);
    if !monotone {
        log::warn!("foreground count is not monotone in tau");
    }
    Ok(ThresholdSweep { points, monotone })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    #[default]
    Compressed,
}

impl FromStr for Method {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "compressed" => Ok(Method::Compressed),
            other => Err(CdmdError::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Sparsity budget for background selection: fixed `K` or cross-validated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sparsity {
    Fixed(usize),
    CrossValidate,
}

impl Default for Sparsity {
    fn default() -> Self {
        Sparsity::Fixed(10)
    }
}

impl fmt::Display for Sparsity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sparsity::Fixed(k) => write!(f, "{k}"),
            Sparsity::CrossValidate => f.write_str("cv"),
        }
    }
}

impl FromStr for Sparsity {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cv" {
            return Ok(Sparsity::CrossValidate);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Sparsity::Fixed(k)),
            _ => Err(CdmdError::InvalidArgument(format!("K must be `cv` or a positive integer, got `{s}`"))),
        }
    }
}

impl Serialize for Sparsity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Sparsity::Fixed(k) => s.serialize_u64(*k as u64),
            Sparsity::CrossValidate => s.serialize_str("cv"),
        }
    }
}

impl<'de> Deserialize<'de> for Sparsity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("K must be positive")),
            Raw::Int(k) => Ok(Sparsity::Fixed(k)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Settings for [`run_pipeline`]. Defaults: compressed DMD with sparse
/// sensing, `p = 1000`, `s = n / ln n`, automatic rank, `K = 10`, full
/// amplitudes, `omega_tol = 0.01`, `tau = 25`, batches of 200 frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub method: Method,
    pub sensing: SensingKind,
    pub p: usize,
    pub sparsity_s: Option<f64>,
    pub seed: u64,
    pub rank: RankSelection,
    #[serde(rename = "K")]
    pub sparsity: Sparsity,
    /// Also selects the OMP dictionary: compressed amplitudes run OMP on the
    /// compressed modes.
    pub amplitude: AmplitudeMode,
    pub omega_tol: f64,
    pub tau: f64,
    pub postfilter: Postfilter,
    pub batch_size: usize,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::Compressed,
            sensing: SensingKind::Sparse,
            p: 1000,
            sparsity_s: None,
            seed: 0,
            rank: RankSelection::Auto,
            sparsity: Sparsity::Fixed(10),
            amplitude: AmplitudeMode::Full,
            omega_tol: 0.01,
            tau: 25.0,
            postfilter: Postfilter::None,
            batch_size: 200,
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(CdmdError::InvalidArgument("p must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(CdmdError::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.omega_tol >= 0.0) {
            return Err(CdmdError::InvalidArgument(format!("omega_tol must be nonnegative, got {}", self.omega_tol)));
        }
        if self.batch_size < 2 {
            return Err(CdmdError::InvalidArgument(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if let Some(s) = self.sparsity_s {
            if !(s > 1.0) {
                return Err(CdmdError::InvalidArgument(format!("sparsity factor must exceed 1, got {s}")));
            }
        }
        if self.threads == Some(0) {
            return Err(CdmdError::InvalidArgument("threads must be positive".into()));
        }
        Ok(())
    }

    fn mode_source(&self) -> ModeSource {
        match (self.method, self.amplitude) {
            (Method::Compressed, AmplitudeMode::Compressed) => ModeSource::CompressedModes,
            _ => ModeSource::FullModes,
        }
    }
}

/// Milliseconds per stage for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchTimings {
    pub compress: f64,
    pub svd: f64,
    pub eig: f64,
    pub modes: f64,
    pub amplitudes: f64,
    pub omp: f64,
    pub mask: f64,
}

impl BatchTimings {
    pub fn total(&self) -> f64 {
        self.compress + self.svd + self.eig + self.modes + self.amplitudes + self.omp + self.mask
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub index: usize,
    pub start_frame: usize,
    pub n_frames: usize,
    pub k: usize,
    pub lambdas: Vec<c64>,
    pub amplitude_magnitudes: Vec<f64>,
    /// Modes with `|ω| ≤ omega_tol`.
    pub background_modes: Vec<usize>,
    pub sparsity: usize,
    pub support: Vec<usize>,
    pub beta_magnitudes: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sensing: Option<SensingParams>,
    pub timings: BatchTimings,
    pub foreground_pixels: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub batches: Vec<BatchReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<EvalReport>,
    pub warnings: Vec<String>,
    pub wall_ms: f64,
}

/// Everything produced for one batch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub model: DmdModel,
    pub background: BackgroundModel,
    pub mask: ForegroundMask,
    pub report: BatchReport,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub batches: Vec<BatchOutput>,
    /// All batch masks concatenated in time.
    pub mask: ForegroundMask,
    pub eval: Option<EvalReport>,
    pub report: RunReport,
}

/// Sample-count guidance `p > k ln(n / k)`.
pub fn enough_samples(p: usize, k: usize, n: usize) -> bool {
    p as f64 > k as f64 * (n as f64 / k as f64).ln()
}

/// Processes one batch; `index` offsets the sensing seed.
pub fn process_batch(frames: &FrameSequence, index: usize, start_frame: usize, config: &PipelineConfig) -> Result<BatchOutput> {
    let n = frames.n_pixels();
    let mut warnings = Vec::new();
    let options = DmdOptions { rank: config.rank, amplitude: config.amplitude };
    let pair = split_snapshots(frames)?;
    let model = match config.method {
        Method::Exact => dmd_exact(&pair, &options)?,
        Method::Compressed => {
            let p = config.p.min(n);
            if p < config.p {
                warnings.push(format!("p={} exceeds the {n} pixels per frame; using p={p}", config.p));
            }
            let seed = config.seed.wrapping_add(index as u64);
            let c = make_sensing(config.sensing, p, n, seed, config.sparsity_s)?;
            let model = dmd_compressed(&pair, &c, &options)?;
            if !enough_samples(p, model.rank(), n) {
                warnings.push(format!(
                    "p={p} does not exceed k·ln(n/k) for k={}, n={n}; consider more measurements",
                    model.rank()
                ));
            }
            model
        }
    };
    warnings.extend(model.diagnostics.warnings.iter().cloned());

    let source = config.mode_source();
    let start = Instant::now();
    let k = model.rank();
    let sparsity = match config.sparsity {
        Sparsity::Fixed(budget) => {
            if budget > k {
                warnings.push(format!("K={budget} exceeds the rank {k}; using K={k}"));
            }
            budget.min(k)
        }
        Sparsity::CrossValidate => cross_validate_sparsity(&model, source, frames)?.best,
    };
    let background = select_background(&model, sparsity, source, frames)?;
    let omp_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let mask = foreground_mask(frames, &background, config.tau, config.postfilter)?;
    let mask_ms = start.elapsed().as_secs_f64() * 1e3;

    let split = split_low_rank_sparse(&model, config.omega_tol)?;
    if split.fallback {
        warnings.push(format!("no mode with |ω| <= {}; background set falls back to one mode", config.omega_tol));
    }
    for w in &warnings {
        log::warn!("batch {index}: {w}");
    }
    let t = &model.timings;
    let report = BatchReport {
        index,
        start_frame,
        n_frames: frames.n_frames(),
        k,
        lambdas: model.lambdas.clone(),
        amplitude_magnitudes: model.amplitudes.iter().map(|b| b.norm()).collect(),
        background_modes: split.background,
        sparsity,
        support: background.beta.support.clone(),
        beta_magnitudes: background.beta.support.iter().map(|&j| background.beta.beta[j].norm()).collect(),
        sensing: model.sensing.clone(),
        timings: BatchTimings {
            compress: t.compress,
            svd: t.svd,
            eig: t.eig,
            modes: t.modes,
            amplitudes: t.amplitudes,
            omp: omp_ms,
            mask: mask_ms,
        },
        foreground_pixels: mask.count(),
        warnings,
    };
    Ok(BatchOutput { model, background, mask, report })
}

/// Runs every batch (in parallel when threads allow), then evaluates the
/// concatenated masks against `truth` if given. A failing batch aborts the
/// run with its index attached.
pub fn run_pipeline(frames: &FrameSequence, config: &PipelineConfig, truth: Option<&ForegroundMask>) -> Result<PipelineOutput> {
    config.validate()?;
    if let Some(t) = truth {
        if t.n_pixels() != frames.n_pixels() || t.n_frames() != frames.n_frames() {
            return Err(CdmdError::Shape(format!(
                "truth is {}x{}, frames are {}x{}",
                t.n_pixels(),
                t.n_frames(),
                frames.n_pixels(),
                frames.n_frames()
            )));
        }
    }
    let started = Instant::now();
    let n = frames.n_pixels();
    let mut warnings = Vec::new();
    if config.method == Method::Compressed {
        if let RankSelection::Fixed(k) = config.rank {
            if !enough_samples(config.p.min(n), k, n) {
                let msg = format!("p={} does not exceed k·ln(n/k) for k={k}, n={n}", config.p);
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    let batches = batch(frames, config.batch_size)?;
    let starts: Vec<usize> = batches
        .iter()
        .scan(0, |acc, b| {
            let s = *acc;
            *acc += b.n_frames();
            Some(s)
        })
        .collect();

    let work = || -> Vec<Result<BatchOutput>> {
        batches
            .par_iter()
            .enumerate()
            .map(|(i, b)| {
                process_batch(b, i, starts[i], config)
                    .map_err(|e| CdmdError::Batch { index: i, source: Box::new(e) })
            })
            .collect()
    };
    let results = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CdmdError::InvalidArgument(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mask = ForegroundMask::concat(&outputs.iter().map(|o| o.mask.clone()).collect::<Vec<_>>())?;
    let eval = truth.map(|t| evaluate(&mask, t)).transpose()?;
    let report = RunReport {
        config: config.clone(),
        width: frames.width(),
        height: frames.height(),
        n_frames: frames.n_frames(),
        batches: outputs.iter().map(|o| o.report.clone()).collect(),
        metrics: eval.clone(),
        warnings,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok(PipelineOutput { batches: outputs, mask, eval, report })
}

/// Threshold sweep over a whole run: each batch is thresholded against its
/// own background and the concatenated masks are scored against `truth`.
pub fn sweep_run(
    frames: &FrameSequence,
    output: &PipelineOutput,
    truth: &ForegroundMask,
    tau_grid: &[f64],
    postfilter: Postfilter,
) -> Result<ThresholdSweep> {
    if tau_grid.is_empty() {
        return Err(CdmdError::InvalidArgument("empty threshold grid".into()));
    }
    let slices: Vec<FrameSequence> = output
        .batches
        .iter()
        .map(|b| frames.slice(b.report.start_frame, b.report.n_frames))
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(tau_grid.len());
    let mut raw_counts = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let mut raw_count = 0;
        let mut parts = Vec::with_capacity(slices.len());
        for (b, f) in output.batches.iter().zip(&slices) {
            let bg = &b.background.background;
            let raw = threshold(f, bg, tau, Postfilter::None)?;
            raw_count += raw.count();
            parts.push(if postfilter == Postfilter::None { raw } else { threshold(f, bg, tau, postfilter)? });
        }
        raw_counts.push((tau, raw_count));
        let mask = ForegroundMask::concat(&parts)?;
        let r = evaluate(&mask, truth)?;
        points.push(SweepPoint {
            tau,
            recall: r.recall,
            precision: r.precision,
            f_measure: r.f_measure,
            foreground_pixels: mask.count(),
        });
    }
    raw_counts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = raw_counts.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(ThresholdSweep { points, monotone })
}

/// Continuous-time eigenvalue magnitudes of a model, `∞` for `λ = 0`.
pub fn omega_magnitudes(model: &DmdModel) -> Vec<f64> {
    continuous_eigs(model).iter().map(|w| if w.is_finite() { w.norm() } else { f64::INFINITY }).collect()
}

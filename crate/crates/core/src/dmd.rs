//! Exact and compressed dynamic mode decomposition.
//!
//! Both variants fit `X' ≈ A X` through the reduced operator
//! `Ã = U* X' V S⁻¹` of the truncated SVD `X = U S V*`, then lift its
//! eigenvectors `W` to modes `Φ = X' V S⁻¹ W`. Compressed DMD takes the SVD of
//! the sketch `Y = C X` instead and still lifts with the full `X'`.
//!
//! Modes are ordered by descending amplitude magnitude, with the two members
//! of a conjugate pair adjacent (positive imaginary part first).

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CdmdError, Result};
use crate::frames_io::SnapshotPair;
use crate::numkernel::{eig_dense, lstsq_vec, optimal_rank, svd_thin};
use crate::scalar::{times_complex, Scalar};
use crate::sensing::{SensingOperator, SensingParams, Sketch};

/// Singular values below this fraction of `σ₁` are dropped, never inverted.
pub const SINGULAR_DROP: f64 = 1e-12;

/// Rank of the truncated SVD: chosen by the optimal hard threshold or fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RankSelection {
    #[default]
    Auto,
    Fixed(usize),
}

impl fmt::Display for RankSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankSelection::Auto => f.write_str("auto"),
            RankSelection::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for RankSelection {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(RankSelection::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(RankSelection::Fixed(k)),
            _ => Err(CdmdError::InvalidArgument(format!("rank must be `auto` or a positive integer, got `{s}`"))),
        }
    }
}

impl Serialize for RankSelection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RankSelection::Auto => s.serialize_str("auto"),
            RankSelection::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for RankSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("rank must be positive")),
            Raw::Int(k) => Ok(RankSelection::Fixed(k)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Right-hand side used for the amplitude least squares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMode {
    /// `b = argmin ‖x₁ − Φ b‖` with the full modes.
    #[default]
    Full,
    /// `b = argmin ‖y₁ − Φ_Y b‖` with the compressed modes.
    Compressed,
}

impl FromStr for AmplitudeMode {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AmplitudeMode::Full),
            "compressed" => Ok(AmplitudeMode::Compressed),
            other => Err(CdmdError::InvalidArgument(format!("unknown amplitude mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DmdOptions {
    pub rank: RankSelection,
    pub amplitude: AmplitudeMode,
}

/// Wall time per stage in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub compress: f64,
    pub svd: f64,
    pub eig: f64,
    pub modes: f64,
    pub amplitudes: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.compress + self.svd + self.eig + self.modes + self.amplitudes
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DmdDiagnostics {
    /// Rank after the hard threshold (or as requested), before dropping
    /// negligible singular values.
    pub rank_selected: usize,
    /// Singular values dropped for being below `SINGULAR_DROP * σ₁`.
    pub rank_dropped: usize,
    pub eig_max_residual: f64,
    pub eig_defective: bool,
    /// Complex sketch: conjugate-pair structure is not enforced.
    pub complex_sketch: bool,
    /// Index pairs `(i, j)` with `lambdas[j] == conj(lambdas[i])`.
    pub conjugate_pairs: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// A fitted decomposition `X ≈ Φ diag(b) 𝒱`.
#[derive(Clone, Debug)]
pub struct DmdModel {
    /// Full-state modes `Φ`, `n x k`.
    pub modes: Mat<c64>,
    /// Compressed modes `Φ_Y`, `p x k` (compressed DMD only).
    pub modes_compressed: Option<Mat<c64>>,
    /// First sketched snapshot `y₁` (compressed DMD only).
    pub first_compressed: Option<Vec<c64>>,
    pub lambdas: Vec<c64>,
    pub amplitudes: Vec<c64>,
    pub frame_interval: f64,
    /// Number of frames `m` of the source sequence.
    pub n_frames: usize,
    /// Full singular spectrum of `X` (or `Y`).
    pub singular_values: Vec<f64>,
    pub sensing: Option<SensingParams>,
    pub amplitude_mode: AmplitudeMode,
    pub diagnostics: DmdDiagnostics,
    pub timings: StageTimings,
}

impl DmdModel {
    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.modes.nrows()
    }

    pub fn is_compressed(&self) -> bool {
        self.modes_compressed.is_some()
    }
}

struct Reduced {
    singular_values: Vec<f64>,
    lambdas: Vec<c64>,
    /// `V S⁻¹ W`, `(m-1) x k`.
    lift: Mat<c64>,
    /// `Y' V S⁻¹ W`, the modes in the space of the factored matrix.
    modes: Mat<c64>,
    pairs: Vec<(usize, usize)>,
    diagnostics: DmdDiagnostics,
    svd_ms: f64,
    eig_ms: f64,
    modes_ms: f64,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn reduced<T: Scalar>(left: MatRef<'_, T>, right: MatRef<'_, T>, rank: RankSelection) -> Result<Reduced> {
    let (rows, cols) = (left.nrows(), left.ncols());
    let max_rank = rows.min(cols);
    if let RankSelection::Fixed(k) = rank {
        if k == 0 || k > max_rank {
            return Err(CdmdError::InvalidArgument(format!(
                "rank {k} outside 1..={max_rank} for {rows}x{cols} snapshots"
            )));
        }
    }
    let start = Instant::now();
    let svd = svd_thin(left)?;
    let sigma1 = svd.s[0];
    if !(sigma1 > 0.0) {
        return Err(CdmdError::Degenerate("snapshot matrix is identically zero".into()));
    }
    let mut diagnostics = DmdDiagnostics::default();
    let selected = match rank {
        RankSelection::Auto => optimal_rank(&svd.s, rows, cols)?,
        RankSelection::Fixed(k) => k,
    };
    let usable = svd.s.iter().take_while(|&&s| s >= SINGULAR_DROP * sigma1).count();
    let k = selected.min(usable);
    diagnostics.rank_selected = selected;
    diagnostics.rank_dropped = selected - k;
    if k < selected {
        let msg = format!("rank reduced from {selected} to {k}: singular values below {SINGULAR_DROP:e}·σ₁");
        log::warn!("{msg}");
        diagnostics.warnings.push(msg);
    }
    let singular_values = svd.s.clone();
    let svd = svd.truncate(k);
    let svd_ms = elapsed_ms(start);

    let start = Instant::now();
    // Y' V S⁻¹, reused for both the reduced operator and the reduced-space modes.
    let mut right_vs = right * &svd.v;
    for (j, &s) in svd.s.iter().enumerate() {
        let inv = T::from_re(1.0 / s);
        for i in 0..right_vs.nrows() {
            right_vs[(i, j)] = right_vs[(i, j)] * inv;
        }
    }
    let a_tilde = svd.u.adjoint() * &right_vs;
    let eig = eig_dense(a_tilde.as_ref())?;
    diagnostics.eig_max_residual = eig.max_residual;
    diagnostics.eig_defective = eig.defective;
    if eig.defective {
        diagnostics
            .warnings
            .push(format!("reduced operator eigen-residual {:.3e} above tolerance", eig.max_residual));
    }
    let eig_ms = elapsed_ms(start);

    let start = Instant::now();
    let mut vs = svd.v.clone();
    for (j, &s) in svd.s.iter().enumerate() {
        let inv = T::from_re(1.0 / s);
        for i in 0..vs.nrows() {
            vs[(i, j)] = vs[(i, j)] * inv;
        }
    }
    let lift = times_complex(vs.as_ref(), eig.vectors.as_ref());
    let mut modes = times_complex(right_vs.as_ref(), eig.vectors.as_ref());
    enforce_conjugate_columns(&mut modes, &eig.conjugate_pairs);
    let modes_ms = elapsed_ms(start);

    Ok(Reduced {
        singular_values,
        lambdas: eig.values,
        lift,
        modes,
        pairs: eig.conjugate_pairs,
        diagnostics,
        svd_ms,
        eig_ms,
        modes_ms,
    })
}

fn enforce_conjugate_columns(m: &mut Mat<c64>, pairs: &[(usize, usize)]) {
    for &(i, j) in pairs {
        for r in 0..m.nrows() {
            m[(r, j)] = m[(r, i)].conj();
        }
    }
}

fn column_c64<T: Scalar>(m: MatRef<'_, T>, j: usize) -> Vec<c64> {
    (0..m.nrows()).map(|i| m[(i, j)].to_c64()).collect()
}

/// Exact DMD of an uncompressed snapshot pair.
pub fn dmd_exact(snapshots: &SnapshotPair<f64>, options: &DmdOptions) -> Result<DmdModel> {
    if snapshots.is_compressed() {
        return Err(CdmdError::InvalidArgument("exact DMD needs uncompressed snapshots".into()));
    }
    let red = reduced(snapshots.left(), snapshots.right(), options.rank)?;
    let start = Instant::now();
    let x1 = column_c64(snapshots.left(), 0);
    let amplitudes = lstsq_vec(red.modes.as_ref(), &x1)?;
    let amplitudes_ms = elapsed_ms(start);
    let timings = StageTimings {
        compress: 0.0,
        svd: red.svd_ms,
        eig: red.eig_ms,
        modes: red.modes_ms,
        amplitudes: amplitudes_ms,
    };
    let model = DmdModel {
        modes: red.modes,
        modes_compressed: None,
        first_compressed: None,
        lambdas: red.lambdas,
        amplitudes,
        frame_interval: snapshots.frame_interval(),
        n_frames: snapshots.n_snapshots() + 1,
        singular_values: red.singular_values,
        sensing: None,
        amplitude_mode: AmplitudeMode::Full,
        diagnostics: red.diagnostics,
        timings,
    };
    Ok(finish(model, &red.pairs))
}

/// Compressed DMD: sketches the snapshots with `c` and factors the sketch.
pub fn dmd_compressed(snapshots: &SnapshotPair<f64>, c: &SensingOperator, options: &DmdOptions) -> Result<DmdModel> {
    if snapshots.is_compressed() {
        return Err(CdmdError::InvalidArgument("compressed DMD needs the uncompressed snapshots".into()));
    }
    if c.n() != snapshots.n_rows() {
        return Err(CdmdError::Shape(format!(
            "sensing operator has n={}, snapshots have {} rows",
            c.n(),
            snapshots.n_rows()
        )));
    }
    if let RankSelection::Fixed(k) = options.rank {
        if c.p() < k {
            return Err(CdmdError::InvalidArgument(format!("p={} is smaller than the rank {k}", c.p())));
        }
    }
    let start = Instant::now();
    let dt = snapshots.frame_interval();
    let model = match snapshots.sequence() {
        Some(d) => match c.apply(d)? {
            Sketch::Real(y) => {
                let sketch = SnapshotPair::shifted(y, true, dt)?;
                let compress_ms = elapsed_ms(start);
                dmd_from_sketch(snapshots, &sketch, options).map(|m| (m, compress_ms))
            }
            Sketch::Complex(y) => {
                let sketch = SnapshotPair::shifted(y, true, dt)?;
                let compress_ms = elapsed_ms(start);
                dmd_from_sketch(snapshots, &sketch, options).map(|m| (m, compress_ms))
            }
        },
        None => match (c.apply(snapshots.left())?, c.apply(snapshots.right())?) {
            (Sketch::Real(l), Sketch::Real(r)) => {
                let sketch = SnapshotPair::from_parts(l, r, true, dt)?;
                let compress_ms = elapsed_ms(start);
                dmd_from_sketch(snapshots, &sketch, options).map(|m| (m, compress_ms))
            }
            (l, r) => {
                let sketch = SnapshotPair::from_parts(l.to_complex(), r.to_complex(), true, dt)?;
                let compress_ms = elapsed_ms(start);
                dmd_from_sketch(snapshots, &sketch, options).map(|m| (m, compress_ms))
            }
        },
    };
    let (mut model, compress_ms) = model?;
    model.timings.compress = compress_ms;
    model.sensing = Some(c.params().clone());
    Ok(model)
}

/// Compressed DMD from a precomputed sketch `Y = C X`, `Y' = C X'` of
/// `snapshots`. The full right snapshots are still used to lift the modes.
pub fn dmd_from_sketch<T: Scalar>(
    snapshots: &SnapshotPair<f64>,
    sketch: &SnapshotPair<T>,
    options: &DmdOptions,
) -> Result<DmdModel> {
    if sketch.n_snapshots() != snapshots.n_snapshots() {
        return Err(CdmdError::Shape(format!(
            "sketch has {} snapshots, data has {}",
            sketch.n_snapshots(),
            snapshots.n_snapshots()
        )));
    }
    if let RankSelection::Fixed(k) = options.rank {
        if sketch.n_rows() < k {
            return Err(CdmdError::InvalidArgument(format!("p={} is smaller than the rank {k}", sketch.n_rows())));
        }
    }
    let mut red = reduced(sketch.left(), sketch.right(), options.rank)?;
    red.diagnostics.complex_sketch = !T::REAL;
    if !T::REAL {
        red.diagnostics
            .warnings
            .push("complex sketch: conjugate-pair structure not enforced".into());
    }

    let start = Instant::now();
    let mut modes = times_complex(snapshots.right(), red.lift.as_ref());
    enforce_conjugate_columns(&mut modes, &red.pairs);
    red.modes_ms += elapsed_ms(start);

    let start = Instant::now();
    let y1 = column_c64(sketch.left(), 0);
    let amplitudes = match options.amplitude {
        AmplitudeMode::Full => lstsq_vec(modes.as_ref(), &column_c64(snapshots.left(), 0))?,
        AmplitudeMode::Compressed => lstsq_vec(red.modes.as_ref(), &y1)?,
    };
    let amplitudes_ms = elapsed_ms(start);

    let timings = StageTimings {
        compress: 0.0,
        svd: red.svd_ms,
        eig: red.eig_ms,
        modes: red.modes_ms,
        amplitudes: amplitudes_ms,
    };
    let model = DmdModel {
        modes,
        modes_compressed: Some(red.modes),
        first_compressed: Some(y1),
        lambdas: red.lambdas,
        amplitudes,
        frame_interval: snapshots.frame_interval(),
        n_frames: snapshots.n_snapshots() + 1,
        singular_values: red.singular_values,
        sensing: None,
        amplitude_mode: options.amplitude,
        diagnostics: red.diagnostics,
        timings,
    };
    Ok(finish(model, &red.pairs))
}

/// Makes paired amplitudes exact conjugates and sorts modes by descending
/// `|b|`, keeping each conjugate pair adjacent.
fn finish(mut model: DmdModel, pairs: &[(usize, usize)]) -> DmdModel {
    let k = model.lambdas.len();
    for &(i, j) in pairs {
        model.amplitudes[j] = model.amplitudes[i].conj();
    }
    let mut partner = vec![None; k];
    for &(i, j) in pairs {
        partner[i] = Some(j);
        partner[j] = Some(i);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for j in 0..k {
        match partner[j] {
            Some(q) if q < j => {}
            Some(q) => {
                let (pos, neg) = if model.lambdas[j].im >= 0.0 { (j, q) } else { (q, j) };
                groups.push(vec![pos, neg]);
            }
            None => groups.push(vec![j]),
        }
    }
    let weight = |g: &Vec<usize>| g.iter().map(|&i| model.amplitudes[i].norm()).fold(0.0, f64::max);
    groups.sort_by(|a, b| weight(b).total_cmp(&weight(a)).then(a[0].cmp(&b[0])));
    let order: Vec<usize> = groups.iter().flatten().copied().collect();

    let permute_cols = |m: &Mat<c64>| Mat::from_fn(m.nrows(), k, |r, c| m[(r, order[c])]);
    model.modes = permute_cols(&model.modes);
    model.modes_compressed = model.modes_compressed.as_ref().map(permute_cols);
    model.lambdas = order.iter().map(|&i| model.lambdas[i]).collect();
    model.amplitudes = order.iter().map(|&i| model.amplitudes[i]).collect();

    let mut new_pairs = Vec::new();
    let mut pos = 0;
    for g in &groups {
        if g.len() == 2 {
            new_pairs.push((pos, pos + 1));
        }
        pos += g.len();
    }
    model.diagnostics.conjugate_pairs = new_pairs;
    model
}

/// `k x m` matrix with entry `(j, t) = λ_j^t`, `t = 0..m`.
pub fn vandermonde(model: &DmdModel, m: usize) -> Mat<c64> {
    vandermonde_of(&model.lambdas, 0..m)
}

fn vandermonde_of(lambdas: &[c64], range: Range<usize>) -> Mat<c64> {
    let mut v = Mat::<c64>::zeros(lambdas.len(), range.len());
    for (j, &lambda) in lambdas.iter().enumerate() {
        let mut power = c64::new(1.0, 0.0);
        for t in 0..range.end {
            if t >= range.start {
                v[(j, t - range.start)] = power;
            }
            power *= lambda;
        }
    }
    v
}

/// `ω_j = Log(λ_j) / Δt` on the principal branch. `λ = 0` maps to `-∞`.
pub fn continuous_eigs(model: &DmdModel) -> Vec<c64> {
    model
        .lambdas
        .iter()
        .map(|&l| {
            if l == c64::new(0.0, 0.0) {
                c64::new(f64::NEG_INFINITY, 0.0)
            } else {
                l.ln() / model.frame_interval
            }
        })
        .collect()
}

/// `Φ diag(b) 𝒱` restricted to mode `subset`, complex.
fn render(model: &DmdModel, subset: &[usize], range: Range<usize>) -> Mat<c64> {
    let lambdas: Vec<c64> = subset.iter().map(|&j| model.lambdas[j]).collect();
    let mut bv = vandermonde_of(&lambdas, range.clone());
    for (r, &j) in subset.iter().enumerate() {
        let b = model.amplitudes[j];
        for t in 0..bv.ncols() {
            bv[(r, t)] *= b;
        }
    }
    let phi = Mat::from_fn(model.modes.nrows(), subset.len(), |i, c| model.modes[(i, subset[c])]);
    &phi * &bv
}

/// Complex reconstruction `Φ diag(b) 𝒱` for frames `range` (0-based, so
/// frame 0 is `x₁` and reproduces `Φ b`).
pub fn reconstruct_complex(model: &DmdModel, range: Range<usize>) -> Mat<c64> {
    let all: Vec<usize> = (0..model.rank()).collect();
    render(model, &all, range)
}

/// Real reconstruction of frames `range` (0-based). For real-data models the
/// imaginary part must stay below `1e-8` of the largest real entry.
pub fn reconstruct(model: &DmdModel, range: Range<usize>) -> Result<Mat<f64>> {
    let z = reconstruct_complex(model, range);
    real_part_checked(model, &z)
}

fn real_part_checked(model: &DmdModel, z: &Mat<c64>) -> Result<Mat<f64>> {
    let re = Mat::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)].re);
    if !model.diagnostics.complex_sketch {
        let mut max_re: f64 = 0.0;
        let mut max_im: f64 = 0.0;
        for j in 0..z.ncols() {
            for i in 0..z.nrows() {
                max_re = max_re.max(z[(i, j)].re.abs());
                max_im = max_im.max(z[(i, j)].im.abs());
            }
        }
        if max_im > 1e-8 * max_re.max(f64::MIN_POSITIVE) {
            return Err(CdmdError::Degenerate(format!(
                "reconstruction has imaginary part {max_im:.3e} against real scale {max_re:.3e}"
            )));
        }
    }
    Ok(re)
}

/// Background (`|ω| ≤ tol`) and foreground mode indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowRankSparse {
    pub background: Vec<usize>,
    pub foreground: Vec<usize>,
    /// No mode passed the tolerance; `background` holds the single mode of
    /// smallest `|ω|`.
    pub fallback: bool,
}

pub fn split_low_rank_sparse(model: &DmdModel, omega_tol: f64) -> Result<LowRankSparse> {
    if !(omega_tol >= 0.0) {
        return Err(CdmdError::InvalidArgument(format!("omega_tol must be nonnegative, got {omega_tol}")));
    }
    let omegas = continuous_eigs(model);
    let mut background: Vec<usize> = (0..omegas.len())
        .filter(|&j| omegas[j].is_finite() && omegas[j].norm() <= omega_tol)
        .collect();
    let mut fallback = false;
    if background.is_empty() {
        let best = (0..omegas.len())
            .filter(|&j| omegas[j].is_finite())
            .min_by(|&a, &b| omegas[a].norm().total_cmp(&omegas[b].norm()))
            .ok_or_else(|| CdmdError::Degenerate("every eigenvalue is zero".into()))?;
        log::warn!("no mode with |ω| <= {omega_tol}; using mode {best} with |ω| = {:.3e}", omegas[best].norm());
        background.push(best);
        fallback = true;
    }
    let foreground = (0..omegas.len()).filter(|j| !background.contains(j)).collect();
    Ok(LowRankSparse { background, foreground, fallback })
}

/// Low-rank part `L`, sparse part `S` and their sum `X = L + S` over frames
/// `range`.
#[derive(Clone, Debug)]
pub struct LowRankSparseVideo {
    pub low_rank: Mat<f64>,
    pub sparse: Mat<f64>,
    pub total: Mat<f64>,
}

pub fn render_low_rank_sparse(model: &DmdModel, split: &LowRankSparse, range: Range<usize>) -> Result<LowRankSparseVideo> {
    let l = render(model, &split.background, range.clone());
    let s = render(model, &split.foreground, range);
    let total = Mat::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] + s[(i, j)]);
    Ok(LowRankSparseVideo {
        low_rank: real_part_checked(model, &l)?,
        sparse: real_part_checked(model, &s)?,
        total: real_part_checked(model, &total)?,
    })
}

//! Random measurement operators `C` (p x n) that compress snapshot matrices,
//! `Y = C X`.
//!
//! Four families are supported:
//!
//! * `gaussian`: i.i.d. N(0, 1) entries;
//! * `sparse`: i.i.d. entries +1 / 0 / -1 with probabilities
//!   `1/(2s)`, `1 - 1/s`, `1/(2s)` (`s = n / ln n` by default);
//! * `single_pixel`: `p` distinct rows of the identity (row gathering);
//! * `srft`: `R F D` with `D` random unit-circle phases, `F` the unnormalized
//!   length-`n` DFT and `R` a row sampler. Its output is complex.
//!
//! No `1/sqrt(p)` normalization is applied: DMD eigenvalues do not change when
//! both `Y` and `Y'` are multiplied on the left by the same matrix.
//!
//! Randomness comes from ChaCha8 streams keyed by `(seed, family, row)`, so an
//! operator is fully determined by its [`SensingParams`].

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use faer::{c64, Mat, MatRef};
use rand::Rng;
use rand_distr::{Geometric, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CdmdError, Result};
use crate::rng::{domain, stream};
use crate::scalar::all_finite;

/// Largest Gaussian operator (in entries) kept in memory between calls;
/// bigger ones are regenerated in row blocks on every application.
const GAUSSIAN_CACHE_ENTRIES: usize = 1 << 25;
const GAUSSIAN_BLOCK_ENTRIES: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingKind {
    Gaussian,
    Sparse,
    SinglePixel,
    Srft,
}

impl SensingKind {
    pub const ALL: [SensingKind; 4] = [SensingKind::Gaussian, SensingKind::Sparse, SensingKind::SinglePixel, SensingKind::Srft];

    pub fn as_str(self) -> &'static str {
        match self {
            SensingKind::Gaussian => "gaussian",
            SensingKind::Sparse => "sparse",
            SensingKind::SinglePixel => "spixel",
            SensingKind::Srft => "srft",
        }
    }
}

impl fmt::Display for SensingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensingKind {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(SensingKind::Gaussian),
            "sparse" => Ok(SensingKind::Sparse),
            "spixel" | "single_pixel" => Ok(SensingKind::SinglePixel),
            "srft" => Ok(SensingKind::Srft),
            other => Err(CdmdError::InvalidArgument(format!("unknown sensing kind `{other}`"))),
        }
    }
}

/// Everything needed to rebuild an operator; this is what run reports record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    pub kind: SensingKind,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    /// Sparsity factor `s`; only meaningful for the sparse kind.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sparsity_s: Option<f64>,
}

/// Default sparsity factor `n / ln(n)`.
pub fn default_sparsity(n: usize) -> f64 {
    n as f64 / (n as f64).ln()
}

/// Compressed data. SRFT sensing produces complex sketches, all other kinds
/// real ones.
#[derive(Clone, Debug)]
pub enum Sketch {
    Real(Mat<f64>),
    Complex(Mat<c64>),
}

impl Sketch {
    pub fn nrows(&self) -> usize {
        match self {
            Sketch::Real(m) => m.nrows(),
            Sketch::Complex(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Sketch::Real(m) => m.ncols(),
            Sketch::Complex(m) => m.ncols(),
        }
    }

    pub fn to_complex(&self) -> Mat<c64> {
        match self {
            Sketch::Real(m) => Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0)),
            Sketch::Complex(m) => m.clone(),
        }
    }
}

/// Sparse ±1 matrix in compressed-row form.
#[derive(Clone, Debug)]
struct SignedRows {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    signs: Vec<f64>,
}

enum Action {
    Gaussian { dense: OnceLock<Mat<f64>> },
    Sparse(SignedRows),
    SinglePixel { rows: Vec<usize> },
    Srft { rows: Vec<usize>, phases: Vec<c64>, fft: Arc<dyn Fft<f64>> },
}

/// A measurement operator. Immutable after construction and shareable across
/// threads.
pub struct SensingOperator {
    params: SensingParams,
    action: Action,
}

impl fmt::Debug for SensingOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SensingOperator").field("params", &self.params).finish_non_exhaustive()
    }
}

/// Builds the operator for `(kind, p, n, seed, s)`. `sparsity_s` defaults to
/// `n / ln n` for the sparse kind and is ignored otherwise.
pub fn make_sensing(kind: SensingKind, p: usize, n: usize, seed: u64, sparsity_s: Option<f64>) -> Result<SensingOperator> {
    if p < 1 || p > n {
        return Err(CdmdError::InvalidArgument(format!("need 1 <= p <= n, got p={p}, n={n}")));
    }
    let mut params = SensingParams { kind, p, n, seed, sparsity_s: None };
    let action = match kind {
        SensingKind::Gaussian => Action::Gaussian { dense: OnceLock::new() },
        SensingKind::Sparse => {
            let s = sparsity_s.unwrap_or_else(|| default_sparsity(n));
            if !(s.is_finite() && s > 1.0) {
                return Err(CdmdError::InvalidArgument(format!("sparsity factor must exceed 1, got {s}")));
            }
            params.sparsity_s = Some(s);
            Action::Sparse(sparse_rows(p, n, seed, s))
        }
        SensingKind::SinglePixel => Action::SinglePixel { rows: sample_rows(n, p, seed, domain::SINGLE_PIXEL) },
        SensingKind::Srft => {
            let rows = sample_rows(n, p, seed, domain::SRFT_ROWS);
            let mut rng = stream(seed, domain::SRFT_PHASES, 0);
            let phases = (0..n)
                .map(|_| c64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
                .collect();
            let fft = FftPlanner::new().plan_fft_forward(n);
            Action::Srft { rows, phases, fft }
        }
    };
    Ok(SensingOperator { params, action })
}

fn sample_rows(n: usize, p: usize, seed: u64, dom: u8) -> Vec<usize> {
    let mut rng = stream(seed, dom, 0);
    rand::seq::index::sample(&mut rng, n, p).into_vec()
}

fn sparse_rows(p: usize, n: usize, seed: u64, s: f64) -> SignedRows {
    // Gaps between nonzeros in a row of i.i.d. Bernoulli(1/s) entries are
    // geometric, which avoids drawing n uniforms per row.
    let gaps = Geometric::new(1.0 / s).expect("1/s lies in (0, 1)");
    let per_row: Vec<(Vec<u32>, Vec<f64>)> = (0..p)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, domain::SPARSE, i as u64);
            let mut cols = Vec::new();
            let mut signs = Vec::new();
            let mut col: u64 = 0;
            loop {
                col = col.saturating_add(rng.sample(gaps));
                if col >= n as u64 {
                    break;
                }
                cols.push(col as u32);
                signs.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
                col += 1;
            }
            (cols, signs)
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(p + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut signs = Vec::new();
    for (c, s) in per_row {
        cols.extend(c);
        signs.extend(s);
        row_ptr.push(cols.len());
    }
    SignedRows { row_ptr, cols, signs }
}

fn gaussian_rows(seed: u64, first_row: usize, count: usize, n: usize) -> Mat<f64> {
    let rows: Vec<Vec<f64>> = (first_row..first_row + count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, domain::GAUSSIAN, i as u64);
            (0..n).map(|_| rng.sample(StandardNormal)).collect()
        })
        .collect();
    Mat::from_fn(count, n, |i, j| rows[i][j])
}

impl SensingOperator {
    pub fn params(&self) -> &SensingParams {
        &self.params
    }

    pub fn kind(&self) -> SensingKind {
        self.params.kind
    }

    pub fn p(&self) -> usize {
        self.params.p
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    /// Sampled row indices for the single-pixel and SRFT kinds.
    pub fn row_indices(&self) -> Option<&[usize]> {
        match &self.action {
            Action::SinglePixel { rows } | Action::Srft { rows, .. } => Some(rows),
            _ => None,
        }
    }

    /// Diagonal phases of `D` for the SRFT kind.
    pub fn diagonal_phases(&self) -> Option<&[c64]> {
        match &self.action {
            Action::Srft { phases, .. } => Some(phases),
            _ => None,
        }
    }

    /// Number of nonzero entries for the sparse kind.
    pub fn nonzeros(&self) -> Option<usize> {
        match &self.action {
            Action::Sparse(rows) => Some(rows.cols.len()),
            _ => None,
        }
    }

    /// `C M` for an `n x q` real matrix.
    pub fn apply(&self, m: MatRef<'_, f64>) -> Result<Sketch> {
        if m.nrows() != self.params.n {
            return Err(CdmdError::Shape(format!(
                "sensing operator expects {} rows, got {}",
                self.params.n,
                m.nrows()
            )));
        }
        if !all_finite(m) {
            return Err(CdmdError::NonFinite("sensing input"));
        }
        let (p, n, q) = (self.params.p, self.params.n, m.ncols());
        Ok(match &self.action {
            Action::Gaussian { dense } => {
                if p * n <= GAUSSIAN_CACHE_ENTRIES {
                    let c = dense.get_or_init(|| gaussian_rows(self.params.seed, 0, p, n));
                    Sketch::Real(c * m)
                } else {
                    let block = (GAUSSIAN_BLOCK_ENTRIES / n).clamp(1, p);
                    let mut y = Mat::<f64>::zeros(p, q);
                    let mut start = 0;
                    while start < p {
                        let count = block.min(p - start);
                        let c = gaussian_rows(self.params.seed, start, count, n);
                        let part = &c * m;
                        y.as_mut().submatrix_mut(start, 0, count, q).copy_from(&part);
                        start += count;
                    }
                    Sketch::Real(y)
                }
            }
            Action::Sparse(rows) => {
                let mut y = Mat::<f64>::zeros(p, q);
                let mut column = vec![0.0; n];
                for c in 0..q {
                    let src = column_slice(m, c, &mut column);
                    let dst = y.col_as_slice_mut(c);
                    for (i, out) in dst.iter_mut().enumerate() {
                        let range = rows.row_ptr[i]..rows.row_ptr[i + 1];
                        *out = rows.cols[range.clone()]
                            .iter()
                            .zip(&rows.signs[range])
                            .map(|(&j, &sgn)| sgn * src[j as usize])
                            .sum();
                    }
                }
                Sketch::Real(y)
            }
            Action::SinglePixel { rows } => Sketch::Real(Mat::from_fn(p, q, |i, j| m[(rows[i], j)])),
            Action::Srft { rows, phases, fft } => {
                let mut y = Mat::<c64>::zeros(p, q);
                let mut buf = vec![c64::new(0.0, 0.0); n];
                let mut scratch = vec![c64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
                for c in 0..q {
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = phases[k] * m[(k, c)];
                    }
                    fft.process_with_scratch(&mut buf, &mut scratch);
                    for (i, &r) in rows.iter().enumerate() {
                        y[(i, c)] = buf[r];
                    }
                }
                Sketch::Complex(y)
            }
        })
    }

    /// The operator as a dense `p x n` matrix. Intended for tests and small
    /// problems.
    pub fn materialize(&self) -> Sketch {
        let (p, n) = (self.params.p, self.params.n);
        match &self.action {
            Action::Gaussian { dense } => {
                if p * n <= GAUSSIAN_CACHE_ENTRIES {
                    Sketch::Real(dense.get_or_init(|| gaussian_rows(self.params.seed, 0, p, n)).clone())
                } else {
                    Sketch::Real(gaussian_rows(self.params.seed, 0, p, n))
                }
            }
            Action::Sparse(rows) => {
                let mut c = Mat::<f64>::zeros(p, n);
                for i in 0..p {
                    for k in rows.row_ptr[i]..rows.row_ptr[i + 1] {
                        c[(i, rows.cols[k] as usize)] = rows.signs[k];
                    }
                }
                Sketch::Real(c)
            }
            Action::SinglePixel { rows } => Sketch::Real(Mat::from_fn(p, n, |i, j| if rows[i] == j { 1.0 } else { 0.0 })),
            Action::Srft { rows, phases, .. } => Sketch::Complex(Mat::from_fn(p, n, |i, k| {
                let angle = -std::f64::consts::TAU * ((rows[i] * k) % n) as f64 / n as f64;
                c64::from_polar(1.0, angle) * phases[k]
            })),
        }
    }
}

fn column_slice<'a>(m: MatRef<'a, f64>, c: usize, scratch: &'a mut [f64]) -> &'a [f64] {
    match m.col(c).try_as_col_major() {
        Some(col) => col.as_slice(),
        None => {
            for (i, x) in scratch.iter_mut().enumerate() {
                *x = m[(i, c)];
            }
            scratch
        }
    }
}

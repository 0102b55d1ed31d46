//! Background mode selection by orthogonal matching pursuit.
//!
//! The background model is `x̂_BG = Re(Φ β̂)` where `β̂` has at most `K`
//! nonzeros and is fitted to the first frame (or its sketch).

use std::fmt;
use std::str::FromStr;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::dmd::DmdModel;
use crate::error::{CdmdError, Result};
use crate::frames_io::FrameSequence;
use crate::numkernel::lstsq_vec;
use crate::scalar::all_finite;

/// OMP stops early once the residual falls below this fraction of the
/// target norm.
pub const OMP_RELATIVE_TOL: f64 = 1e-10;

/// Output of [`omp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseAmplitudes {
    /// Coefficients over all `k` dictionary columns, zero off the support.
    pub beta: Vec<c64>,
    /// Selected columns in selection order.
    pub support: Vec<usize>,
    pub residual_norm: f64,
    /// Sparsity budget `K`.
    pub max_nonzeros: usize,
    /// Residual norm before any selection and after each one.
    pub residual_history: Vec<f64>,
}

/// Greedy sparse coding of `target` over the columns of `dictionary`.
///
/// Each step picks the column with the largest normalized correlation
/// `|⟨d_j, r⟩| / ‖d_j‖` (lowest index on ties) and refits all selected
/// coefficients by least squares.
pub fn omp(dictionary: MatRef<'_, c64>, target: &[c64], max_nonzeros: usize) -> Result<SparseAmplitudes> {
    let (rows, k) = (dictionary.nrows(), dictionary.ncols());
    if max_nonzeros == 0 || max_nonzeros > k {
        return Err(CdmdError::InvalidArgument(format!("sparsity K={max_nonzeros} outside 1..={k}")));
    }
    if target.len() != rows {
        return Err(CdmdError::Shape(format!("target has length {}, dictionary has {rows} rows", target.len())));
    }
    if !all_finite(dictionary) || target.iter().any(|z| !z.is_finite()) {
        return Err(CdmdError::NonFinite("omp input"));
    }
    let norms: Vec<f64> = (0..k)
        .map(|j| (0..rows).map(|i| dictionary[(i, j)].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    if let Some(j) = norms.iter().position(|&x| x == 0.0) {
        return Err(CdmdError::InvalidArgument(format!("dictionary column {j} is zero")));
    }

    let target_norm = vec_norm(target);
    let stop = OMP_RELATIVE_TOL * target_norm;
    let mut residual = target.to_vec();
    let mut residual_norm = target_norm;
    let mut history = vec![residual_norm];
    let mut support: Vec<usize> = Vec::new();
    let mut coefficients: Vec<c64> = Vec::new();
    let r_mat = |r: &[c64]| Mat::from_fn(rows, 1, |i, _| r[i]);

    while support.len() < max_nonzeros && residual_norm > stop {
        let corr = dictionary.adjoint() * r_mat(&residual);
        let mut best = None;
        let mut best_score = -1.0;
        for j in (0..k).filter(|j| !support.contains(j)) {
            let score = corr[(j, 0)].norm() / norms[j];
            if score > best_score {
                best_score = score;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        support.push(j);
        let sub = Mat::from_fn(rows, support.len(), |i, c| dictionary[(i, support[c])]);
        coefficients = lstsq_vec(sub.as_ref(), target)?;
        let fit = &sub * Mat::from_fn(support.len(), 1, |i, _| coefficients[i]);
        for i in 0..rows {
            residual[i] = target[i] - fit[(i, 0)];
        }
        residual_norm = vec_norm(&residual);
        history.push(residual_norm);
    }

    let mut beta = vec![c64::new(0.0, 0.0); k];
    for (&j, &c) in support.iter().zip(&coefficients) {
        beta[j] = c;
    }
    Ok(SparseAmplitudes { beta, support, residual_norm, max_nonzeros, residual_history: history })
}

fn vec_norm(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Which modes and first snapshot drive the selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSource {
    /// `Φ` against `x₁`.
    #[default]
    FullModes,
    /// `Φ_Y` against `y₁`.
    CompressedModes,
}

impl FromStr for ModeSource {
    type Err = CdmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_modes" => Ok(ModeSource::FullModes),
            "compressed" | "compressed_modes" => Ok(ModeSource::CompressedModes),
            other => Err(CdmdError::InvalidArgument(format!("unknown mode source `{other}`"))),
        }
    }
}

impl fmt::Display for ModeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeSource::FullModes => "full_modes",
            ModeSource::CompressedModes => "compressed_modes",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BackgroundModel {
    /// `Re(Φ β̂)`, one value per pixel.
    pub background: Vec<f64>,
    pub beta: SparseAmplitudes,
    pub source: ModeSource,
}

/// Runs OMP with budget `max_nonzeros` and synthesizes the background from
/// the full modes. `frames` supplies `x₁` for the full-mode source.
pub fn select_background(
    model: &DmdModel,
    max_nonzeros: usize,
    source: ModeSource,
    frames: &FrameSequence,
) -> Result<BackgroundModel> {
    if frames.n_pixels() != model.n_pixels() {
        return Err(CdmdError::Shape(format!(
            "model has {} pixels, frames have {}",
            model.n_pixels(),
            frames.n_pixels()
        )));
    }
    let beta = match source {
        ModeSource::FullModes => {
            let x1: Vec<c64> = frames.frame(0).iter().map(|&x| c64::new(x, 0.0)).collect();
            omp(model.modes.as_ref(), &x1, max_nonzeros)?
        }
        ModeSource::CompressedModes => {
            let (Some(phi_y), Some(y1)) = (&model.modes_compressed, &model.first_compressed) else {
                return Err(CdmdError::InvalidArgument(
                    "compressed-mode selection needs a compressed DMD model".into(),
                ));
            };
            omp(phi_y.as_ref(), y1, max_nonzeros)?
        }
    };
    let background = synthesize(model, &beta.beta);
    Ok(BackgroundModel { background, beta, source })
}

fn synthesize(model: &DmdModel, beta: &[c64]) -> Vec<f64> {
    let support: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != c64::new(0.0, 0.0)).collect();
    let n = model.n_pixels();
    let mut out = vec![0.0; n];
    for &j in &support {
        let b = beta[j];
        for (i, o) in out.iter_mut().enumerate() {
            *o += (model.modes[(i, j)] * b).re;
        }
    }
    out
}

/// Result of the sparsity grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityScan {
    pub best: usize,
    /// `(K, score)` for each candidate; lower is better.
    pub scores: Vec<(usize, f64)>,
}

/// Picks `K ∈ 1..=k` by scoring each background against held-out frames
/// (every fifth frame: indices 4, 9, 14, ...). A frame's error is the median
/// absolute pixel difference, robust to foreground; the score is the mean
/// over held-out frames. Ties go to the smaller `K`.
pub fn cross_validate_sparsity(model: &DmdModel, source: ModeSource, frames: &FrameSequence) -> Result<SparsityScan> {
    let held_out: Vec<usize> = (4..frames.n_frames()).step_by(5).collect();
    let held_out = if held_out.is_empty() { vec![frames.n_frames() - 1] } else { held_out };
    let mut scores = Vec::with_capacity(model.rank());
    for k in 1..=model.rank() {
        let bg = select_background(model, k, source, frames)?;
        let mut total = 0.0;
        for &t in &held_out {
            let mut diffs: Vec<f64> = frames.frame(t).iter().zip(&bg.background).map(|(x, b)| (x - b).abs()).collect();
            diffs.sort_by(f64::total_cmp);
            total += diffs[diffs.len() / 2];
        }
        scores.push((k, total / held_out.len() as f64));
    }
    let best = scores
        .iter()
        .fold(None::<(usize, f64)>, |acc, &(k, s)| match acc {
            Some((_, bs)) if bs <= s => acc,
            _ => Some((k, s)),
        })
        .map(|(k, _)| k)
        .unwrap_or(1);
    Ok(SparsityScan { best, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmd::{dmd_compressed, dmd_exact, DmdOptions};
    use crate::frames_io::split_snapshots;
    use crate::sensing::{make_sensing, SensingKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn c(x: f64) -> c64 {
        c64::new(x, 0.0)
    }

    fn random_dict(rows: usize, cols: usize, seed: u64) -> Mat<c64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
    }

    #[test]
    fn identity_dictionary() {
        let d = Mat::<c64>::identity(3, 3);
        let r = omp(d.as_ref(), &[c(0.0), c(5.0), c(0.0)], 1).unwrap();
        assert_eq!(r.support, vec![1]);
        assert_eq!(r.beta, vec![c(0.0), c(5.0), c(0.0)]);
        assert_eq!(r.residual_norm, 0.0);
    }

    #[test]
    fn argument_errors() {
        let d = Mat::<c64>::identity(3, 3);
        let t = [c(1.0); 3];
        assert!(omp(d.as_ref(), &t, 0).is_err());
        assert!(omp(d.as_ref(), &t, 4).is_err());
        assert!(omp(d.as_ref(), &t[..2], 1).is_err());
        let mut z = d.clone();
        z[(1, 1)] = c(0.0);
        assert!(omp(z.as_ref(), &t, 1).is_err());
    }

    #[test]
    fn ties_pick_lowest_index() {
        let d = Mat::<c64>::identity(2, 2);
        let r = omp(d.as_ref(), &[c(1.0), c(1.0)], 1).unwrap();
        assert_eq!(r.support, vec![0]);
    }

    #[test]
    fn full_budget_equals_lstsq() {
        let d = random_dict(30, 6, 1);
        let t: Vec<c64> = random_dict(30, 1, 2).col_as_slice(0).to_vec();
        let r = omp(d.as_ref(), &t, 6).unwrap();
        let x = lstsq_vec(d.as_ref(), &t).unwrap();
        let fit = &d * Mat::from_fn(6, 1, |i, _| x[i]);
        let res: f64 = (0..30).map(|i| (t[i] - fit[(i, 0)]).norm_sqr()).sum::<f64>().sqrt();
        assert!((r.residual_norm - res).abs() < 1e-10 * res);
    }

    #[test]
    fn residual_orthogonal_to_selection() {
        let d = random_dict(40, 8, 3);
        let t: Vec<c64> = random_dict(40, 1, 4).col_as_slice(0).to_vec();
        let tn = vec_norm(&t);
        for k in 1..=8 {
            let r = omp(d.as_ref(), &t, k).unwrap();
            let fit = &d * Mat::from_fn(8, 1, |i, _| r.beta[i]);
            let res = Mat::from_fn(40, 1, |i, _| t[i] - fit[(i, 0)]);
            let sub = Mat::from_fn(40, r.support.len(), |i, c| d[(i, r.support[c])]);
            let proj = sub.adjoint() * &res;
            assert!(proj.norm_l2() <= 1e-8 * tn);
            for w in r.residual_history.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    fn static_frames() -> FrameSequence {
        let n = 64;
        let frame: Vec<f64> = (0..n).map(|i| 40.0 + 3.0 * i as f64).collect();
        FrameSequence::new(Mat::from_fn(n, 10, |i, _| frame[i]), 8, 8, 1.0).unwrap()
    }

    #[test]
    fn static_background() {
        let frames = static_frames();
        let model = dmd_exact(&split_snapshots(&frames).unwrap(), &DmdOptions::default()).unwrap();
        let bg = select_background(&model, 1, ModeSource::FullModes, &frames).unwrap();
        for (b, x) in bg.background.iter().zip(frames.frame(0)) {
            assert!((b - x).abs() < 1e-6);
        }
        let c = make_sensing(SensingKind::Sparse, 20, 64, 1, None).unwrap();
        let model = dmd_compressed(&split_snapshots(&frames).unwrap(), &c, &DmdOptions::default()).unwrap();
        let bg = select_background(&model, 1, ModeSource::CompressedModes, &frames).unwrap();
        for (b, x) in bg.background.iter().zip(frames.frame(0)) {
            assert!((b - x).abs() < 1e-6);
        }
    }

    #[test]
    fn compressed_source_needs_compressed_model() {
        let frames = static_frames();
        let model = dmd_exact(&split_snapshots(&frames).unwrap(), &DmdOptions::default()).unwrap();
        assert!(select_background(&model, 1, ModeSource::CompressedModes, &frames).is_err());
    }

    #[test]
    fn cross_validation_prefers_smallest_on_ties() {
        let frames = static_frames();
        let model = dmd_exact(&split_snapshots(&frames).unwrap(), &DmdOptions::default()).unwrap();
        let scan = cross_validate_sparsity(&model, ModeSource::FullModes, &frames).unwrap();
        assert_eq!(scan.best, 1);
        assert_eq!(scan.scores.len(), model.rank());
    }
}

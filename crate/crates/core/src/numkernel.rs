//! Dense kernels consumed by the DMD algorithms: truncated SVD, small
//! non-symmetric eigendecomposition, least squares through the pseudoinverse
//! and the optimal hard-threshold rank rule.
//!
//! Factorizations are delegated to `faer`; this module fixes the conventions
//! on top of it (ordering, signs, truncation, conjugate pairing, residual
//! diagnostics).

use faer::{c64, Mat, MatRef};

use crate::error::{CdmdError, Result};
use crate::scalar::{all_finite, Scalar};

/// Relative residual allowed for an eigenpair before it is flagged.
pub const EIG_RESIDUAL_TOL: f64 = 1e-8;

/// Top singular triplets `U diag(S) V*` of a matrix.
#[derive(Clone, Debug)]
pub struct TruncatedSvd<T> {
    pub u: Mat<T>,
    pub s: Vec<f64>,
    pub v: Mat<T>,
}

impl<T: Scalar> TruncatedSvd<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.s.len());
        self.s.truncate(k);
        self.u = self.u.as_ref().subcols(0, k).to_owned();
        self.v = self.v.as_ref().subcols(0, k).to_owned();
        self
    }

    pub fn reconstruct(&self) -> Mat<T> {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            for i in 0..us.nrows() {
                us[(i, j)] = us[(i, j)] * T::from_re(s);
            }
        }
        &us * self.v.adjoint()
    }
}

/// Full thin SVD (all `min(rows, cols)` triplets), singular values sorted
/// nonincreasing and each left singular vector rotated so that its
/// largest-magnitude entry is real and positive.
pub fn svd_thin<T: Scalar>(m: MatRef<'_, T>) -> Result<TruncatedSvd<T>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(CdmdError::Shape("svd of an empty matrix".into()));
    }
    if !all_finite(m) {
        return Err(CdmdError::NonFinite("svd input"));
    }
    let svd = m.thin_svd().map_err(|_| CdmdError::Convergence("svd"))?;
    let s: Vec<f64> = svd.S().column_vector().iter().map(|x| x.magnitude()).collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

    let (u_in, v_in) = (svd.U(), svd.V());
    let mut u = Mat::<T>::zeros(u_in.nrows(), s.len());
    let mut v = Mat::<T>::zeros(v_in.nrows(), s.len());
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..u_in.nrows() {
            let a = u_in[(i, src)].magnitude();
            if a > best {
                best = a;
                pivot = i;
            }
        }
        let p = u_in[(pivot, src)];
        let phase = if best > 0.0 { (p / T::from_re(best)).conjugate() } else { T::from_re(1.0) };
        for i in 0..u_in.nrows() {
            u[(i, dst)] = u_in[(i, src)] * phase;
        }
        for i in 0..v_in.nrows() {
            v[(i, dst)] = v_in[(i, src)] * phase;
        }
    }
    let s = order.iter().map(|&i| s[i]).collect();
    Ok(TruncatedSvd { u, s, v })
}

/// Top-`k` singular triplets; the best rank-`k` Frobenius approximation.
pub fn svd_truncated<T: Scalar>(m: MatRef<'_, T>, k: usize) -> Result<TruncatedSvd<T>> {
    let max_k = m.nrows().min(m.ncols());
    if k == 0 || k > max_k {
        return Err(CdmdError::InvalidArgument(format!(
            "rank {k} outside 1..={max_k} for a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(svd_thin(m)?.truncate(k))
}

/// Singular values only, sorted nonincreasing.
pub fn singular_values<T: Scalar>(m: MatRef<'_, T>) -> Result<Vec<f64>> {
    if !all_finite(m) {
        return Err(CdmdError::NonFinite("svd input"));
    }
    let mut s: Vec<f64> = m
        .singular_values()
        .map_err(|_| CdmdError::Convergence("svd"))?
        .into_iter()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// All eigenpairs `A W = W diag(lambdas)` of a small dense matrix.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Unit-norm eigenvectors in columns.
    pub vectors: Mat<c64>,
    pub values: Vec<c64>,
    /// Largest `‖A w - λ w‖ / ‖A‖_F` over all pairs.
    pub max_residual: f64,
    /// Set when some residual exceeds [`EIG_RESIDUAL_TOL`] (defective or
    /// nearly defective input); the vectors are then best effort.
    pub defective: bool,
    /// `(i, j)` index pairs with `values[j] == conj(values[i])`, filled for
    /// real input only.
    pub conjugate_pairs: Vec<(usize, usize)>,
}

pub fn eig_dense<T: Scalar>(a: MatRef<'_, T>) -> Result<EigenDecomposition> {
    let k = a.nrows();
    if k == 0 || a.ncols() != k {
        return Err(CdmdError::Shape(format!(
            "eigendecomposition needs a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !all_finite(a) {
        return Err(CdmdError::NonFinite("eigendecomposition input"));
    }
    let (mut w, mut values) = T::eigen(a)?;
    if values.iter().any(|z| !z.is_finite()) {
        return Err(CdmdError::Convergence("eigendecomposition"));
    }
    for j in 0..k {
        normalize_column(&mut w, j);
    }

    let mut conjugate_pairs = Vec::new();
    if T::REAL {
        conjugate_pairs = pair_conjugates(&mut w, &mut values);
    }

    let a_c = Mat::from_fn(k, k, |i, j| a[(i, j)].to_c64());
    let norm = a_c.norm_l2().max(f64::MIN_POSITIVE);
    let aw = &a_c * &w;
    let mut max_residual: f64 = 0.0;
    for j in 0..k {
        let r: f64 = (0..k)
            .map(|i| (aw[(i, j)] - values[j] * w[(i, j)]).norm_sqr())
            .sum::<f64>()
            .sqrt();
        max_residual = max_residual.max(r / norm);
    }
    let defective = max_residual > EIG_RESIDUAL_TOL;
    if defective {
        log::warn!("eigendecomposition residual {max_residual:.3e} exceeds tolerance; matrix may be defective");
    }
    Ok(EigenDecomposition { vectors: w, values, max_residual, defective, conjugate_pairs })
}

fn normalize_column(w: &mut Mat<c64>, j: usize) {
    let norm: f64 = (0..w.nrows()).map(|i| w[(i, j)].norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for i in 0..w.nrows() {
            w[(i, j)] /= norm;
        }
    }
}

/// Makes the spectrum of a real matrix exactly closed under conjugation:
/// real eigenvalues get real eigenvectors, and the member of each complex
/// pair with negative imaginary part becomes the exact conjugate of its
/// partner.
fn pair_conjugates(w: &mut Mat<c64>, values: &mut [c64]) -> Vec<(usize, usize)> {
    let k = values.len();
    let scale = values.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let real_tol = 1e-14 * scale;
    let mut negatives: Vec<usize> = Vec::new();
    let mut positives: Vec<usize> = Vec::new();
    for j in 0..k {
        if values[j].im.abs() <= real_tol {
            values[j].im = 0.0;
            make_real_vector(w, j);
        } else if values[j].im > 0.0 {
            positives.push(j);
        } else {
            negatives.push(j);
        }
    }
    let mut pairs = Vec::with_capacity(positives.len());
    for &i in &positives {
        let target = values[i].conj();
        let best = negatives
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| (values[a] - target).norm().total_cmp(&(values[b] - target).norm()));
        let Some((slot, &j)) = best else { break };
        negatives.swap_remove(slot);
        values[j] = target;
        for r in 0..w.nrows() {
            w[(r, j)] = w[(r, i)].conj();
        }
        pairs.push((i, j));
    }
    pairs
}

fn make_real_vector(w: &mut Mat<c64>, j: usize) {
    let rows = w.nrows();
    let Some(pivot) = (0..rows).max_by(|&a, &b| w[(a, j)].norm().total_cmp(&w[(b, j)].norm())) else {
        return;
    };
    let p = w[(pivot, j)];
    if p.norm() == 0.0 {
        return;
    }
    let phase = (p / p.norm()).conj();
    for i in 0..rows {
        w[(i, j)] = c64::new((w[(i, j)] * phase).re, 0.0);
    }
    normalize_column(w, j);
}

/// Minimum-norm least-squares solution of `A x = B` through the
/// pseudoinverse. Singular values below `max(rows, cols) * eps * σ₁` are
/// treated as zero.
pub fn lstsq<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> Result<Mat<T>> {
    if a.nrows() != b.nrows() {
        return Err(CdmdError::Shape(format!(
            "lstsq: A has {} rows but B has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if !all_finite(b) {
        return Err(CdmdError::NonFinite("lstsq right-hand side"));
    }
    let svd = svd_thin(a)?;
    let cutoff = svd.s.first().copied().unwrap_or(0.0) * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let mut utb = svd.u.adjoint() * b;
    for (j, &s) in svd.s.iter().enumerate() {
        let inv = if s > cutoff { 1.0 / s } else { 0.0 };
        for c in 0..utb.ncols() {
            utb[(j, c)] = utb[(j, c)] * T::from_re(inv);
        }
    }
    Ok(&svd.v * &utb)
}

/// Vector right-hand side convenience wrapper around [`lstsq`].
pub fn lstsq_vec<T: Scalar>(a: MatRef<'_, T>, b: &[T]) -> Result<Vec<T>> {
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = lstsq(a, rhs.as_ref())?;
    Ok((0..x.nrows()).map(|i| x[(i, 0)]).collect())
}

/// Multiplier `ω(β)` of the median singular value in the unknown-noise
/// optimal hard threshold, for aspect ratio `0 < β ≤ 1`.
pub fn hard_threshold_coefficient(beta: f64) -> f64 {
    0.56 * beta.powi(3) - 0.95 * beta.powi(2) + 1.82 * beta + 1.43
}

/// Number of singular values above `ω(β)·median(S)`, at least 1.
pub fn optimal_rank(s: &[f64], rows: usize, cols: usize) -> Result<usize> {
    if s.is_empty() {
        return Err(CdmdError::InvalidArgument("optimal_rank needs at least one singular value".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(CdmdError::InvalidArgument("optimal_rank needs a nonempty matrix shape".into()));
    }
    let beta = rows.min(cols) as f64 / rows.max(cols) as f64;
    let tau = hard_threshold_coefficient(beta) * median(s);
    Ok(s.iter().filter(|&&x| x > tau).count().max(1))
}

fn median(s: &[f64]) -> f64 {
    let mut sorted = s.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

//! Element type abstraction so the reduced DMD kernels run on both real
//! sketches and the complex sketches produced by SRFT sensing.

use faer::traits::ComplexField;
use faer::{c64, Mat, MatRef};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{CdmdError, Result};

pub trait Scalar:
    ComplexField<Real = f64>
    + Copy
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    const REAL: bool;

    fn to_c64(self) -> c64;
    fn from_re(x: f64) -> Self;
    /// Nearest value of this type; drops the imaginary part for reals.
    fn from_c64(z: c64) -> Self;
    fn conjugate(self) -> Self;
    fn magnitude(self) -> f64;
    fn finite(self) -> bool;

    /// Eigenvalues and (unnormalized) eigenvectors of a square matrix.
    fn eigen(a: MatRef<'_, Self>) -> Result<(Mat<c64>, Vec<c64>)>;
}

impl Scalar for f64 {
    const REAL: bool = true;

    fn to_c64(self) -> c64 {
        c64::new(self, 0.0)
    }
    fn from_re(x: f64) -> Self {
        x
    }
    fn from_c64(z: c64) -> Self {
        z.re
    }
    fn conjugate(self) -> Self {
        self
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
    fn finite(self) -> bool {
        self.is_finite()
    }

    fn eigen(a: MatRef<'_, Self>) -> Result<(Mat<c64>, Vec<c64>)> {
        let evd = faer::linalg::solvers::Eigen::new_from_real(a)
            .map_err(|_| CdmdError::Convergence("eigendecomposition"))?;
        let values = evd.S().column_vector().iter().copied().collect();
        Ok((evd.U().to_owned(), values))
    }
}

impl Scalar for c64 {
    const REAL: bool = false;

    fn to_c64(self) -> c64 {
        self
    }
    fn from_re(x: f64) -> Self {
        c64::new(x, 0.0)
    }
    fn from_c64(z: c64) -> Self {
        z
    }
    fn conjugate(self) -> Self {
        self.conj()
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
    fn finite(self) -> bool {
        self.is_finite()
    }

    fn eigen(a: MatRef<'_, Self>) -> Result<(Mat<c64>, Vec<c64>)> {
        let evd = faer::linalg::solvers::Eigen::new(a)
            .map_err(|_| CdmdError::Convergence("eigendecomposition"))?;
        let values = evd.S().column_vector().iter().copied().collect();
        Ok((evd.U().to_owned(), values))
    }
}

pub(crate) fn all_finite<T: Scalar>(m: MatRef<'_, T>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].finite()))
}

pub(crate) fn to_complex<T: Scalar>(m: MatRef<'_, T>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].to_c64())
}

/// `a * g` for real `a` and complex `g`, done as two real products so the
/// result of conjugate columns of `g` are exact conjugates of each other.
pub(crate) fn real_times_complex(a: MatRef<'_, f64>, g: MatRef<'_, c64>) -> Mat<c64> {
    let g_re = Mat::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)].re);
    let g_im = Mat::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)].im);
    let re = a * &g_re;
    let im = a * &g_im;
    Mat::from_fn(re.nrows(), re.ncols(), |i, j| c64::new(re[(i, j)], im[(i, j)]))
}

/// `a * g` where `a` may be real or complex.
pub(crate) fn times_complex<T: Scalar>(a: MatRef<'_, T>, g: MatRef<'_, c64>) -> Mat<c64> {
    if T::REAL {
        let re = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].to_c64().re);
        real_times_complex(re.as_ref(), g)
    } else {
        to_complex(a) * g
    }
}

//! Sparse, banded and small dense linear algebra used by the rest of the crate.
//!
//! Everything here works on plain `f64` slices. Matrices coming out of the
//! finite-difference assembly are symmetric with a narrow band under the
//! natural lattice ordering, so a banded Cholesky factorization is the only
//! direct solver needed.

mod banded;
mod dense;
mod eigen;
mod sparse;

pub use banded::BandedCholesky;
pub use dense::{jacobi_eigen, solve_dense, DenseEigen};
pub use eigen::{lowest_generalized, EigenOptions, EigenPairs};
pub use sparse::CsrMatrix;

// shadowed by the inherent methods whenever std is linked into the build
#[allow(unused_imports)]
use num_traits::Float;

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Inner product weighted by a diagonal.
pub fn diag_dot(w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    w.iter().zip(x).zip(y).map(|((w, a), b)| w * a * b).sum()
}

/// Flips the sign of `x` so that its largest-magnitude entry is positive.
pub fn fix_sign(x: &mut [f64]) {
    let mut best = 0.0;
    for &v in x.iter() {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        scale(-1.0, x);
    }
}

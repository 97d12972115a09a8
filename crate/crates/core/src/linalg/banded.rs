use alloc::vec;
use alloc::vec::Vec;
// shadowed by the inherent methods whenever std is linked into the build
#[allow(unused_imports)]
use num_traits::Float;

use super::CsrMatrix;
use crate::{Error, Result};

/// Cholesky factor `L Lᵀ` of a symmetric positive-definite banded matrix.
///
/// Row `i` of `L` is stored densely over columns `i - bw ..= i`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    lower: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: a.ncols() });
        }
        let bw = a.bandwidth();
        let width = bw + 1;
        let mut lower = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    lower[i * width + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = lower[i * width + (j + bw - i)];
                for k in lo..j {
                    s -= lower[i * width + (k + bw - i)] * lower[j * width + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    lower[i * width + bw] = s.sqrt();
                } else {
                    lower[i * width + (j + bw - i)] = s / lower[j * width + bw];
                }
            }
        }
        Ok(Self { n, bw, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let (bw, width) = (self.bw, self.bw + 1);
        for i in 0..self.n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.lower[i * width + (k + bw - i)] * x[k];
            }
            x[i] = s / self.lower[i * width + bw];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + 1 + bw).min(self.n) {
                s -= self.lower[k * width + (i + bw - k)] * x[k];
            }
            x[i] = s / self.lower[i * width + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        let n = 6;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let chol = BandedCholesky::factor(&a).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let b = a.mul_vec(&x_true);
        let x = chol.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(BandedCholesky::factor(&a), Err(Error::NotPositiveDefinite { row: 1, .. })));
    }
}

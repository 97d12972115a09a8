use alloc::vec;
use alloc::vec::Vec;
// shadowed by the inherent methods whenever std is linked into the build
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{axpy, diag_dot, jacobi_eigen, BandedCholesky, CsrMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Relative residual `‖θ A⁻¹B x − x‖_B` at which a pair counts as converged.
    pub tol: f64,
    pub max_iters: usize,
    /// Extra block vectors beyond the number requested.
    pub guard: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 2000, guard: 6, seed: 0x6b77_6c00 }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// B-orthonormal, A-orthogonal.
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
    pub max_residual: f64,
}

/// The `count` smallest eigenpairs of `A x = θ B x` with `A` SPD and `B` a
/// nonnegative diagonal, by block inverse subspace iteration with
/// Rayleigh-Ritz projection. `factor` must be the Cholesky factor of `A`.
///
/// Only the part of the spectrum where `B` is positive is reachable; the
/// block size is clipped to the rank of `B`.
pub fn lowest_generalized(
    a: &CsrMatrix,
    factor: &BandedCholesky,
    b: &[f64],
    count: usize,
    opts: &EigenOptions,
) -> Result<EigenPairs> {
    let n = a.nrows();
    if b.len() != n || factor.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.len() });
    }
    let rank = b.iter().filter(|&&w| w > 0.0).count();
    if count == 0 || count > rank {
        return Err(Error::SubspaceTooSmall { available: rank, required: count.max(1) });
    }
    let block = (count + opts.guard.max(count / 2)).min(rank);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..block).map(|_| random_vector(&mut rng, n)).collect();
    let mut theta = vec![0.0; block];
    let mut residual = f64::INFINITY;

    for iter in 0..opts.max_iters {
        // Y = A⁻¹ B X
        let mut y: Vec<Vec<f64>> = x
            .iter()
            .map(|xi| {
                let mut yi: Vec<f64> = xi.iter().zip(b).map(|(v, w)| v * w).collect();
                factor.solve_in_place(&mut yi);
                yi
            })
            .collect();
        if iter > 0 {
            residual = (0..count)
                .map(|k| {
                    let d: Vec<f64> = y[k].iter().zip(&x[k]).map(|(yk, xk)| theta[k] * yk - xk).collect();
                    diag_dot(b, &d, &d).sqrt()
                })
                .fold(0.0, f64::max);
            if residual <= opts.tol {
                x.truncate(count);
                theta.truncate(count);
                return Ok(EigenPairs { values: theta, vectors: x, iterations: iter, max_residual: residual });
            }
        }
        b_orthonormalize(&mut y, b, &mut rng);
        let ay: Vec<Vec<f64>> = y.iter().map(|yi| a.mul_vec(yi)).collect();
        let mut projected = vec![0.0; block * block];
        for i in 0..block {
            for j in 0..=i {
                let v = super::dot(&y[i], &ay[j]);
                projected[i * block + j] = v;
                projected[j * block + i] = v;
            }
        }
        let eig = jacobi_eigen(&projected, block);
        x = eig
            .vectors
            .iter()
            .map(|c| {
                let mut v = vec![0.0; n];
                for (cj, yj) in c.iter().zip(&y) {
                    axpy(*cj, yj, &mut v);
                }
                v
            })
            .collect();
        theta = eig.values;
    }
    Err(Error::EigenNoConvergence { iterations: opts.max_iters, residual })
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Modified Gram-Schmidt in the `B` inner product, two passes. Columns that
/// collapse are replaced by fresh random vectors.
fn b_orthonormalize(y: &mut [Vec<f64>], b: &[f64], rng: &mut ChaCha8Rng) {
    for j in 0..y.len() {
        for attempt in 0..4 {
            let before = diag_dot(b, &y[j], &y[j]).sqrt();
            for _pass in 0..2 {
                for i in 0..j {
                    let (head, tail) = y.split_at_mut(j);
                    let c = diag_dot(b, &head[i], &tail[0]);
                    axpy(-c, &head[i], &mut tail[0]);
                }
            }
            let after = diag_dot(b, &y[j], &y[j]).sqrt();
            if after > 1e-10 * before && after > 0.0 {
                let inv = 1.0 / after;
                y[j].iter_mut().for_each(|v| *v *= inv);
                break;
            }
            let n = y[j].len();
            y[j] = random_vector(rng, n);
            debug_assert!(attempt < 3, "could not complete B-orthonormal basis");
        }
    }
}

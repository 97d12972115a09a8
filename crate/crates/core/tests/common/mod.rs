#![allow(dead_code)]

use kwl_core::{Grid, PotentialWell};
use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

pub const HALF_PI: f64 = PI / 2.0;

/// Interval well `(-π/2, π/2)` with a steep ramp.
pub fn steep_well(a0: f64, lambda: f64) -> PotentialWell {
    PotentialWell { dim: 1, omega_halfwidth: HALF_PI, ramp_width: 0.25, cap: 20.0, a_inf: 1.0, a0, lambda }
}

/// The gentle well used by the validation examples.
pub fn gentle_well(a0: f64, lambda: f64) -> PotentialWell {
    PotentialWell { dim: 1, omega_halfwidth: HALF_PI, ramp_width: 1.0, cap: 2.0, a_inf: 1.0, a0, lambda }
}

pub fn aligned_grid(n: usize) -> Grid {
    Grid::aligned(1, n, HALF_PI, HALF_PI + 1.0).unwrap()
}

pub fn staggered_grid(n: usize) -> Grid {
    Grid::staggered(1, n, HALF_PI, HALF_PI + 1.0).unwrap()
}

/// Smallest generalized eigenvalues of `A x = β B x` with `A` SPD and `B`
/// positive semidefinite, through the dense symmetric problem
/// `L⁻¹ B L⁻ᵀ y = (1/β) y`.
pub fn dense_lowest(a: &DMatrix<f64>, b: &DMatrix<f64>, count: usize) -> Vec<f64> {
    let l = a.clone().cholesky().expect("A must be SPD").l();
    let linv = l.try_inverse().unwrap();
    let c = &linv * b * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut mu: Vec<f64> = eig.eigenvalues.iter().copied().filter(|m| *m > 1e-12).collect();
    mu.sort_by(|x, y| y.partial_cmp(x).unwrap());
    mu.iter().take(count).map(|m| 1.0 / m).collect()
}

pub fn dense(m: &kwl_core::linalg::CsrMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.nrows(), m.ncols(), &m.to_dense())
}

/// Even positive solution of
/// `-(α ∫u'² + 1) u'' + V(x) u = |u|^{p-2} u` on `(-L, L)`, `u(±L) = 0`,
/// by shooting from the centre (bisection on `u(0)`) inside a fixed point
/// iteration on the Kirchhoff coefficient. `breaks` are points in `(0, L)`
/// where `V` has reduced smoothness; steps are aligned with them.
pub struct Shooting {
    pub energy: f64,
    pub amplitude: f64,
    pub grad_sq: f64,
}

pub fn shoot(v: &dyn Fn(f64) -> f64, half_length: f64, breaks: &[f64], alpha: f64, p: f64) -> Shooting {
    let mut knots = vec![0.0];
    knots.extend(breaks.iter().copied().filter(|b| *b > 0.0 && *b < half_length));
    knots.push(half_length);
    // state: u, u', ∫u'², ∫V u², ∫|u|^p
    let rhs = |x: f64, y: &[f64; 5], c: f64| -> [f64; 5] {
        let u = y[0];
        let f = v(x) * u - u.abs().powf(p - 2.0) * u;
        [y[1], f / c, y[1] * y[1], v(x) * u * u, u.abs().powf(p)]
    };
    // Integrates from 0; returns None if u changes sign before L.
    let integrate = |a: f64, c: f64| -> Option<[f64; 5]> {
        let mut y = [a, 0.0, 0.0, 0.0, 0.0];
        for seg in knots.windows(2) {
            let steps = ((seg[1] - seg[0]) / 2e-4).ceil() as usize;
            let h = (seg[1] - seg[0]) / steps as f64;
            for s in 0..steps {
                let x = seg[0] + s as f64 * h;
                let add = |y: &[f64; 5], k: &[f64; 5], f: f64| {
                    let mut o = *y;
                    for i in 0..5 {
                        o[i] += f * k[i];
                    }
                    o
                };
                let k1 = rhs(x, &y, c);
                let k2 = rhs(x + h / 2.0, &add(&y, &k1, h / 2.0), c);
                let k3 = rhs(x + h / 2.0, &add(&y, &k2, h / 2.0), c);
                let k4 = rhs(x + h, &add(&y, &k3, h), c);
                for i in 0..5 {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                if y[0] < 0.0 {
                    return None;
                }
            }
        }
        Some(y)
    };
    let mut c = 1.0;
    let mut result = None;
    for _ in 0..200 {
        let mut hi = 1.0;
        while integrate(hi, c).is_some() {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if integrate(mid, c).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let y = integrate(lo, c).unwrap();
        let (g, pot, pw) = (2.0 * y[2], 2.0 * y[3], 2.0 * y[4]);
        let next = alpha * g + 1.0;
        result = Some(Shooting { energy: 0.25 * alpha * g * g + 0.5 * (g + pot) - pw / p, amplitude: lo, grad_sq: g });
        if (next - c).abs() <= 1e-13 * c {
            break;
        }
        c = next;
    }
    result.unwrap()
}

/// The indefinite desk case: steep well with `a₀ = -2` (so `γ₁ ≈ ½`,
/// `γ₂ ≈ 2`), `λ = 10⁵`, `p = 5`, staggered grid with 512 points.
pub struct Indefinite {
    pub grid: Grid,
    pub well: PotentialWell,
    pub ops: kwl_core::OperatorSet,
    pub spec: kwl_core::DirichletSpectrum,
    pub wspec: kwl_core::WellSpectrum,
    pub consts: kwl_core::EmbeddingConstants,
    pub geometry: kwl_core::LinkingGeometry,
}

pub fn indefinite(n: usize) -> Indefinite {
    use kwl_core::operators::{discrete_sobolev_constant, discrete_sobolev_p_constant};
    use kwl_core::*;
    let grid = Grid::staggered(1, n, HALF_PI, HALF_PI + 1.0).unwrap();
    let well = steep_well(-2.0, 1e5);
    let ops = assemble(&grid, &well).unwrap();
    let spec = dirichlet_spectrum(&grid, &well, 6).unwrap();
    let k = k0_star(&spec).unwrap();
    let wspec = well_spectrum(&ops, &well, k + 1).unwrap();
    let s = discrete_sobolev_constant(&ops, &grid, &well).unwrap();
    let s_p = discrete_sobolev_p_constant(&ops, 5.0, 200).unwrap();
    let consts = embedding_constants(&well, well.lambda, s, s_p).unwrap();
    let params = ProblemParams::new(5.0, 1.0).unwrap();
    let geometry = linking_geometry(&consts, &spec, &params, 10_000, 7).unwrap();
    Indefinite { grid, well, ops, spec, wspec, consts, geometry }
}

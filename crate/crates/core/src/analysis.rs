//! Explicit constants of the linking geometry, the a priori bound on
//! Palais-Smale sequences, the computable nontriviality threshold and the
//! λ → ∞ concentration sweep.

use alloc::vec;
use alloc::vec::Vec;
// shadowed by the inherent methods whenever std is linked into the build
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Grid, PotentialWell, ProblemParams};
use crate::linalg::{axpy, dot};
use crate::operators::{assemble, EmbeddingConstants, OperatorSet};
use crate::solver::{solve_well_with, SolutionRecord, SolverSettings};
use crate::spectrum::{combine, k0_star, project_coefficients, DirichletSpectrum, WellSpectrum};
use crate::{Error, Result};

fn check_exponent(p: f64) -> Result<()> {
    if p > 4.0 && p < 6.0 {
        Ok(())
    } else {
        Err(Error::BadExponent { p })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkingGeometry {
    /// Radius of the sphere in the high subspace.
    pub rho: f64,
    /// Energy floor on that sphere.
    pub d0: f64,
    /// Smallest `L^p` norm on the unit sphere of the unstable span.
    pub m_lp: f64,
    /// Radius beyond which the quadratic-minus-power part is nonpositive.
    pub r_star: f64,
    pub r0: f64,
    pub alpha0: f64,
    /// Fraction of the first bracket term kept when choosing ρ.
    pub split: f64,
    pub k0_star: usize,
    pub gamma: f64,
    pub sobolev: f64,
    pub sobolev_p: f64,
    pub d_lambda: f64,
    pub p: f64,
}

impl LinkingGeometry {
    /// Upper end of the admissible energy window for the minimax level.
    pub fn energy_ceiling(&self, alpha: f64) -> f64 {
        0.25 * alpha * self.r0.powi(4) + 0.5 * (1.0 - 1.0 / self.gamma) * self.r0 * self.r0
    }
}

/// `ρ` and `d₀` from `γ_{k₀*}`, `S_p`, `d_λ` and `p`.
pub fn sphere_constants(gamma: f64, sobolev_p: f64, d_lambda: f64, p: f64) -> Result<(f64, f64)> {
    check_exponent(p)?;
    if !(gamma > 1.0) {
        return Err(Error::GammaBelowOne { gamma });
    }
    let gap = 1.0 - 1.0 / gamma;
    let rho = (gap * sobolev_p.powf(p / 2.0) / (8.0 * (1.0 + d_lambda * d_lambda).powf(p / 2.0))).powf(1.0 / (p - 2.0));
    Ok((rho, rho * rho * gap / 8.0))
}

/// `(R*, R₀, α₀)` from the sphere constants and the `L^p` floor `M`.
pub fn expanding_constants(rho: f64, d0: f64, gamma: f64, m_lp: f64, p: f64) -> (f64, f64, f64) {
    let gap = 1.0 - 1.0 / gamma;
    let r_star = (p * gap / (2.0 * m_lp.powf(p))).powf(1.0 / (p - 2.0));
    let r0 = r_star.max(rho * (1.0 + 1e-9));
    (r_star, r0, 2.0 * d0 / r0.powi(4))
}

/// Linking constants for the Dirichlet spectrum `spec`; `M` is estimated by
/// minimizing `‖u‖_p` over `samples` random points of the unit gradient
/// sphere of `span{φ_{i,j} : i ≤ k₀*}`, followed by a local polish.
pub fn linking_geometry(
    consts: &EmbeddingConstants,
    spec: &DirichletSpectrum,
    params: &ProblemParams,
    samples: usize,
    seed: u64,
) -> Result<LinkingGeometry> {
    let k = k0_star(spec)?;
    let gamma = spec.gamma(k);
    let (rho, d0) = sphere_constants(gamma, consts.sobolev_p, consts.d_lambda, params.p)?;
    let m_lp = min_lp_on_span(spec, k, params.p, samples.max(1), seed);
    let (r_star, r0, alpha0) = expanding_constants(rho, d0, gamma, m_lp, params.p);
    Ok(LinkingGeometry {
        rho,
        d0,
        m_lp,
        r_star,
        r0,
        alpha0,
        split: 0.5,
        k0_star: k,
        gamma,
        sobolev: consts.sobolev,
        sobolev_p: consts.sobolev_p,
        d_lambda: consts.d_lambda,
        p: params.p,
    })
}

/// Gradient-normalized basis `φ_j / sqrt(γ_j)` of the first `k` levels.
fn unit_gradient_basis(spec: &DirichletSpectrum, k: usize) -> Vec<Vec<f64>> {
    (1..=k)
        .flat_map(|m| {
            let s = spec.gamma(m).sqrt();
            spec.level(m).iter().map(move |v| v.iter().map(|x| x / s).collect())
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
}

/// Uniform point on the unit sphere of `ℝ^dim`.
pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn min_lp_on_span(spec: &DirichletSpectrum, k: usize, p: f64, samples: usize, seed: u64) -> f64 {
    let basis = unit_gradient_basis(spec, k);
    let dim = basis.len();
    let len = basis[0].len();
    let vol = spec.cell_volume;
    let point = |c: &[f64]| {
        let mut u = vec![0.0; len];
        for (ci, b) in c.iter().zip(&basis) {
            axpy(*ci, b, &mut u);
        }
        u
    };
    let power = |c: &[f64]| vol * point(c).iter().map(|x| x.abs().powf(p)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_c = random_unit(&mut rng, dim);
    let mut best = power(&best_c);
    for _ in 1..samples {
        let c = random_unit(&mut rng, dim);
        let v = power(&c);
        if v < best {
            best = v;
            best_c = c;
        }
    }
    // projected gradient descent on the sphere
    let mut step = 0.1;
    for _ in 0..500 {
        if dim == 1 {
            break;
        }
        let u = point(&best_c);
        let w: Vec<f64> = u.iter().map(|x| p * vol * x.abs().powf(p - 2.0) * x).collect();
        let mut g: Vec<f64> = basis.iter().map(|b| dot(b, &w)).collect();
        let radial = dot(&g, &best_c);
        axpy(-radial, &best_c, &mut g);
        let gn = dot(&g, &g).sqrt();
        if gn <= 1e-14 * best.max(1e-300) {
            break;
        }
        let mut improved = false;
        while step > 1e-12 {
            let mut c: Vec<f64> = best_c.iter().zip(&g).map(|(a, b)| a - step * b / gn).collect();
            let n = dot(&c, &c).sqrt();
            c.iter_mut().for_each(|x| *x /= n);
            let v = power(&c);
            if v < best {
                best = v;
                best_c = c;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    best.powf(1.0 / p)
}

/// Extremes of the energy over random samples of the two linking sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometrySample {
    /// Smallest `J` on the ρ-sphere of the high subspace.
    pub sphere_min: f64,
    /// Largest `J` on the boundary of the expanding set of radius `R₀`.
    pub boundary_max: f64,
    pub samples: usize,
}

/// Samples `J` on the ρ-sphere of the E_λ-complement of
/// `span{e_1, …, e_{k₀*-1}}` and on the boundary of
/// `{v + t e_{k₀*} : v ∈ span{e_1, …, e_{k₀*-1}}, t ≥ 0, ‖·‖_λ ≤ R₀}`.
///
/// Sphere points mix the captured levels from `k₀*` upward with nodal noise
/// of random weight, so smooth and rough directions are both visited.
/// Boundary points alternate between the base disc's rim (`t = 0`) and the
/// cap (`t > 0`).
pub fn sample_linking_geometry(
    ops: &OperatorSet,
    params: &ProblemParams,
    wspec: &WellSpectrum,
    geometry: &LinkingGeometry,
    samples: usize,
    seed: u64,
) -> Result<GeometrySample> {
    let k = geometry.k0_star;
    if wspec.levels.len() < k {
        return Err(Error::SubspaceTooSmall { available: wspec.levels.len(), required: k });
    }
    let len = ops.len();
    let low = wspec.basis_through(k - 1);
    let high: Vec<&[f64]> = wspec.levels[k - 1..].iter().flat_map(|l| l.basis.iter().map(Vec::as_slice)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scaled = |u: Vec<f64>, radius: f64| {
        let n = ops.norm_sq(&u).sqrt();
        u.into_iter().map(|x| x * radius / n).collect::<Vec<f64>>()
    };
    let mut sphere_min = f64::INFINITY;
    let mut boundary_max = f64::NEG_INFINITY;
    for i in 0..samples {
        // sphere
        let coeffs = random_unit(&mut rng, high.len());
        let mut u = combine(&high, &coeffs, len);
        let unit = ops.norm_sq(&u).sqrt();
        let noise_weight = rng.random::<f64>() * unit / (len as f64).sqrt();
        let noise = random_unit(&mut rng, len);
        axpy(noise_weight, &noise, &mut u);
        let c = project_coefficients(&low, &u, |x, y| ops.inner(x, y));
        axpy(-1.0, &combine(&low, &c, len), &mut u);
        sphere_min = sphere_min.min(ops.energy(params, &scaled(u, geometry.rho)));
        // boundary
        let mut coeffs = random_unit(&mut rng, k);
        if i % 2 == 0 || k == 1 {
            coeffs[k - 1] = coeffs[k - 1].abs();
        } else {
            coeffs[k - 1] = 0.0;
        }
        let mut basis = low.clone();
        basis.push(wspec.minimizer(k));
        let v = combine(&basis, &coeffs, len);
        if ops.norm_sq(&v) > 0.0 {
            boundary_max = boundary_max.max(ops.energy(params, &scaled(v, geometry.r0)));
        }
    }
    Ok(GeometrySample { sphere_min, boundary_max, samples })
}

/// Bound on `α‖∇u‖⁴ + ‖u‖_λ²` along Palais-Smale sequences at levels up to
/// `c_cap`:
/// `8p/(p−4) · (c_cap + 2(p−2)² a₀² |A_∞|^{4/3} S⁻² / (α(p−4)p))`.
pub fn ps_bound(alpha: f64, c_cap: f64, a0: f64, measure_a_inf: f64, sobolev: f64, p: f64) -> Result<f64> {
    check_exponent(p)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter { name: "alpha", reason: "must be positive" });
    }
    let offset = if a0 == 0.0 {
        0.0
    } else {
        2.0 * (p - 2.0).powi(2) * a0 * a0 * measure_a_inf.powf(4.0 / 3.0) / (sobolev * sobolev * alpha * (p - 4.0) * p)
    };
    Ok(8.0 * p / (p - 4.0) * (c_cap + offset))
}

/// Smallest λ with `S^{−3(p−2)/4} B^{(5p−10)/8} (a₀ + a_∞λ)^{−(6−p)/4} < ½`,
/// never below `max(0, −a₀/a_∞)`.
pub fn nontriviality_threshold(p: f64, sobolev: f64, a0: f64, a_inf: f64, ps_b: f64) -> Result<f64> {
    check_exponent(p)?;
    if !(a_inf > 0.0 && sobolev > 0.0) {
        return Err(Error::InvalidParameter { name: "a_inf", reason: "a_inf and S must be positive" });
    }
    let floor = (-a0 / a_inf).max(0.0);
    if !(ps_b > 0.0) {
        return Ok(floor);
    }
    let x = (2.0 * sobolev.powf(-3.0 * (p - 2.0) / 4.0) * ps_b.powf((5.0 * p - 10.0) / 8.0)).powf(4.0 / (6.0 - p));
    Ok(((x - a0) / a_inf).max(floor))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRow {
    pub lambda: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub nehari_defect: f64,
    pub mass_outside: f64,
    pub h1_dist_rel: f64,
    /// `∫ λ a u²`
    pub well_energy: f64,
    /// Outside the guaranteed regime, or the solve failed.
    pub flagged: bool,
    pub failure: Option<Error>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub settings: SolverSettings,
    pub warm_start: bool,
    /// Rows with λ below this are flagged.
    pub lambda_min: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { settings: SolverSettings::default(), warm_start: true, lambda_min: None }
    }
}

/// Relative H¹ distance from `u` to `target`, minimized over the sign and the
/// reflection symmetries of the box (the limit is only determined up to them).
pub fn h1_distance_rel(ops: &OperatorSet, grid: &Grid, u: &[f64], target: &[f64]) -> f64 {
    let base = ops.h1_sq(target).sqrt();
    let mut best = f64::INFINITY;
    for mask in 0..(1u8 << grid.dim()) {
        let reflected: Vec<f64> = (0..grid.len()).map(|i| target[grid.reflect(i, mask)]).collect();
        for sign in [1.0, -1.0] {
            let diff: Vec<f64> = u.iter().zip(&reflected).map(|(a, b)| a - sign * b).collect();
            best = best.min(ops.h1_sq(&diff).sqrt());
        }
    }
    best / base
}

pub fn concentration_row(
    grid: &Grid,
    ops: &OperatorSet,
    rec: &SolutionRecord,
    limit: &SolutionRecord,
    lambda_min: Option<f64>,
) -> ConcentrationRow {
    ConcentrationRow {
        lambda: rec.lambda,
        energy: rec.energy,
        grad_norm: rec.grad_norm,
        nehari_defect: rec.nehari_defect,
        mass_outside: rec.mass_outside,
        h1_dist_rel: h1_distance_rel(ops, grid, &rec.u, &limit.u),
        well_energy: ops.well_energy(&rec.u),
        flagged: lambda_min.is_some_and(|m| rec.lambda < m),
        failure: None,
    }
}

fn failed_row(lambda: f64, err: Error) -> ConcentrationRow {
    ConcentrationRow {
        lambda,
        energy: f64::NAN,
        grad_norm: f64::NAN,
        nehari_defect: f64::NAN,
        mass_outside: f64::NAN,
        h1_dist_rel: f64::NAN,
        well_energy: f64::NAN,
        flagged: true,
        failure: Some(err),
    }
}

/// Solves at every λ of an increasing list and compares with the limit
/// record. A failed solve produces a flagged row and the sweep continues.
pub fn concentration_sweep(
    grid: &Grid,
    template: &PotentialWell,
    params: &ProblemParams,
    lambdas: &[f64],
    limit: &SolutionRecord,
    opts: &SweepOptions,
) -> Result<Vec<ConcentrationRow>> {
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter { name: "lambda_list", reason: "must be strictly increasing" });
    }
    let mut warm: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let well = template.with_lambda(lambda);
        let solved = assemble(grid, &well).and_then(|ops| {
            let rec = solve_well_with(grid, &ops, &well, params, &opts.settings, warm.as_deref())?;
            Ok((ops, rec))
        });
        match solved {
            Ok((ops, rec)) => {
                rows.push(concentration_row(grid, &ops, &rec, limit, opts.lambda_min));
                if opts.warm_start {
                    warm = Some(rec.u);
                }
            }
            Err(e) => rows.push(failed_row(lambda, e)),
        }
    }
    Ok(rows)
}

/// Trend statistics of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub mass_first: f64,
    pub mass_final: f64,
    pub h1_first: f64,
    pub h1_final: f64,
    /// `∫λa u²` strictly decreasing over rows with λ in the top decade.
    pub well_energy_top_decade_decreasing: bool,
    pub failures: usize,
}

pub fn sweep_summary(rows: &[ConcentrationRow]) -> Option<SweepSummary> {
    let ok: Vec<&ConcentrationRow> = rows.iter().filter(|r| r.failure.is_none()).collect();
    let (first, last) = (ok.first()?, ok.last()?);
    let top: Vec<f64> =
        ok.iter().filter(|r| r.lambda >= last.lambda / 10.0 * (1.0 - 1e-12)).map(|r| r.well_energy).collect();
    Some(SweepSummary {
        mass_first: first.mass_outside,
        mass_final: last.mass_outside,
        h1_first: first.h1_dist_rel,
        h1_final: last.h1_dist_rel,
        well_energy_top_decade_decreasing: top.len() >= 2 && top.windows(2).all(|w| w[1] < w[0]),
        failures: rows.len() - ok.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_constants_arithmetic() {
        let (rho, d0) = sphere_constants(2.0, 1.0, 1.0, 5.0).unwrap();
        let expect = (0.5 / (8.0 * 2f64.powf(2.5))).powf(1.0 / 3.0);
        assert!((rho - expect).abs() < 1e-15);
        assert!((d0 - rho * rho / 16.0).abs() < 1e-15);
        assert_eq!(sphere_constants(1.0, 1.0, 1.0, 5.0), Err(Error::GammaBelowOne { gamma: 1.0 }));
    }

    #[test]
    fn ps_bound_examples() {
        let b = ps_bound(1.0, 1.0, -1.0, 1.0, 5.0, 5.0).unwrap();
        assert!((b - 45.76).abs() < 1e-12);
        assert_eq!(ps_bound(0.3, 2.0, 0.0, 7.0, 5.0, 5.0).unwrap(), 80.0);
        assert_eq!(ps_bound(1.0, 1.0, 0.0, 1.0, 1.0, 6.0), Err(Error::BadExponent { p: 6.0 }));
    }

    #[test]
    fn threshold_closed_form() {
        let got = nontriviality_threshold(5.0, 5.0, -1.0, 1.0, 45.76).unwrap();
        let expect = 1.0 + (2.0 * 5f64.powf(-9.0 / 4.0) * 45.76f64.powf(15.0 / 8.0)).powi(4);
        assert!((got - expect).abs() < 1e-12 * expect);
        assert_eq!(nontriviality_threshold(5.0, 5.0, -1.0, 2.0, 0.0).unwrap(), 0.5);
    }
}

//! Dirichlet spectrum of the well bottom and the well spectrum `β_m(λ)`.
//!
//! The Dirichlet problem `-Δφ = γ |a₀| φ` on `Ω` is solved on the nodes
//! strictly inside `Ω`; eigenvectors are normalized by `|a₀| φᵀMφ = 1` and
//! zero-extended to the full grid.
//!
//! `β_1(λ)` minimizes `‖u‖_λ²` over `F_λ^⊥ ∩ {D_λ(u,u) = 1}`. Since any `u`
//! splits E_λ-orthogonally as `f + g` with `f ∈ F_λ` (supported off `A_λ`) and
//! `g ∈ F_λ^⊥`, and `D_λ(u,u) = D_λ(g,g)`, the constrained minima are the
//! lowest generalized eigenvalues of `(K + M⁺) x = β M⁻ x`. Inverse
//! iteration with `(K + M⁺)⁻¹ M⁻` keeps every iterate inside
//! `range((K + M⁺)⁻¹M⁻) = F_λ^⊥`, and successive eigenvalue clusters are
//! the deflated levels `β_2, β_3, …` with their level subspaces.

use alloc::vec;
use alloc::vec::Vec;
// shadowed by the inherent methods whenever std is linked into the build
#[allow(unused_imports)]
use num_traits::Float;

use crate::domain::{omega_nodes, Grid, PotentialWell};
use crate::linalg::{dot, fix_sign, lowest_generalized, solve_dense, BandedCholesky, EigenOptions};
use crate::operators::{assemble, OperatorSet};
use crate::{Error, Result};

/// Relative gap below which eigenvalues are grouped into one level.
pub const CLUSTER_TOL: f64 = 1e-6;
/// Half-width of the excluded band `|γ - 1| ≤ TIE_TOL` in [`k0_star`].
pub const TIE_TOL: f64 = 1e-9;
/// Relative size of an out-of-subspace component tolerated by [`coercivity_split`].
pub const SUBSPACE_TOL: f64 = 1e-8;

/// Groups an ascending list into runs of relatively close values.
pub fn cluster(values: &[f64], tol: f64) -> Vec<core::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || (values[i] - values[i - 1]).abs() > tol * values[i - 1].abs() {
            out.push(start..i);
            start = i;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct DirichletSpectrum {
    /// Distinct eigenvalues `γ_1 < γ_2 < …` (index 0 holds `γ_1`).
    pub gammas: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// Eigenvectors grouped by level, zero-extended to the full grid.
    pub eigenvectors: Vec<Vec<Vec<f64>>>,
    pub a0_abs: f64,
    pub cell_volume: f64,
    pub cluster_tol: f64,
    pub omega_nodes: Vec<usize>,
    pub iterations: usize,
    pub max_residual: f64,
}

impl DirichletSpectrum {
    /// `γ_m`, one-based.
    pub fn gamma(&self, m: usize) -> f64 {
        self.gammas[m - 1]
    }

    /// Basis `φ_{m,1..k_m}` of level `m`, one-based.
    pub fn level(&self, m: usize) -> &[Vec<f64>] {
        &self.eigenvectors[m - 1]
    }

    pub fn all_vectors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.eigenvectors.iter().flatten()
    }

    /// Zero-extended vector restricted back to `Ω`.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.omega_nodes.iter().map(|&i| full[i]).collect()
    }

    pub fn extend(&self, local: &[f64], grid_len: usize) -> Vec<f64> {
        let mut full = vec![0.0; grid_len];
        for (&i, &v) in self.omega_nodes.iter().zip(local) {
            full[i] = v;
        }
        full
    }
}

/// The `count` smallest eigenvalues of `-Δu = γ|a₀|u` on the `Ω` subgrid,
/// grouped into distinct levels (the last level is always complete, so
/// slightly more than `count` values can be returned).
pub fn dirichlet_spectrum(grid: &Grid, well: &PotentialWell, count: usize) -> Result<DirichletSpectrum> {
    if well.a0 == 0.0 {
        return Err(Error::ZeroOffset);
    }
    let nodes = omega_nodes(grid, well);
    if nodes.is_empty() {
        return Err(Error::InvalidParameter { name: "grid", reason: "no nodes inside the well bottom" });
    }
    let k = crate::operators::stiffness_matrix(grid.dim(), grid.points_per_axis(), grid.spacing())
        .principal_submatrix(&nodes);
    let factor = BandedCholesky::factor(&k)?;
    let a0_abs = well.a0.abs();
    let mass = vec![a0_abs * grid.cell_volume(); nodes.len()];
    let (ranges, pairs) =
        complete_levels(&k, &factor, &mass, count, |r, total| r.iter().map(|c| c.len()).sum::<usize>() >= total)?;

    let mut gammas = Vec::new();
    let mut multiplicities = Vec::new();
    let mut eigenvectors = Vec::new();
    for r in ranges {
        gammas.push(pairs.values[r.clone()].iter().sum::<f64>() / r.len() as f64);
        multiplicities.push(r.len());
        eigenvectors.push(
            r.map(|j| {
                let mut full = vec![0.0; grid.len()];
                for (&i, &v) in nodes.iter().zip(&pairs.vectors[j]) {
                    full[i] = v;
                }
                fix_sign(&mut full);
                full
            })
            .collect(),
        );
    }
    Ok(DirichletSpectrum {
        gammas,
        multiplicities,
        eigenvectors,
        a0_abs,
        cell_volume: grid.cell_volume(),
        cluster_tol: CLUSTER_TOL,
        omega_nodes: nodes,
        iterations: pairs.iterations,
        max_residual: pairs.max_residual,
    })
}

/// Computes eigenpairs until the leading clusters satisfy `enough` and at
/// least one further eigenvalue shows that the last kept cluster is complete.
fn complete_levels(
    a: &crate::linalg::CsrMatrix,
    factor: &BandedCholesky,
    b: &[f64],
    target: usize,
    enough: impl Fn(&[core::ops::Range<usize>], usize) -> bool,
) -> Result<(Vec<core::ops::Range<usize>>, crate::linalg::EigenPairs)> {
    let rank = b.iter().filter(|&&w| w > 0.0).count();
    let mut count = (target + 3).min(rank);
    loop {
        let pairs = lowest_generalized(a, factor, b, count, &EigenOptions::default())?;
        let mut ranges = cluster(&pairs.values, CLUSTER_TOL);
        let exhausted = count == rank;
        if !exhausted {
            // the trailing cluster may be cut off
            ranges.pop();
        }
        let mut kept = Vec::new();
        for r in ranges {
            kept.push(r);
            if enough(&kept, target) {
                return Ok((kept, pairs));
            }
        }
        if exhausted {
            return Err(Error::SubspaceTooSmall { available: rank, required: target });
        }
        count = (2 * count).min(rank);
    }
}

/// `k₀* = min{k : γ_k > 1}` (one-based), refusing ties with 1.
pub fn k0_star(spec: &DirichletSpectrum) -> Result<usize> {
    k0_star_of(&spec.gammas)
}

pub fn k0_star_of(gammas: &[f64]) -> Result<usize> {
    for (i, &g) in gammas.iter().enumerate() {
        if (g - 1.0).abs() <= TIE_TOL {
            return Err(Error::DegenerateThreshold { index: i + 1, gamma: g });
        }
        if g > 1.0 + TIE_TOL {
            return Ok(i + 1);
        }
    }
    Err(Error::SpectrumTooShort)
}

/// One level `β_m(λ)` with an E_λ-orthogonal, D-normalized basis of its
/// level subspace.
#[derive(Debug, Clone)]
pub struct WellLevel {
    pub beta: f64,
    pub basis: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct WellSpectrum {
    pub lambda: f64,
    pub levels: Vec<WellLevel>,
    pub iterations: usize,
    pub max_residual: f64,
    /// Largest relative E_λ-distance of a basis vector to `F_λ^⊥`.
    pub f_perp_defect: f64,
}

impl WellSpectrum {
    /// `β_m(λ)`, one-based.
    pub fn beta(&self, m: usize) -> f64 {
        self.levels[m - 1].beta
    }

    /// `e_m(λ)`, one-based.
    pub fn minimizer(&self, m: usize) -> &[f64] {
        &self.levels[m - 1].basis[0]
    }

    /// Union of the level subspaces `1..m` (all captured directions).
    pub fn basis_through(&self, m: usize) -> Vec<&[f64]> {
        self.levels[..m].iter().flat_map(|l| l.basis.iter().map(Vec::as_slice)).collect()
    }
}

/// E_λ-orthogonal projection onto the complement of `F_λ` (functions
/// supported off `A_λ`), `u ↦ u − P_F u`.
#[derive(Debug)]
pub struct ComplementProjector {
    f_nodes: Vec<usize>,
    norm_matrix: crate::linalg::CsrMatrix,
    factor: Option<BandedCholesky>,
}

impl ComplementProjector {
    pub fn new(ops: &OperatorSet) -> Result<Self> {
        let f_nodes: Vec<usize> = (0..ops.len()).filter(|&i| ops.minus()[i] <= 0.0).collect();
        let norm_matrix = ops.norm_matrix();
        let factor = if f_nodes.is_empty() {
            None
        } else {
            Some(BandedCholesky::factor(&norm_matrix.principal_submatrix(&f_nodes))?)
        };
        Ok(Self { f_nodes, norm_matrix, factor })
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = u.to_vec();
        if let Some(factor) = &self.factor {
            let au = self.norm_matrix.mul_vec(u);
            let mut f: Vec<f64> = self.f_nodes.iter().map(|&i| au[i]).collect();
            factor.solve_in_place(&mut f);
            for (&i, fi) in self.f_nodes.iter().zip(f) {
                out[i] -= fi;
            }
        }
        out
    }
}

/// Levels `β_1(λ) … β_{m_max}(λ)` of the well with their minimizers.
pub fn well_spectrum(ops: &OperatorSet, well: &PotentialWell, m_max: usize) -> Result<WellSpectrum> {
    if well.a0 >= 0.0 {
        return Err(Error::DefiniteCase);
    }
    if well.lambda <= well.lambda0() {
        return Err(Error::LambdaBelowLambda0 { lambda: well.lambda, lambda0: well.lambda0() });
    }
    if m_max == 0 {
        return Err(Error::InvalidParameter { name: "m_max", reason: "must be at least 1" });
    }
    let a = ops.norm_matrix();
    let (ranges, pairs) = complete_levels(&a, ops.riesz_factor(), ops.minus(), m_max, |r, t| r.len() >= t)?;
    let projector = ComplementProjector::new(ops)?;
    let mut f_perp_defect: f64 = 0.0;
    let levels = ranges
        .into_iter()
        .map(|r| {
            let beta = pairs.values[r.clone()].iter().sum::<f64>() / r.len() as f64;
            let basis = r
                .map(|j| {
                    let mut e = pairs.vectors[j].clone();
                    let d = ops.d_form(&e, &e);
                    e.iter_mut().for_each(|v| *v /= d.sqrt());
                    fix_sign(&mut e);
                    let g = projector.apply(&e);
                    let diff: Vec<f64> = e.iter().zip(&g).map(|(x, y)| x - y).collect();
                    f_perp_defect = f_perp_defect.max((ops.norm_sq(&diff) / ops.norm_sq(&e)).sqrt());
                    e
                })
                .collect();
            WellLevel { beta, basis }
        })
        .collect();
    Ok(WellSpectrum {
        lambda: well.lambda,
        levels,
        iterations: pairs.iterations,
        max_residual: pairs.max_residual,
        f_perp_defect,
    })
}

/// Coefficients of the projection of `u` onto `span(basis)` in the inner
/// product `inner`.
pub fn project_coefficients(basis: &[&[f64]], u: &[f64], inner: impl Fn(&[f64], &[f64]) -> f64) -> Vec<f64> {
    let k = basis.len();
    if k == 0 {
        return Vec::new();
    }
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            gram[i * k + j] = inner(basis[i], basis[j]);
        }
    }
    let rhs: Vec<f64> = basis.iter().map(|b| inner(b, u)).collect();
    solve_dense(&gram, &rhs).unwrap_or_else(|| vec![0.0; k])
}

pub fn combine(basis: &[&[f64]], coeffs: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (b, c) in basis.iter().zip(coeffs) {
        crate::linalg::axpy(*c, b, &mut out);
    }
    out
}

/// Relative H¹ distance from `u` to `span(basis)`.
pub fn subspace_distance(ops: &OperatorSet, basis: &[&[f64]], u: &[f64]) -> f64 {
    let h1 = |x: &[f64], y: &[f64]| dot(&ops.stiffness().mul_vec(x), y) + ops.cell_volume() * dot(x, y);
    let c = project_coefficients(basis, u, h1);
    let proj = combine(basis, &c, u.len());
    let diff: Vec<f64> = u.iter().zip(&proj).map(|(a, b)| a - b).collect();
    (ops.h1_sq(&diff) / ops.h1_sq(u)).sqrt()
}

/// One row of the β-flow table.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub lambda: f64,
    pub m: usize,
    pub beta: f64,
    pub gamma_disc: f64,
    /// Relative H¹ distance of `e_m(λ)` to the `γ_m` eigenspace.
    pub subspace_dist: f64,
    /// Dimension of the captured level subspace.
    pub level_dim: usize,
    pub iters: usize,
}

/// Flow rows for a single λ.
pub fn flow_rows_at(
    grid: &Grid,
    well: &PotentialWell,
    lambda: f64,
    m_max: usize,
    dirichlet: &DirichletSpectrum,
) -> Result<Vec<FlowRow>> {
    if dirichlet.gammas.len() < m_max {
        return Err(Error::SubspaceTooSmall { available: dirichlet.gammas.len(), required: m_max });
    }
    let w = well.with_lambda(lambda);
    let ops = assemble(grid, &w)?;
    let ws = well_spectrum(&ops, &w, m_max)?;
    Ok((1..=m_max)
        .map(|m| {
            let basis: Vec<&[f64]> = dirichlet.level(m).iter().map(Vec::as_slice).collect();
            FlowRow {
                lambda,
                m,
                beta: ws.beta(m),
                gamma_disc: dirichlet.gamma(m),
                subspace_dist: subspace_distance(&ops, &basis, ws.minimizer(m)),
                level_dim: ws.levels[m - 1].basis.len(),
                iters: ws.iterations,
            }
        })
        .collect())
}

/// `β_m(λ)` and eigenspace distances over an increasing list of λ.
pub fn well_spectrum_flow(
    grid: &Grid,
    well: &PotentialWell,
    lambdas: &[f64],
    m_max: usize,
    dirichlet: &DirichletSpectrum,
) -> Result<Vec<FlowRow>> {
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter { name: "lambda_list", reason: "must be strictly increasing" });
    }
    let mut rows = Vec::new();
    for &lambda in lambdas {
        rows.extend(flow_rows_at(grid, well, lambda, m_max, dirichlet)?);
    }
    Ok(rows)
}

/// Which subspace a vector is asserted to live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `span{e_1, …, e_{k₀*-1}}`
    Low,
    /// Its E_λ-orthogonal complement.
    High,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivitySplit {
    /// `‖u‖_λ² − D_λ(u,u)`
    pub lhs: f64,
    /// `½ (1 − 1/γ) ‖u‖_λ²` with `γ = γ_{k₀*-1}` (low) or `γ_{k₀*}` (high).
    pub rhs: f64,
    pub holds: bool,
    /// The low subspace is empty (`γ_1 > 1`).
    pub vacuous: bool,
}

/// Evaluates the coercivity split of the quadratic part on `u`: at most
/// `rhs` on the low side, at least `rhs` on the high side.
pub fn coercivity_split(
    ops: &OperatorSet,
    wspec: &WellSpectrum,
    spec: &DirichletSpectrum,
    u: &[f64],
    side: Side,
) -> Result<CoercivitySplit> {
    let k = k0_star(spec)?;
    if wspec.levels.len() < k.saturating_sub(1) {
        return Err(Error::SubspaceTooSmall { available: wspec.levels.len(), required: k - 1 });
    }
    let low = wspec.basis_through(k - 1);
    if side == Side::Low && low.is_empty() {
        return Ok(CoercivitySplit { lhs: 0.0, rhs: 0.0, holds: true, vacuous: true });
    }
    let norm_sq = ops.norm_sq(u);
    let coeffs = project_coefficients(&low, u, |x, y| ops.inner(x, y));
    let proj = combine(&low, &coeffs, u.len());
    let outside = match side {
        Side::Low => {
            let r: Vec<f64> = u.iter().zip(&proj).map(|(a, b)| a - b).collect();
            ops.norm_sq(&r)
        }
        Side::High => ops.norm_sq(&proj),
    };
    let relative = (outside / norm_sq).sqrt();
    if !(relative <= SUBSPACE_TOL) {
        return Err(Error::SubspaceMismatch { relative });
    }
    let lhs = norm_sq - ops.d_form(u, u);
    let (gamma, holds): (f64, fn(f64, f64) -> bool) = match side {
        Side::Low => (spec.gamma(k - 1), |l, r| l <= r),
        Side::High => (spec.gamma(k), |l, r| l >= r),
    };
    let rhs = 0.5 * (1.0 - 1.0 / gamma) * norm_sq;
    Ok(CoercivitySplit { lhs, rhs, holds: holds(lhs, rhs), vacuous: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_index() {
        assert_eq!(k0_star_of(&[0.5, 2.0, 4.5]), Ok(2));
        assert_eq!(k0_star_of(&[2.0, 8.0, 18.0]), Ok(1));
        assert_eq!(k0_star_of(&[0.25, 1.0, 2.25]), Err(Error::DegenerateThreshold { index: 2, gamma: 1.0 }));
        assert_eq!(k0_star_of(&[0.25, 0.5]), Err(Error::SpectrumTooShort));
    }

    #[test]
    fn clustering() {
        let v = [1.0, 2.0, 2.0 + 1e-9, 5.0, 5.0, 5.0 + 1e-7, 8.0];
        let c = cluster(&v, CLUSTER_TOL);
        assert_eq!(c, vec![0..1, 1..3, 3..6, 6..7]);
    }
}

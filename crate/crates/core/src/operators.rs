//! Discrete operators behind `‖·‖_λ`, `D_λ` and the energy
//!
//! ```text
//! J(u) = α/4 (uᵀKu)² + ½ uᵀ(K + M⁺)u − ½ uᵀM⁻u − (1/p) h^d Σ|u_i|^p
//! ```
//!
//! `K` is the Dirichlet stiffness matrix of the `2·dim + 1` point stencil,
//! all zeroth-order terms use nodal (lumped) quadrature so `M⁺` and `M⁻` are
//! diagonal. The Cholesky factor of `K + M⁺` is kept: it is the Riesz map of
//! `E_λ` used as preconditioner and for dual norms.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
// shadowed by the inherent methods whenever std is linked into the build
#[allow(unused_imports)]
use num_traits::Float;

use crate::domain::{potential_at_nodes, Grid, PotentialWell, ProblemParams};
use crate::linalg::{dot, lowest_generalized, BandedCholesky, CsrMatrix, EigenOptions};
use crate::{Error, Result};

/// `2·dim + 1` point Laplacian on the `n^dim` interior lattice, scaled by
/// `h^dim / h²` so that `uᵀKu ≈ ∫|∇u|²`.
pub fn stiffness_matrix(dim: usize, n: usize, h: f64) -> CsrMatrix {
    let len = n.pow(dim as u32);
    let scale = h.powi(dim as i32 - 2);
    let mut triplets = Vec::with_capacity(len * (2 * dim + 1));
    let stride = |d: usize| n.pow(d as u32);
    for i in 0..len {
        triplets.push((i, i, 2.0 * dim as f64 * scale));
        for d in 0..dim {
            let k = (i / stride(d)) % n;
            if k > 0 {
                triplets.push((i, i - stride(d), -scale));
            }
            if k + 1 < n {
                triplets.push((i, i + stride(d), -scale));
            }
        }
    }
    CsrMatrix::from_triplets(len, len, &triplets)
}

/// Parts of the energy that every consumer needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParts {
    /// `uᵀKu = ‖∇u‖²`
    pub grad_sq: f64,
    /// `‖u‖_λ² = uᵀ(K + M⁺)u`
    pub norm_sq: f64,
    /// `D_λ(u, u) = uᵀM⁻u`
    pub d_form: f64,
    /// `‖u‖_p^p = h^d Σ|u_i|^p`
    pub power: f64,
}

impl EnergyParts {
    pub fn energy(&self, params: &ProblemParams) -> f64 {
        0.25 * params.alpha * self.grad_sq * self.grad_sq + 0.5 * self.norm_sq
            - 0.5 * self.d_form
            - self.power / params.p
    }

    /// `⟨J'(u), u⟩ = α(uᵀKu)² + ‖u‖² − D(u,u) − ‖u‖_p^p`
    pub fn nehari(&self, params: &ProblemParams) -> f64 {
        params.alpha * self.grad_sq * self.grad_sq + self.norm_sq - self.d_form - self.power
    }
}

/// Energy and gradient from a single stiffness product.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: f64,
    pub gradient: Vec<f64>,
    pub parts: EnergyParts,
    /// `α uᵀKu`, the nonlocal coefficient shared by energy and gradient.
    pub kirchhoff: f64,
}

#[derive(Debug, Clone)]
pub struct OperatorSet {
    stiffness: CsrMatrix,
    cell_volume: f64,
    plus: Vec<f64>,
    minus: Vec<f64>,
    /// `λ a_i h^d`, for the well energy diagnostic.
    well_weight: Vec<f64>,
    riesz: BandedCholesky,
}

/// Assembles `K`, `M⁺_λ` and `M⁻_λ` for the well on the grid.
pub fn assemble(grid: &Grid, well: &PotentialWell) -> Result<OperatorSet> {
    if well.dim != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), found: well.dim });
    }
    let required = well.omega_halfwidth + well.ramp_width;
    if grid.halfwidth() < required * (1.0 - 1e-12) {
        return Err(Error::BoxTooSmall { halfwidth: grid.halfwidth(), required });
    }
    let vol = grid.cell_volume();
    let a = potential_at_nodes(grid, well);
    let shifted: Vec<f64> = a.iter().map(|&ai| well.lambda * ai + well.a0).collect();
    OperatorSet::from_parts(
        stiffness_matrix(grid.dim(), grid.points_per_axis(), grid.spacing()),
        vol,
        shifted.iter().map(|s| s.max(0.0) * vol).collect(),
        shifted.iter().map(|s| (-s).max(0.0) * vol).collect(),
        a.iter().map(|ai| well.lambda * ai * vol).collect(),
    )
}

impl OperatorSet {
    /// Builds an operator set from its pieces; `plus`, `minus` and
    /// `well_weight` are diagonal weights already multiplied by `cell_volume`.
    pub fn from_parts(
        stiffness: CsrMatrix,
        cell_volume: f64,
        plus: Vec<f64>,
        minus: Vec<f64>,
        well_weight: Vec<f64>,
    ) -> Result<Self> {
        let n = stiffness.nrows();
        for len in [plus.len(), minus.len(), well_weight.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        let riesz = BandedCholesky::factor(&stiffness.with_added_diagonal(&plus))?;
        Ok(Self { stiffness, cell_volume, plus, minus, well_weight, riesz })
    }

    /// Operators on the principal subgrid `nodes` (Dirichlet outside it).
    pub fn restricted(&self, nodes: &[usize]) -> Result<Self> {
        let pick = |v: &[f64]| nodes.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self::from_parts(
            self.stiffness.principal_submatrix(nodes),
            self.cell_volume,
            pick(&self.plus),
            pick(&self.minus),
            pick(&self.well_weight),
        )
    }

    pub fn len(&self) -> usize {
        self.plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus.is_empty()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn plus(&self) -> &[f64] {
        &self.plus
    }

    pub fn minus(&self) -> &[f64] {
        &self.minus
    }

    /// `λ a_i h^d`
    pub fn well_weight(&self) -> &[f64] {
        &self.well_weight
    }

    /// `K + M⁺` as a sparse matrix.
    pub fn norm_matrix(&self) -> CsrMatrix {
        self.stiffness.with_added_diagonal(&self.plus)
    }

    /// `M⁺ − M⁻`, i.e. the lumped weighted mass of `λ a + a₀`.
    pub fn signed_weight(&self) -> Vec<f64> {
        self.plus.iter().zip(&self.minus).map(|(p, m)| p - m).collect()
    }

    pub fn has_negative_part(&self) -> bool {
        self.minus.iter().any(|&m| m > 0.0)
    }

    /// `⟨u, v⟩_λ`
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let ku = self.stiffness.mul_vec(u);
        dot(&ku, v) + crate::linalg::diag_dot(&self.plus, u, v)
    }

    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        self.stiffness.quad_form(u) + crate::linalg::diag_dot(&self.plus, u, u)
    }

    pub fn d_form(&self, u: &[f64], v: &[f64]) -> f64 {
        crate::linalg::diag_dot(&self.minus, u, v)
    }

    pub fn l2_sq(&self, u: &[f64]) -> f64 {
        self.cell_volume * dot(u, u)
    }

    /// Discrete `‖u‖_{H¹}² = uᵀKu + h^d Σu²`.
    pub fn h1_sq(&self, u: &[f64]) -> f64 {
        self.stiffness.quad_form(u) + self.l2_sq(u)
    }

    pub fn power_sum(&self, u: &[f64], p: f64) -> f64 {
        self.cell_volume * u.iter().map(|v| v.abs().powf(p)).sum::<f64>()
    }

    /// `Σ λ a_i u_i² h^d`
    pub fn well_energy(&self, u: &[f64]) -> f64 {
        crate::linalg::diag_dot(&self.well_weight, u, u)
    }

    /// Applies `(K + M⁺)⁻¹`.
    pub fn riesz(&self, g: &[f64]) -> Vec<f64> {
        self.riesz.solve(g)
    }

    pub fn riesz_factor(&self) -> &BandedCholesky {
        &self.riesz
    }

    /// `‖g‖_{E_λ*} = sqrt(gᵀ(K + M⁺)⁻¹g)`
    pub fn dual_norm(&self, g: &[f64]) -> f64 {
        dot(g, &self.riesz(g)).max(0.0).sqrt()
    }

    pub fn parts(&self, u: &[f64], p: f64) -> EnergyParts {
        let grad_sq = self.stiffness.quad_form(u);
        EnergyParts {
            grad_sq,
            norm_sq: grad_sq + crate::linalg::diag_dot(&self.plus, u, u),
            d_form: self.d_form(u, u),
            power: self.power_sum(u, p),
        }
    }

    pub fn energy(&self, params: &ProblemParams, u: &[f64]) -> f64 {
        self.parts(u, params.p).energy(params)
    }

    pub fn gradient(&self, params: &ProblemParams, u: &[f64]) -> Vec<f64> {
        self.evaluate(params, u).gradient
    }

    /// Gradient without the power term: `(α uᵀKu + 1) K u + (M⁺ − M⁻) u`.
    pub fn linear_gradient(&self, params: &ProblemParams, u: &[f64]) -> Vec<f64> {
        let ku = self.stiffness.mul_vec(u);
        let coeff = params.alpha * dot(u, &ku) + 1.0;
        ku.iter()
            .zip(u)
            .zip(self.plus.iter().zip(&self.minus))
            .map(|((k, ui), (pl, mi))| coeff * k + (pl - mi) * ui)
            .collect()
    }

    pub fn evaluate(&self, params: &ProblemParams, u: &[f64]) -> Evaluation {
        let ku = self.stiffness.mul_vec(u);
        let grad_sq = dot(u, &ku);
        let kirchhoff = params.alpha * grad_sq;
        let mut plus_sq = 0.0;
        let mut d_form = 0.0;
        let mut power = 0.0;
        let gradient = (0..u.len())
            .map(|i| {
                let ui = u[i];
                let r = ui.abs().powf(params.p - 2.0);
                plus_sq += self.plus[i] * ui * ui;
                d_form += self.minus[i] * ui * ui;
                power += r * ui * ui;
                (kirchhoff + 1.0) * ku[i] + (self.plus[i] - self.minus[i]) * ui - self.cell_volume * r * ui
            })
            .collect();
        let parts = EnergyParts { grad_sq, norm_sq: grad_sq + plus_sq, d_form, power: self.cell_volume * power };
        Evaluation { energy: parts.energy(params), gradient, parts, kirchhoff }
    }

    /// Second derivative `J''(u) z`.
    pub fn hessian_apply(&self, params: &ProblemParams, u: &[f64], z: &[f64]) -> Vec<f64> {
        let ku = self.stiffness.mul_vec(u);
        let kz = self.stiffness.mul_vec(z);
        let coeff = params.alpha * dot(u, &ku) + 1.0;
        let cross = 2.0 * params.alpha * dot(&ku, z);
        (0..u.len())
            .map(|i| {
                coeff * kz[i] + cross * ku[i] + (self.plus[i] - self.minus[i]) * z[i]
                    - (params.p - 1.0) * self.cell_volume * u[i].abs().powf(params.p - 2.0) * z[i]
            })
            .collect()
    }
}

/// `d_λ` and the two embedding coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingConstants {
    /// `S` (D^{1,2} → L⁶)
    pub sobolev: f64,
    /// `S_p` (H¹ → L^p)
    pub sobolev_p: f64,
    pub lambda: f64,
    pub d_lambda: f64,
    /// `‖u‖_{L²} ≤ d_λ ‖u‖_λ`
    pub l2_coefficient: f64,
    /// `‖u‖_{L^p} ≤ S_p^{-1/2} (1 + d_λ²)^{1/2} ‖u‖_λ`
    pub lp_coefficient: f64,
}

/// `d_λ = sqrt(max{|A_∞|^{2/3} / S, 1 / (a₀ + a_∞ λ)})`.
pub fn d_lambda(measure_a_inf: f64, a0: f64, a_inf: f64, lambda: f64, sobolev: f64) -> Result<f64> {
    let threshold = (-a0 / a_inf).max(0.0);
    if !(lambda > threshold && lambda > 0.0) {
        return Err(Error::LambdaBelowThreshold { lambda, threshold });
    }
    let first = measure_a_inf.powf(2.0 / 3.0) / sobolev;
    let second = 1.0 / (a0 + a_inf * lambda);
    Ok(first.max(second).sqrt())
}

pub fn embedding_constants(
    well: &PotentialWell,
    lambda: f64,
    sobolev: f64,
    sobolev_p: f64,
) -> Result<EmbeddingConstants> {
    if !(sobolev > 0.0 && sobolev_p > 0.0) {
        return Err(Error::InvalidParameter { name: "sobolev", reason: "constants must be positive" });
    }
    let d = d_lambda(well.measure_a_inf(), well.a0, well.a_inf, lambda, sobolev)?;
    Ok(EmbeddingConstants {
        sobolev,
        sobolev_p,
        lambda,
        d_lambda: d,
        l2_coefficient: d,
        lp_coefficient: (1.0 + d * d).sqrt() / sobolev_p.sqrt(),
    })
}

/// Best constant of `D^{1,2}(ℝ³) → L⁶(ℝ³)`: `3 (π/2)^{4/3}`.
pub fn talenti_constant() -> f64 {
    3.0 * (PI / 2.0).powf(4.0 / 3.0)
}

/// Largest `S` for which `Σ_{A_∞} h^d u_i² ≤ |A_∞|^{2/3} S⁻¹ uᵀKu` holds for
/// every grid function, i.e. `|A_∞|^{2/3}` times the smallest eigenvalue of
/// `K` relative to the mass lumped on the nodes of `A_∞`.
pub fn discrete_sobolev_constant(ops: &OperatorSet, grid: &Grid, well: &PotentialWell) -> Result<f64> {
    let weight: Vec<f64> =
        (0..grid.len()).map(|i| if well.value(&grid.node(i)) < well.a_inf { ops.cell_volume() } else { 0.0 }).collect();
    let k = ops.stiffness();
    let factor = BandedCholesky::factor(k)?;
    let pairs = lowest_generalized(k, &factor, &weight, 1, &EigenOptions::default())?;
    // shave the eigen solver error off so the inequality is never violated
    Ok(well.measure_a_inf().powf(2.0 / 3.0) * pairs.values[0] * (1.0 - 1e-9))
}

/// Estimate of `S_p = inf (‖∇u‖² + ‖u‖²) / ‖u‖_p²` over grid functions, by
/// the normalized nonlinear inverse iteration `u ← (K + h^d I)⁻¹ |u|^{p-2}u`.
/// Returns the smallest quotient seen (an upper estimate of the infimum).
pub fn discrete_sobolev_p_constant(ops: &OperatorSet, p: f64, max_iters: usize) -> Result<f64> {
    let n = ops.len();
    let mass = vec![ops.cell_volume(); n];
    let a = ops.stiffness().with_added_diagonal(&mass);
    let factor = BandedCholesky::factor(&a)?;
    let quotient = |u: &[f64]| a.quad_form(u) / ops.power_sum(u, p).powf(2.0 / p);
    let mut u = vec![1.0; n];
    let mut best = quotient(&u);
    for _ in 0..max_iters {
        let mut next: Vec<f64> = u.iter().map(|v| v.abs().powf(p - 2.0) * v).collect();
        factor.solve_in_place(&mut next);
        let q = quotient(&next);
        let norm = ops.power_sum(&next, p).powf(1.0 / p);
        u = next.iter().map(|v| v / norm).collect();
        let done = (best - q).abs() <= 1e-13 * best;
        best = best.min(q);
        if done {
            break;
        }
    }
    Ok(best)
}

//! Critical points of the energy: Nehari descent and path deformation in the
//! definite regime, local minimax over the unstable levels in the indefinite
//! one, and the Dirichlet limit problem on the well bottom.

use alloc::vec;
use alloc::vec::Vec;
// shadowed by the inherent methods whenever std is linked into the build
#[allow(unused_imports)]
use num_traits::Float;

use crate::analysis::ps_bound;
use crate::domain::{omega_nodes, Grid, PotentialWell, ProblemParams};
use crate::linalg::{axpy, dot, jacobi_eigen};
use crate::operators::{assemble, stiffness_matrix, Evaluation, OperatorSet};
use crate::spectrum::{dirichlet_spectrum, k0_star, well_spectrum, DirichletSpectrum, WellSpectrum};
use crate::{Error, Result};

/// Relative floating point slack allowed in energy comparisons, measured
/// against the sum of the magnitudes of the energy's terms.
const ROUNDOFF: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nehari,
    MountainPass,
    Linking,
    Limit,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Nehari => "nehari",
            Method::MountainPass => "mountain_pass",
            Method::Linking => "linking",
            Method::Limit => "limit",
        }
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Data for the a priori bound on `α‖∇u‖⁴ + ‖u‖_λ²` checked at every iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsGuard {
    pub a0: f64,
    pub measure_a_inf: f64,
    pub sobolev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Stopping tolerance on the dual norm of the gradient.
    pub tol: f64,
    pub max_iters: usize,
    pub armijo: f64,
    pub ps_guard: Option<PsGuard>,
    /// Ball the linking peaks must stay in.
    pub radius_cap: Option<f64>,
    /// Nodes of the discretized mountain-pass path, endpoints included.
    pub path_nodes: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 100_000, armijo: 1e-4, ps_guard: None, radius_cap: None, path_nodes: 25 }
    }
}

#[derive(Debug, Clone)]
pub struct SolutionRecord {
    pub u: Vec<f64>,
    pub alpha: f64,
    /// `+∞` for the limit problem.
    pub lambda: f64,
    pub p: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub nehari_defect: f64,
    /// `‖u‖_λ`
    pub norm: f64,
    /// Fraction of the L² mass on nodes where the well is switched on.
    pub mass_outside: f64,
    pub iterations: usize,
    pub method: Method,
    /// Energy after every accepted outer step (the seed first).
    pub energy_trace: Vec<f64>,
    /// Largest energy increase across a single descent step.
    pub max_step_increase: f64,
    /// Largest ratio of `α‖∇u‖⁴ + ‖u‖_λ²` to its bound over all iterates.
    pub ps_max_ratio: Option<f64>,
}

impl SolutionRecord {
    /// `J(t u)` along the ray through the solution.
    pub fn ray_energy(&self, ops: &OperatorSet, t: f64) -> f64 {
        let v: Vec<f64> = self.u.iter().map(|x| t * x).collect();
        ops.energy(&self.params(), &v)
    }

    pub fn params(&self) -> ProblemParams {
        ProblemParams { p: self.p, alpha: self.alpha }
    }
}

/// `|⟨J'(u), u⟩| / max(1, ‖u‖_λ²)`
pub fn nehari_defect(ops: &OperatorSet, params: &ProblemParams, u: &[f64]) -> f64 {
    let parts = ops.parts(u, params.p);
    parts.nehari(params).abs() / parts.norm_sq.max(1.0)
}

/// Positive root of `a t² + q = c t^{p−2}`, the scaling that puts `t v` on the
/// Nehari set when `a = α(vᵀKv)²`, `q = ‖v‖_λ² − D(v,v)`, `c = ‖v‖_p^p`.
pub fn ray_crossing(quartic: f64, quadratic: f64, power: f64, p: f64) -> Result<f64> {
    if !(quadratic > 0.0 && power > 0.0) || quartic < 0.0 {
        return Err(Error::NoCrossing { quadratic, power });
    }
    // log-space: h(s) = ln(a e^{2s} + q) − ln c − (p−2)s is strictly decreasing
    let h = |s: f64| (quartic * (2.0 * s).exp() + quadratic).ln() - power.ln() - (p - 2.0) * s;
    let dh = |s: f64| {
        let e = quartic * (2.0 * s).exp();
        2.0 * e / (e + quadratic) - (p - 2.0)
    };
    let mut s = ((quadratic / power).ln() / (p - 2.0)).max(-700.0);
    let (mut lo, mut hi) = (s, s);
    while h(lo) < 0.0 {
        lo -= 1.0;
    }
    while h(hi) > 0.0 {
        hi += 1.0;
    }
    for _ in 0..200 {
        let v = h(s);
        if v == 0.0 {
            break;
        }
        if v > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let mut next = s - v / dh(s);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-15 * (1.0 + s.abs()) {
            s = next;
            break;
        }
        s = next;
    }
    Ok(s.exp())
}

/// `t*(v)` for a direction `v`.
pub fn nehari_scaling(ops: &OperatorSet, params: &ProblemParams, v: &[f64]) -> Result<f64> {
    let parts = ops.parts(v, params.p);
    ray_crossing(params.alpha * parts.grad_sq * parts.grad_sq, parts.norm_sq - parts.d_form, parts.power, params.p)
}

struct PsTracker {
    guard: Option<PsGuard>,
    params: ProblemParams,
    c_cap: f64,
    max_ratio: f64,
}

impl PsTracker {
    fn new(guard: Option<PsGuard>, params: ProblemParams) -> Self {
        Self { guard, params, c_cap: 0.0, max_ratio: 0.0 }
    }

    fn observe(&mut self, eval: &Evaluation) -> Result<()> {
        let Some(g) = self.guard else { return Ok(()) };
        self.c_cap = self.c_cap.max(eval.energy);
        let bound = ps_bound(self.params.alpha, self.c_cap, g.a0, g.measure_a_inf, g.sobolev, self.params.p)?;
        let value = self.params.alpha * eval.parts.grad_sq * eval.parts.grad_sq + eval.parts.norm_sq;
        self.max_ratio = self.max_ratio.max(value / bound);
        if value > bound {
            return Err(Error::PsBoundViolated { value, bound });
        }
        Ok(())
    }

    fn ratio(&self) -> Option<f64> {
        self.guard.map(|_| self.max_ratio)
    }
}

struct Outcome {
    u: Vec<f64>,
    eval: Evaluation,
    grad_norm: f64,
    iterations: usize,
    trace: Vec<f64>,
    max_step_increase: f64,
}

fn record(
    ops: &OperatorSet,
    params: &ProblemParams,
    lambda: f64,
    method: Method,
    out: Outcome,
    ps: &PsTracker,
) -> Result<SolutionRecord> {
    let norm = out.eval.parts.norm_sq.sqrt();
    if norm < 1e-6 {
        return Err(Error::TrivialSolution { norm });
    }
    let total: f64 = out.u.iter().map(|v| v * v).sum();
    let outside: f64 = out.u.iter().zip(ops.well_weight()).filter(|(_, w)| **w > 0.0).map(|(v, _)| v * v).sum();
    Ok(SolutionRecord {
        nehari_defect: out.eval.parts.nehari(params).abs() / out.eval.parts.norm_sq.max(1.0),
        u: out.u,
        alpha: params.alpha,
        lambda,
        p: params.p,
        energy: out.eval.energy,
        grad_norm: out.grad_norm,
        norm,
        mass_outside: if total > 0.0 { outside / total } else { 0.0 },
        iterations: out.iterations,
        method,
        energy_trace: out.trace,
        max_step_increase: out.max_step_increase,
        ps_max_ratio: ps.ratio(),
    })
}

/// Magnitude against which rounding in the energy is measured.
fn energy_scale(eval: &Evaluation, params: &ProblemParams) -> f64 {
    let p = &eval.parts;
    0.25 * params.alpha * p.grad_sq * p.grad_sq + 0.5 * (p.norm_sq + p.d_form) + p.power / params.p
}

/// Riesz-preconditioned descent direction, divided by the Kirchhoff
/// coefficient `1 + α‖∇u‖²` so that a unit step is of Newton size for the
/// dominant part of the Hessian, and the dual norm of the gradient.
fn descent_direction(ops: &OperatorSet, eval: &Evaluation) -> (Vec<f64>, f64) {
    let mut d = ops.riesz(&eval.gradient);
    let grad_norm = dot(&eval.gradient, &d).max(0.0).sqrt();
    let scale = 1.0 / (1.0 + eval.kirchhoff);
    d.iter_mut().for_each(|x| *x *= scale);
    (d, grad_norm)
}

/// Armijo test with slack for rounding.
fn accepts(new: f64, old: f64, decrease: f64, scale: f64) -> bool {
    new <= old - decrease + ROUNDOFF * scale
}

/// Minimizes the energy over the Nehari set by preconditioned descent on the
/// direction followed by radial rescaling.
pub fn nehari_solve(
    ops: &OperatorSet,
    params: &ProblemParams,
    seed: &[f64],
    lambda: f64,
    settings: &SolverSettings,
) -> Result<SolutionRecord> {
    if seed.len() != ops.len() {
        return Err(Error::DimensionMismatch { expected: ops.len(), found: seed.len() });
    }
    if seed.iter().all(|&v| v == 0.0) {
        return Err(Error::SeedZero);
    }
    let project = |v: &[f64]| -> Result<Vec<f64>> {
        let t = nehari_scaling(ops, params, v)?;
        Ok(v.iter().map(|x| t * x).collect())
    };
    let mut ps = PsTracker::new(settings.ps_guard, *params);
    let mut u = project(seed)?;
    let mut eval = ops.evaluate(params, &u);
    ps.observe(&eval)?;
    let mut trace = vec![eval.energy];
    let mut max_step_increase = f64::NEG_INFINITY;

    for iter in 0..settings.max_iters {
        let (d, grad_norm) = descent_direction(ops, &eval);
        let slope = dot(&eval.gradient, &d).max(0.0);
        if grad_norm <= settings.tol {
            let out = Outcome { u, eval, grad_norm, iterations: iter, trace, max_step_increase };
            return record(ops, params, lambda, Method::Nehari, out, &ps);
        }
        let mut step = 1.0;
        let accepted = loop {
            if step < 1e-14 {
                break None;
            }
            let trial: Vec<f64> = u.iter().zip(&d).map(|(x, y)| x - step * y).collect();
            if let Ok(w) = project(&trial) {
                let e = ops.evaluate(params, &w);
                if accepts(e.energy, eval.energy, settings.armijo * step * slope, energy_scale(&eval, params)) {
                    break Some((w, e));
                }
            }
            step *= 0.5;
        };
        let Some((w, e)) = accepted else {
            return Err(Error::LineSearchStalled { grad_norm });
        };
        max_step_increase = max_step_increase.max(e.energy - eval.energy);
        ps.observe(&e)?;
        trace.push(e.energy);
        u = w;
        eval = e;
    }
    Err(Error::MaxItersExceeded {
        method: "nehari",
        iterations: settings.max_iters,
        grad_norm: ops.dual_norm(&eval.gradient),
    })
}

/// Maximizes `J(origin + Σ y_i b_i)` by damped Newton on the small dense
/// problem. With `last_nonneg`, the last coordinate is kept positive.
fn maximize_affine(
    ops: &OperatorSet,
    params: &ProblemParams,
    origin: Option<&[f64]>,
    basis: &[Vec<f64>],
    mut y: Vec<f64>,
    last_nonneg: bool,
) -> (Vec<f64>, Vec<f64>, Evaluation) {
    let k = basis.len();
    let point = |y: &[f64]| {
        let mut u = origin.map_or_else(|| vec![0.0; ops.len()], <[f64]>::to_vec);
        for (c, b) in y.iter().zip(basis) {
            axpy(*c, b, &mut u);
        }
        u
    };
    let mut u = point(&y);
    let mut eval = ops.evaluate(params, &u);
    for _ in 0..200 {
        let g: Vec<f64> = basis.iter().map(|b| dot(&eval.gradient, b)).collect();
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= 1e-13 * eval.parts.norm_sq.sqrt().max(1.0) {
            break;
        }
        let hb: Vec<Vec<f64>> = basis.iter().map(|b| ops.hessian_apply(params, &u, b)).collect();
        let mut h = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let v = 0.5 * (dot(&basis[i], &hb[j]) + dot(&basis[j], &hb[i]));
                h[i * k + j] = v;
                h[j * k + i] = v;
            }
        }
        // ascent direction from |H|⁻¹ (Newton where H is negative definite)
        let eig = jacobi_eigen(&h, k);
        let scale = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut delta = vec![0.0; k];
        for (mu, v) in eig.values.iter().zip(&eig.vectors) {
            let c = dot(v, &g) / mu.abs().max(1e-10 * scale);
            axpy(c, v, &mut delta);
        }
        let gain = dot(&delta, &g);
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-12 {
            let trial: Vec<f64> = y.iter().zip(&delta).map(|(a, b)| a + step * b).collect();
            if last_nonneg && trial[k - 1] <= 0.0 {
                step *= 0.5;
                continue;
            }
            let tu = point(&trial);
            let te = ops.evaluate(params, &tu);
            if te.energy >= eval.energy + 1e-4 * step * gain - ROUNDOFF * energy_scale(&eval, params) {
                improved = true;
                y = trial;
                u = tu;
                eval = te;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (y, u, eval)
}

/// Orthonormalizes in the energy inner product, dropping dependent vectors.
fn energy_orthonormalize(ops: &OperatorSet, vectors: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors.drain(..) {
        let before = ops.norm_sq(&v).sqrt();
        for _ in 0..2 {
            for q in &out {
                let c = ops.inner(q, &v);
                axpy(-c, q, &mut v);
            }
        }
        let after = ops.norm_sq(&v).sqrt();
        if after > 1e-10 * before {
            v.iter_mut().for_each(|x| *x /= after);
            out.push(v);
        }
    }
    *vectors = out;
}

/// Saddle search by path deformation. The path runs from 0 out along the ray
/// through the peak node, across an arc of `path_nodes` points far enough
/// out that the energy is negative on it, and back in along the ray of
/// `endpoint`. Along a ray the energy rises to a single maximum and then
/// falls, so with the arc below zero the path maximum is the peak node,
/// which sits at the maximum of its own ray. The peak moves downhill and the
/// path is rebuilt through it; a step is taken only if the new path has a
/// lower maximum, so the path maximum never increases.
pub fn mountain_pass_solve(
    ops: &OperatorSet,
    params: &ProblemParams,
    endpoint: &[f64],
    lambda: f64,
    settings: &SolverSettings,
) -> Result<SolutionRecord> {
    if endpoint.len() != ops.len() {
        return Err(Error::DimensionMismatch { expected: ops.len(), found: endpoint.len() });
    }
    if endpoint.iter().all(|&v| v == 0.0) {
        return Err(Error::SeedZero);
    }
    let end_energy = ops.energy(params, endpoint);
    if end_energy > 0.0 {
        return Err(Error::EndpointNotBelowZero { energy: end_energy });
    }
    let nodes = settings.path_nodes.max(3);
    let peak_of = |w: &[f64]| -> Result<(Vec<f64>, Evaluation)> {
        let t = nehari_scaling(ops, params, w)?;
        let z: Vec<f64> = w.iter().map(|x| t * x).collect();
        let eval = ops.evaluate(params, &z);
        Ok((z, eval))
    };
    // the straight path to the endpoint is the endpoint's own ray
    let (mut z, mut eval) = peak_of(endpoint)?;
    let mut radius = ops.norm_sq(endpoint).sqrt();
    let mut ps = PsTracker::new(settings.ps_guard, *params);
    let mut trace = Vec::new();
    let mut max_step_increase = f64::NEG_INFINITY;

    for iter in 0..settings.max_iters {
        ps.observe(&eval)?;
        trace.push(eval.energy);
        let (d, grad_norm) = descent_direction(ops, &eval);
        if grad_norm <= settings.tol {
            let out = Outcome { u: z, eval, grad_norm, iterations: iter, trace, max_step_increase };
            return record(ops, params, lambda, Method::MountainPass, out, &ps);
        }
        let slope = dot(&eval.gradient, &d).max(0.0);
        let scale = energy_scale(&eval, params);
        let mut step = 1.0;
        let accepted = loop {
            if step < 1e-14 {
                break None;
            }
            let trial: Vec<f64> = z.iter().zip(&d).map(|(x, y)| x - step * y).collect();
            if let Ok((zt, et)) = peak_of(&trial) {
                if accepts(et.energy, eval.energy, settings.armijo * step * slope, scale) {
                    if let Some(r) = close_path(ops, params, &zt, endpoint, radius, nodes) {
                        break Some((zt, et, r));
                    }
                }
            }
            step *= 0.5;
        };
        let Some((zt, et, r)) = accepted else {
            return Err(Error::LineSearchStalled { grad_norm });
        };
        max_step_increase = max_step_increase.max(et.energy - eval.energy);
        z = zt;
        eval = et;
        radius = r;
    }
    Err(Error::MaxItersExceeded {
        method: "mountain_pass",
        iterations: settings.max_iters,
        grad_norm: ops.dual_norm(&eval.gradient),
    })
}

/// Radius, at least `radius` and twice the norm of `z`, at which the arc of
/// `nodes` points from the ray through `z` to the ray through `endpoint` has
/// negative energy on every segment. Doubles until it does.
fn close_path(
    ops: &OperatorSet,
    params: &ProblemParams,
    z: &[f64],
    endpoint: &[f64],
    radius: f64,
    nodes: usize,
) -> Option<f64> {
    let unit = |v: &[f64]| {
        let len = ops.norm_sq(v).sqrt();
        v.iter().map(|x| x / len).collect::<Vec<f64>>()
    };
    let (a, b) = (unit(z), unit(endpoint));
    let arc: Vec<Vec<f64>> = (0..nodes)
        .map(|i| {
            let s = i as f64 / (nodes - 1) as f64;
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (1.0 - s) * x + s * y).collect();
            unit(&mix)
        })
        .collect();
    let mut r = radius.max(2.0 * ops.norm_sq(z).sqrt());
    for _ in 0..60 {
        let scaled: Vec<Vec<f64>> = arc.iter().map(|v| v.iter().map(|x| r * x).collect()).collect();
        if scaled.windows(2).all(|w| segment_max(ops, params, &w[0], &w[1]) < 0.0) {
            return Some(r);
        }
        r *= 2.0;
    }
    None
}

/// Maximum of `J` over the segment `[a, b]`: golden section on a bracket
/// around the best of five samples.
fn segment_max(ops: &OperatorSet, params: &ProblemParams, a: &[f64], b: &[f64]) -> f64 {
    let phi = |s: f64| {
        let z: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect();
        ops.energy(params, &z)
    };
    let samples: Vec<f64> = (0..5).map(|i| phi(i as f64 / 4.0)).collect();
    let best = (0..5).fold(0, |m, i| if samples[i] > samples[m] { i } else { m });
    let (mut lo, mut hi) = ((best as f64 - 1.0).max(0.0) / 4.0, (best as f64 + 1.0).min(4.0) / 4.0);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - ratio * (hi - lo), lo + ratio * (hi - lo));
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..40 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = phi(x2);
        }
    }
    samples[best].max(f1).max(f2)
}

/// Local minimax for the indefinite problem: the energy is maximized over
/// `span(e_1, …, e_{k₀*−1}) ⊕ ℝ₊ w` and `w` descends in the complementary
/// directions. `seed`, if given, replaces `e_{k₀*}` as the initial `w`.
pub fn linking_solve(
    ops: &OperatorSet,
    params: &ProblemParams,
    wspec: &WellSpectrum,
    spec: &DirichletSpectrum,
    settings: &SolverSettings,
    seed: Option<&[f64]>,
) -> Result<SolutionRecord> {
    if spec.a0_abs <= 0.0 || !ops.has_negative_part() {
        return Err(Error::DefiniteCase);
    }
    let k = k0_star(spec)?;
    if k < 2 {
        return Err(Error::InvalidParameter { name: "spectrum", reason: "gamma_1 > 1: use the Nehari solver" });
    }
    if wspec.levels.len() < k {
        return Err(Error::SubspaceTooSmall { available: wspec.levels.len(), required: k });
    }
    let low: Vec<Vec<f64>> = wspec.basis_through(k - 1).into_iter().map(<[f64]>::to_vec).collect();
    let w0 = seed.unwrap_or(wspec.minimizer(k));
    let mut rec = minimax(ops, params, low, w0, settings)?;
    rec.lambda = wspec.lambda;
    Ok(rec)
}

fn minimax(
    ops: &OperatorSet,
    params: &ProblemParams,
    mut low: Vec<Vec<f64>>,
    w0: &[f64],
    settings: &SolverSettings,
) -> Result<SolutionRecord> {
    if w0.len() != ops.len() {
        return Err(Error::DimensionMismatch { expected: ops.len(), found: w0.len() });
    }
    energy_orthonormalize(ops, &mut low);
    let m = low.len();
    let orthogonalize = |v: &mut Vec<f64>, low: &[Vec<f64>]| {
        for _ in 0..2 {
            for q in low {
                let c = ops.inner(q, v);
                axpy(-c, q, v);
            }
        }
        let n = ops.norm_sq(v).sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        n
    };
    let mut w = w0.to_vec();
    if !(orthogonalize(&mut w, &low) > 0.0) {
        return Err(Error::SeedZero);
    }
    let mut ps = PsTracker::new(settings.ps_guard, *params);
    let check_radius = |eval: &Evaluation| match settings.radius_cap {
        Some(r) if eval.parts.norm_sq.sqrt() > r => {
            Err(Error::GeometryViolated { norm: eval.parts.norm_sq.sqrt(), radius: r })
        }
        _ => Ok(()),
    };
    let peak = |w: &[f64], y: Vec<f64>| {
        let mut basis = low.clone();
        basis.push(w.to_vec());
        maximize_affine(ops, params, None, &basis, y, true)
    };
    let t0 = nehari_scaling(ops, params, &w)?;
    let mut y0 = vec![0.0; m + 1];
    y0[m] = t0;
    let (mut y, mut u, mut eval) = peak(&w, y0);
    check_radius(&eval)?;
    ps.observe(&eval)?;
    let mut trace = vec![eval.energy];
    let mut max_step_increase = f64::NEG_INFINITY;

    for iter in 0..settings.max_iters {
        let (d, grad_norm) = descent_direction(ops, &eval);
        if grad_norm <= settings.tol {
            let out = Outcome { u, eval, grad_norm, iterations: iter, trace, max_step_increase };
            let mut rec = record(ops, params, f64::NAN, Method::Linking, out, &ps)?;
            rec.method = Method::Linking;
            return Ok(rec);
        }
        // part of the descent direction orthogonal to the current peak span
        let mut dperp = d;
        for q in low.iter().chain(core::iter::once(&w)) {
            let c = ops.inner(q, &dperp);
            axpy(-c, q, &mut dperp);
        }
        let slope = ops.norm_sq(&dperp);
        let t = y[m];
        let mut step = 1.0;
        let accepted = loop {
            if step < 1e-14 {
                break None;
            }
            let mut wn: Vec<f64> = w.iter().zip(&dperp).map(|(a, b)| a - step / t * b).collect();
            orthogonalize(&mut wn, &low);
            let (yn, un, en) = peak(&wn, y.clone());
            if accepts(en.energy, eval.energy, settings.armijo * step * slope, energy_scale(&eval, params)) {
                break Some((wn, yn, un, en));
            }
            step *= 0.5;
        };
        let Some((wn, yn, un, en)) = accepted else {
            return Err(Error::LineSearchStalled { grad_norm });
        };
        check_radius(&en)?;
        ps.observe(&en)?;
        max_step_increase = max_step_increase.max(en.energy - eval.energy);
        trace.push(en.energy);
        w = wn;
        y = yn;
        u = un;
        eval = en;
    }
    Err(Error::MaxItersExceeded {
        method: "linking",
        iterations: settings.max_iters,
        grad_norm: ops.dual_norm(&eval.gradient),
    })
}

/// Operators of the Dirichlet problem on the open well bottom.
pub fn limit_operators(grid: &Grid, well: &PotentialWell) -> Result<(OperatorSet, Vec<usize>)> {
    let nodes = omega_nodes(grid, well);
    if nodes.is_empty() {
        return Err(Error::InvalidParameter { name: "grid", reason: "no nodes inside the well bottom" });
    }
    let vol = grid.cell_volume();
    let k = stiffness_matrix(grid.dim(), grid.points_per_axis(), grid.spacing()).principal_submatrix(&nodes);
    let len = nodes.len();
    let ops = OperatorSet::from_parts(
        k,
        vol,
        vec![well.a0.max(0.0) * vol; len],
        vec![(-well.a0).max(0.0) * vol; len],
        vec![0.0; len],
    )?;
    Ok((ops, nodes))
}

/// First Dirichlet eigenvector of the well bottom, zero-extended.
pub fn omega_ground_state(grid: &Grid, well: &PotentialWell) -> Result<Vec<f64>> {
    let spec = dirichlet_spectrum(grid, &well.with_offset(-1.0), 1)?;
    Ok(spec.level(1)[0].clone())
}

/// Solves the limit problem on the well bottom; the returned `u` is
/// zero-extended to the full grid and `lambda` is `+∞`.
pub fn limit_problem_solve(
    grid: &Grid,
    well: &PotentialWell,
    params: &ProblemParams,
    settings: &SolverSettings,
) -> Result<SolutionRecord> {
    let (ops, nodes) = limit_operators(grid, well)?;
    let restrict = |full: &[f64]| nodes.iter().map(|&i| full[i]).collect::<Vec<_>>();
    let mut rec = if well.a0 >= 0.0 {
        nehari_solve(&ops, params, &restrict(&omega_ground_state(grid, well)?), f64::INFINITY, settings)?
    } else {
        let spec = dirichlet_spectrum(grid, well, 8)?;
        let k = k0_star(&spec)?;
        if k == 1 {
            nehari_solve(&ops, params, &restrict(&spec.level(1)[0]), f64::INFINITY, settings)?
        } else {
            let low: Vec<Vec<f64>> = (1..k).flat_map(|m| spec.level(m).iter().map(|v| restrict(v))).collect();
            minimax(&ops, params, low, &restrict(&spec.level(k)[0]), settings)?
        }
    };
    let mut full = vec![0.0; grid.len()];
    for (&i, v) in nodes.iter().zip(&rec.u) {
        full[i] = *v;
    }
    rec.u = full;
    rec.lambda = f64::INFINITY;
    rec.method = Method::Limit;
    rec.mass_outside = 0.0;
    Ok(rec)
}

/// Picks the method from the sign of `a₀` and `k₀*`: Nehari descent in the
/// definite and mountain-pass regimes, local minimax otherwise. `warm` seeds
/// the iteration (the solution at a neighbouring λ, say).
pub fn solve_well(
    grid: &Grid,
    well: &PotentialWell,
    params: &ProblemParams,
    settings: &SolverSettings,
    warm: Option<&[f64]>,
) -> Result<SolutionRecord> {
    let ops = assemble(grid, well)?;
    solve_well_with(grid, &ops, well, params, settings, warm)
}

pub fn solve_well_with(
    grid: &Grid,
    ops: &OperatorSet,
    well: &PotentialWell,
    params: &ProblemParams,
    settings: &SolverSettings,
    warm: Option<&[f64]>,
) -> Result<SolutionRecord> {
    if well.a0 >= 0.0 {
        let seed = match warm {
            Some(w) => w.to_vec(),
            None => omega_ground_state(grid, well)?,
        };
        return nehari_solve(ops, params, &seed, well.lambda, settings);
    }
    let spec = dirichlet_spectrum(grid, well, 8)?;
    let k = k0_star(&spec)?;
    if k == 1 {
        let seed = warm.unwrap_or(&spec.level(1)[0]);
        return nehari_solve(ops, params, seed, well.lambda, settings);
    }
    let wspec = well_spectrum(ops, well, k)?;
    linking_solve(ops, params, &wspec, &spec, settings, warm)
}

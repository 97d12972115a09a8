//! Computational domains and the box/ramp potential family.
//!
//! The well bottom `Ω = (-r, r)^dim` is surrounded by a ramp of width `w` on
//! which `a` rises from 0 to `a_cap` along the smooth cutoff
//! `s(t) = t²(3 - 2t)` of the Euclidean distance to `Ω`. Beyond the ramp `a`
//! is constant. Every set that the analysis needs (`A_∞`, `A_λ`) is then a
//! dilated box, whose volume has a closed form.

use alloc::vec::Vec;
use core::f64::consts::PI;
// shadowed by the inherent methods whenever std is linked into the build
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// Tensor lattice of interior nodes of the box `(-R, R)^dim`, homogeneous
/// Dirichlet values on the box boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    halfwidth: f64,
    n: usize,
    h: f64,
    /// Coordinate that must be hit exactly by a lattice line (the well edge).
    anchor: Option<f64>,
}

impl Grid {
    pub const MIN_POINTS: usize = 8;

    pub fn new(dim: usize, halfwidth: f64, n: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter { name: "dim", reason: "must be 1, 2 or 3" });
        }
        if !(halfwidth.is_finite() && halfwidth > 0.0) {
            return Err(Error::InvalidParameter { name: "box_halfwidth", reason: "must be positive" });
        }
        if n < Self::MIN_POINTS {
            return Err(Error::InvalidParameter { name: "points_per_axis", reason: "must be at least 8" });
        }
        Ok(Self { dim, halfwidth, n, h: 2.0 * halfwidth / (n as f64 + 1.0), anchor: None })
    }

    /// Grid with `n` points per axis whose lattice lines pass through `±edge`,
    /// using the finest spacing that still gives a halfwidth of at least
    /// `min_halfwidth`. Dirichlet eigenvalues of the box `(-edge, edge)^dim`
    /// then converge at second order.
    pub fn aligned(dim: usize, n: usize, edge: f64, min_halfwidth: f64) -> Result<Self> {
        Self::anchored(dim, n, edge, min_halfwidth, true)
    }

    /// Like [`Grid::aligned`] but with `±edge` halfway between lattice lines,
    /// so no node sits on the well boundary. A steep well then confines to
    /// exactly the node set of the open box, which makes the λ → ∞ limit and
    /// the Dirichlet problem on `Ω` the same discrete problem.
    pub fn staggered(dim: usize, n: usize, edge: f64, min_halfwidth: f64) -> Result<Self> {
        Self::anchored(dim, n, edge, min_halfwidth, false)
    }

    fn anchored(dim: usize, n: usize, edge: f64, min_halfwidth: f64, on_node: bool) -> Result<Self> {
        if !(edge > 0.0 && min_halfwidth >= edge) {
            return Err(Error::InvalidParameter { name: "box_halfwidth", reason: "must enclose the well" });
        }
        // nodes sit at ((2k + 1 - n)/2) h: integer multiples of h for odd n,
        // half-integer multiples for even n
        let target = (n as f64 + 1.0) * edge / (2.0 * min_halfwidth);
        let half_integer = n.is_multiple_of(2) == on_node;
        let cells = if half_integer { (target - 0.5).floor() + 0.5 } else { target.floor() };
        if cells < 1.0 {
            return Err(Error::InvalidParameter { name: "points_per_axis", reason: "too coarse to resolve the well" });
        }
        let h = edge / cells;
        let mut grid = Self::new(dim, 0.5 * (n as f64 + 1.0) * h, n)?;
        grid.h = h;
        if on_node {
            grid.anchor = Some(edge);
        }
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Coordinate of lattice line `k` along any axis.
    pub fn coord(&self, k: usize) -> f64 {
        let x = ((2 * k + 1) as f64 - self.n as f64) * 0.5 * self.h;
        match self.anchor {
            Some(edge) if (x.abs() - edge).abs() <= 1e-9 * self.h => edge.copysign(x),
            _ => x,
        }
    }

    pub fn multi_index(&self, index: usize) -> [usize; 3] {
        let mut m = [0; 3];
        let mut rest = index;
        for slot in m.iter_mut().take(self.dim) {
            *slot = rest % self.n;
            rest /= self.n;
        }
        m
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().rev().fold(0, |acc, &k| acc * self.n + k)
    }

    /// Coordinates of node `index`; unused axes are zero.
    pub fn node(&self, index: usize) -> [f64; 3] {
        let m = self.multi_index(index);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = self.coord(m[d]);
        }
        x
    }

    /// Lattice node obtained by reflecting the axes flagged in `mask`.
    pub fn reflect(&self, index: usize, mask: u8) -> usize {
        let mut m = self.multi_index(index);
        for (d, k) in m.iter_mut().enumerate().take(self.dim) {
            if mask & (1 << d) != 0 {
                *k = self.n - 1 - *k;
            }
        }
        self.linear_index(&m[..self.dim])
    }
}

/// Smooth monotone cutoff `s(t) = t²(3 - 2t)` clamped to `[0, 1]`.
pub fn cutoff(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Inverse of [`cutoff`] on `[0, 1]`.
pub fn cutoff_inverse(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    0.5 - ((1.0 - 2.0 * y).asin() / 3.0).sin()
}

/// Volume of the `delta`-neighbourhood of the cube of side `side` (Steiner formula).
pub fn dilated_box_volume(dim: usize, side: f64, delta: f64) -> f64 {
    match dim {
        1 => side + 2.0 * delta,
        2 => side * side + 4.0 * side * delta + PI * delta * delta,
        _ => {
            side.powi(3) + 6.0 * side * side * delta + 3.0 * PI * side * delta * delta + 4.0 / 3.0 * PI * delta.powi(3)
        }
    }
}

/// The potential `a(x)`, the offset `a₀` and the coupling `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialWell {
    pub dim: usize,
    /// `Ω = (-r, r)^dim`.
    pub omega_halfwidth: f64,
    pub ramp_width: f64,
    pub cap: f64,
    /// Level defining `A_∞ = {a < a_∞}`.
    pub a_inf: f64,
    pub a0: f64,
    pub lambda: f64,
}

impl PotentialWell {
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    pub fn with_offset(&self, a0: f64) -> Self {
        Self { a0, ..*self }
    }

    pub fn distance_to_omega(&self, x: &[f64]) -> f64 {
        x.iter()
            .take(self.dim)
            .map(|&xi| {
                let d = (xi.abs() - self.omega_halfwidth).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `a(x)`
    pub fn value(&self, x: &[f64]) -> f64 {
        let d = self.distance_to_omega(x);
        if d >= self.ramp_width {
            self.cap
        } else {
            self.cap * cutoff(d / self.ramp_width)
        }
    }

    /// `λ a(x) + a₀`
    pub fn shifted(&self, x: &[f64]) -> f64 {
        self.lambda * self.value(x) + self.a0
    }

    /// Membership in the open box `Ω`.
    pub fn in_omega(&self, x: &[f64]) -> bool {
        x.iter().take(self.dim).all(|xi| xi.abs() < self.omega_halfwidth)
    }

    /// `|Ω|`
    pub fn omega_measure(&self) -> f64 {
        (2.0 * self.omega_halfwidth).powi(self.dim as i32)
    }

    /// `|A_∞|`, exact for this family.
    pub fn measure_a_inf(&self) -> f64 {
        let delta = self.ramp_width * cutoff_inverse(self.a_inf / self.cap);
        dilated_box_volume(self.dim, 2.0 * self.omega_halfwidth, delta)
    }

    /// `Λ₀ = inf{λ > 0 : |A_λ| < ∞}`, which is `-a₀/a_cap` for `a₀ < 0`.
    pub fn lambda0(&self) -> f64 {
        if self.a0 < 0.0 {
            -self.a0 / self.cap
        } else {
            0.0
        }
    }

    /// Lower bound `max{0, -a₀/a_∞}` on λ for the space `E_λ` to carry its norm.
    pub fn embedding_threshold(&self) -> f64 {
        (-self.a0 / self.a_inf).max(0.0)
    }
}

/// Exponent and Kirchhoff coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemParams {
    pub p: f64,
    pub alpha: f64,
}

impl ProblemParams {
    pub fn new(p: f64, alpha: f64) -> Result<Self> {
        if !(p > 4.0 && p < 6.0) {
            return Err(Error::BadExponent { p });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter { name: "alpha", reason: "must be positive" });
        }
        Ok(Self { p, alpha })
    }
}

/// One named hypothesis check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub measure_a_inf: f64,
    pub measure_a_lambda: f64,
    pub omega_measure: f64,
    pub lambda0: f64,
    /// `Ω` is a coordinate box, so its boundary has corners.
    pub smooth_boundary: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Checks continuity/nonnegativity of `a`, finiteness of `|A_∞|` and the
/// structure of `Ω`, and reports the derived measures.
pub fn validate_well(well: &PotentialWell) -> Result<ValidationReport> {
    let finite = [well.omega_halfwidth, well.ramp_width, well.cap, well.a_inf, well.a0, well.lambda]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::InvalidParameter { name: "well", reason: "fields must be finite" });
    }
    if !(1..=3).contains(&well.dim) {
        return Err(Error::InvalidParameter { name: "dim", reason: "must be 1, 2 or 3" });
    }
    if well.cap <= 0.0 {
        return Err(Error::NonPositiveCap);
    }
    if !(well.a_inf > 0.0 && well.a_inf < well.cap) {
        return Err(Error::ThresholdOrder);
    }
    if well.omega_halfwidth <= 0.0 {
        return Err(Error::InvalidParameter { name: "omega_halfwidth", reason: "must be positive" });
    }
    if well.ramp_width <= 0.0 {
        return Err(Error::InvalidParameter { name: "ramp_width", reason: "must be positive" });
    }
    if well.lambda <= 0.0 {
        return Err(Error::InvalidParameter { name: "lambda", reason: "must be positive" });
    }
    let measure_a_inf = well.measure_a_inf();
    let checks = alloc::vec![
        // continuous by construction, nonnegative because cap > 0
        Check { name: "a continuous and nonnegative", passed: true },
        Check { name: "|A_inf| finite", passed: measure_a_inf.is_finite() },
        Check { name: "Omega bounded with closure a^-1(0)", passed: true },
        Check { name: "Omega inside A_lambda when a0 < 0", passed: well.a0 >= 0.0 || well.shifted(&[0.0; 3]) < 0.0 },
    ];
    Ok(ValidationReport {
        checks,
        measure_a_inf,
        measure_a_lambda: measure_a_lambda(well),
        omega_measure: well.omega_measure(),
        lambda0: well.lambda0(),
        smooth_boundary: false,
    })
}

/// Exact `|A_λ| = |{λ a + a₀ < 0}|`; `f64::INFINITY` when `λ ≤ Λ₀` and `a₀ < 0`.
pub fn measure_a_lambda(well: &PotentialWell) -> f64 {
    if well.a0 >= 0.0 {
        return 0.0;
    }
    if well.lambda <= well.lambda0() {
        return f64::INFINITY;
    }
    let level = -well.a0 / (well.lambda * well.cap);
    let delta = well.ramp_width * cutoff_inverse(level);
    dilated_box_volume(well.dim, 2.0 * well.omega_halfwidth, delta)
}

/// Indices of nodes strictly inside `Ω`, increasing.
pub fn omega_nodes(grid: &Grid, well: &PotentialWell) -> Vec<usize> {
    (0..grid.len()).filter(|&i| well.in_omega(&grid.node(i))).collect()
}

/// `a` evaluated at every node.
pub fn potential_at_nodes(grid: &Grid, well: &PotentialWell) -> Vec<f64> {
    (0..grid.len()).map(|i| well.value(&grid.node(i))).collect()
}

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

/// Everything that can go wrong inside the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
    #[error("potential cap must be positive")]
    NonPositiveCap,
    #[error("threshold a_inf must lie strictly between 0 and the cap")]
    ThresholdOrder,
    #[error("computational box (halfwidth {halfwidth}) does not contain the ramp (needs {required})")]
    BoxTooSmall { halfwidth: f64, required: f64 },
    #[error("lambda = {lambda} is not above the threshold {threshold}")]
    LambdaBelowThreshold { lambda: f64, threshold: f64 },
    #[error("lambda = {lambda} is not above Lambda_0 = {lambda0}")]
    LambdaBelowLambda0 { lambda: f64, lambda0: f64 },
    #[error("the offset a0 must be nonzero for the Dirichlet problem")]
    ZeroOffset,
    #[error("eigenvalue gamma_{index} = {gamma} is within tie tolerance of 1")]
    DegenerateThreshold { index: usize, gamma: f64 },
    #[error("no computed eigenvalue exceeds 1; compute more of the spectrum")]
    SpectrumTooShort,
    #[error("a0 >= 0: the weighted form D vanishes and the quotient is undefined")]
    DefiniteCase,
    #[error("vector has a relative component {relative} outside the designated subspace")]
    SubspaceMismatch { relative: f64 },
    #[error("seed vector is zero")]
    SeedZero,
    #[error("no positive crossing on the ray (quadratic {quadratic}, power mass {power})")]
    NoCrossing { quadratic: f64, power: f64 },
    #[error("path endpoint energy {energy} is positive")]
    EndpointNotBelowZero { energy: f64 },
    #[error("{method}: no convergence after {iterations} iterations (gradient norm {grad_norm})")]
    MaxItersExceeded { method: &'static str, iterations: usize, grad_norm: f64 },
    #[error("inner maximum left the ball of radius {radius} (norm {norm})")]
    GeometryViolated { norm: f64, radius: f64 },
    #[error("gamma_k0* = {gamma} must exceed 1")]
    GammaBelowOne { gamma: f64 },
    #[error("exponent p = {p} outside (4, 6)")]
    BadExponent { p: f64 },
    #[error("iterate bound violated: {value} > {bound}")]
    PsBoundViolated { value: f64, bound: f64 },
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("eigensolver did not converge in {iterations} iterations (residual {residual})")]
    EigenNoConvergence { iterations: usize, residual: f64 },
    #[error("converged to the trivial critical point (norm {norm})")]
    TrivialSolution { norm: f64 },
    #[error("line search stalled at gradient norm {grad_norm}")]
    LineSearchStalled { grad_norm: f64 },
    #[error("subspace too small: {available} vectors available, {required} required")]
    SubspaceTooSmall { available: usize, required: usize },
}

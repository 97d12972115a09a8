//! Numerical laboratory for the Kirchhoff problem with a steep potential well
//!
//! ```text
//! -(α ∫|∇u|² + 1) Δu + (λ a(x) + a₀) u = |u|^{p-2} u,   4 < p < 6
//! ```
//!
//! discretized on a truncated box with homogeneous Dirichlet conditions.
//! The crate is `no_std` (it needs `alloc`) and covers:
//!
//! * [`domain`]: grids, the box/ramp potential family and its validation;
//! * [`operators`]: stiffness and split weighted masses, the energy and its gradient;
//! * [`spectrum`]: Dirichlet eigenvalues on the well bottom and the deflated
//!   well spectrum `β_m(λ)`;
//! * [`solver`]: Nehari, mountain-pass and local-minimax (linking) critical point search;
//! * [`analysis`]: a priori constants of the linking geometry and the λ-sweep.
//!
//! IO, configuration and plotting live in the companion `kwl` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod analysis;
pub mod domain;
mod error;
pub mod linalg;
pub mod operators;
pub mod solver;
pub mod spectrum;

pub use error::{Error, Result};

pub use analysis::{
    concentration_row, concentration_sweep, linking_geometry, nontriviality_threshold, ps_bound, ConcentrationRow,
    LinkingGeometry, SweepOptions,
};
pub use domain::{measure_a_lambda, validate_well, Grid, PotentialWell, ProblemParams, ValidationReport};
pub use operators::{assemble, embedding_constants, EmbeddingConstants, OperatorSet};
pub use solver::{
    limit_problem_solve, linking_solve, mountain_pass_solve, nehari_solve, Method, SolutionRecord, SolverSettings,
};
pub use spectrum::{
    coercivity_split, dirichlet_spectrum, k0_star, well_spectrum, well_spectrum_flow, DirichletSpectrum, FlowRow, Side,
    WellSpectrum,
};

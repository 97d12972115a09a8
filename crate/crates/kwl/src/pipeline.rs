//! The experiment pipeline: validate → assemble → dirichlet → flow →
//! geometry → solve → sweep.
//!
//! Every stage appends named checks and derived constants. A failed check
//! does not stop the run; an error does. Either way the artifacts written so
//! far stay on disk, a `report.txt` and `manifest.txt` are written, and a
//! `FAILED` marker is left when the exit code is nonzero.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use kwl_core::analysis::{sample_linking_geometry, sweep_summary};
use kwl_core::operators::{discrete_sobolev_constant, discrete_sobolev_p_constant, talenti_constant};
use kwl_core::solver::{omega_ground_state, PsGuard};
use kwl_core::spectrum::{flow_rows_at, project_coefficients};
use kwl_core::{
    assemble, concentration_sweep, dirichlet_spectrum, embedding_constants, k0_star, limit_problem_solve,
    linking_geometry, linking_solve, measure_a_lambda, mountain_pass_solve, nehari_solve, nontriviality_threshold,
    ps_bound, validate_well, well_spectrum, ConcentrationRow, DirichletSpectrum, EmbeddingConstants, FlowRow, Grid,
    LinkingGeometry, Method, OperatorSet, PotentialWell, ProblemParams, SolutionRecord, SolverSettings, SweepOptions,
    WellSpectrum,
};

use crate::config::{AlphaSpec, ConfigError, ExperimentConfig, Layout, Location, MethodChoice};
use crate::output::{blob_hash, fmt_f64, write_csv, Plot, Series};

pub const STAGES: [&str; 7] = ["validate", "assemble", "dirichlet", "flow", "geometry", "solve", "sweep"];

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Read from the configuration.
    Config,
    /// Closed form in the inputs.
    Analytic,
    /// Deterministic numerical computation.
    Computed,
    /// Sampled or iterated estimate of an extremal value.
    Estimated,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Config => "config",
            Provenance::Analytic => "analytic",
            Provenance::Computed => "computed",
            Provenance::Estimated => "estimated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub stage: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error at {0}")]
    Config(ConfigError),
    #[error("unknown stage `{0}` (expected one of validate, assemble, dirichlet, flow, geometry, solve, sweep)")]
    UnknownStage(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Core { stage: &'static str, source: kwl_core::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::UnknownStage(_) => EXIT_CONFIG,
            RunError::Io(_) => EXIT_INVARIANT,
            RunError::Core { source, .. } => exit_code_of(source),
        }
    }
}

fn exit_code_of(e: &kwl_core::Error) -> i32 {
    match e {
        kwl_core::Error::MaxItersExceeded { .. } | kwl_core::Error::LineSearchStalled { .. } => EXIT_SOLVER,
        _ => EXIT_INVARIANT,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub stage: Option<String>,
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub exit_code: i32,
    pub out_dir: Option<PathBuf>,
    pub error: Option<RunError>,
    pub checks: Vec<CheckResult>,
    pub constants: Vec<Constant>,
    /// Artifact file names relative to `out_dir`, in order of creation.
    pub outputs: Vec<String>,
}

impl RunSummary {
    pub fn failed_checks(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Everything later stages need from earlier ones.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    threads: usize,
    checks: Vec<CheckResult>,
    constants: Vec<Constant>,
    outputs: Vec<String>,
    notes: Vec<String>,
    sweep_code: i32,
    grid: Option<Grid>,
    well: Option<PotentialWell>,
    ops: Option<OperatorSet>,
    sobolev: f64,
    sobolev_p: f64,
    embedding: Option<EmbeddingConstants>,
    spec: Option<DirichletSpectrum>,
    k0: Option<usize>,
    wspec: Option<WellSpectrum>,
    geometry: Option<LinkingGeometry>,
    alpha: Option<f64>,
    solution: Option<SolutionRecord>,
}

fn config_error(location: Location, message: impl Into<String>) -> RunError {
    RunError::Config(ConfigError { location, message: message.into() })
}

impl<'a> Run<'a> {
    fn check(&mut self, stage: &'static str, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckResult { stage, name: name.into(), passed, detail: detail.into() });
    }

    fn constant(&mut self, name: impl Into<String>, value: f64, provenance: Provenance) {
        self.constants.push(Constant { name: name.into(), value, provenance });
    }

    fn note(&mut self, stage: &str, text: impl Into<String>) {
        self.notes.push(format!("{stage}: {}", text.into()));
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
        write_csv(&self.out.join(name), header, rows)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn svg(&mut self, name: &str, plot: &Plot) -> Result<(), RunError> {
        if self.cfg.output.emit_svg {
            fs::write(self.out.join(name), plot.render())?;
            self.outputs.push(name.to_string());
        }
        Ok(())
    }

    fn grid(&self) -> &Grid {
        self.grid.as_ref().expect("validate stage ran")
    }

    fn well(&self) -> PotentialWell {
        self.well.expect("validate stage ran")
    }

    fn ops(&self) -> &OperatorSet {
        self.ops.as_ref().expect("assemble stage ran")
    }

    fn settings(&self) -> SolverSettings {
        let s = &self.cfg.solver;
        let well = self.well();
        SolverSettings {
            tol: s.tol,
            max_iters: s.max_iters,
            path_nodes: s.path_nodes,
            ps_guard: Some(PsGuard {
                a0: well.a0.min(0.0),
                measure_a_inf: well.measure_a_inf(),
                sobolev: self.sobolev,
            }),
            ..SolverSettings::default()
        }
    }

    fn params(&self) -> Result<ProblemParams, RunError> {
        let alpha = match (self.alpha, self.cfg.problem.alpha) {
            (Some(a), _) => a,
            (None, AlphaSpec::Value(a)) => a,
            (None, AlphaSpec::OfAlpha0(_)) => {
                return Err(config_error(
                    self.cfg.location("problem.alpha_over_alpha0"),
                    "`alpha_over_alpha0` needs the geometry stage (a0 < 0 with gamma_1 < 1)",
                ))
            }
        };
        ProblemParams::new(self.cfg.problem.p, alpha).map_err(|source| RunError::Core { stage: "solve", source })
    }

    // ---- validate ------------------------------------------------------

    fn validate(&mut self) -> Result<(), RunError> {
        let cfg = self.cfg;
        let d = &cfg.domain;
        let w = &cfg.well;
        let well = PotentialWell {
            dim: d.dim,
            omega_halfwidth: w.omega_halfwidth,
            ramp_width: w.ramp_width,
            cap: w.cap,
            a_inf: w.a_inf,
            a0: w.a0,
            lambda: w.lambda,
        };
        let report = validate_well(&well).map_err(|e| config_error(cfg.location("well.a0"), format!("well: {e}")))?;
        let grid = match d.layout {
            Layout::Aligned => Grid::aligned(d.dim, d.n, w.omega_halfwidth, d.box_halfwidth),
            Layout::Staggered => Grid::staggered(d.dim, d.n, w.omega_halfwidth, d.box_halfwidth),
            Layout::Plain => Grid::new(d.dim, d.box_halfwidth, d.n),
        }
        .map_err(|e| config_error(cfg.location("domain.n"), format!("grid: {e}")))?;
        if grid.halfwidth() < w.omega_halfwidth + w.ramp_width {
            return Err(config_error(
                cfg.location("domain.box_halfwidth"),
                format!(
                    "box halfwidth {} does not contain the ramp (needs {})",
                    grid.halfwidth(),
                    w.omega_halfwidth + w.ramp_width
                ),
            ));
        }
        if !(cfg.problem.p > 4.0 && cfg.problem.p < 6.0) {
            return Err(config_error(cfg.location("problem.p"), "p must lie in (4, 6)"));
        }
        match cfg.problem.alpha {
            AlphaSpec::Value(a) if !(a > 0.0) => {
                return Err(config_error(cfg.location("problem.alpha"), "alpha must be positive"))
            }
            AlphaSpec::OfAlpha0(f) if !(f > 0.0) => {
                return Err(config_error(cfg.location("problem.alpha_over_alpha0"), "the multiple must be positive"))
            }
            AlphaSpec::OfAlpha0(_) if w.a0 >= 0.0 => {
                return Err(config_error(
                    cfg.location("problem.alpha_over_alpha0"),
                    "alpha0 exists only for a0 < 0; give `alpha`",
                ))
            }
            _ => {}
        }
        // the λ lists only need the well spectrum to exist; the solve λ also
        // needs the L² embedding constant
        let lambda0 = well.lambda0();
        for (key, list) in [("spectrum.lambdas", &cfg.spectrum.lambdas), ("sweep.lambdas", &cfg.sweep.lambdas)] {
            if list.windows(2).any(|p| p[1] <= p[0]) {
                return Err(config_error(cfg.location(key), "lambda values must be strictly increasing"));
            }
            if let Some(&bad) = list.iter().find(|&&l| !(l > lambda0)) {
                return Err(config_error(
                    cfg.location(key),
                    format!("lambda = {bad} is not above Lambda_0 = {lambda0}"),
                ));
            }
        }
        let floor = lambda0.max(well.embedding_threshold());
        if !(w.lambda > floor) {
            return Err(config_error(
                cfg.location("well.lambda"),
                format!("lambda = {} is not above max(Lambda_0, -a0/a_inf) = {floor}", w.lambda),
            ));
        }
        if cfg.spectrum.m_max == 0 || cfg.spectrum.count < cfg.spectrum.m_max {
            return Err(config_error(cfg.location("spectrum.m_max"), "need 1 <= m_max <= count"));
        }
        if !(cfg.solver.tol > 0.0) || cfg.solver.max_iters == 0 || cfg.solver.path_nodes < 3 {
            return Err(config_error(cfg.location("solver.tol"), "need tol > 0, max_iters >= 1, path_nodes >= 3"));
        }
        if cfg.geometry.samples == 0 || cfg.geometry.m_samples == 0 || cfg.geometry.sobolev_iters == 0 {
            return Err(config_error(cfg.location("geometry.samples"), "sample and iteration counts must be positive"));
        }
        if !(cfg.sweep.mass_cap > 0.0 && cfg.sweep.h1_cap > 0.0) {
            return Err(config_error(cfg.location("sweep.mass_cap"), "caps must be positive"));
        }

        for c in &report.checks {
            self.check("validate", c.name, c.passed, "");
        }
        self.constant("grid.spacing", grid.spacing(), Provenance::Computed);
        self.constant("grid.box_halfwidth", grid.halfwidth(), Provenance::Computed);
        self.constant("grid.nodes", grid.len() as f64, Provenance::Computed);
        self.constant("well.omega_measure", report.omega_measure, Provenance::Analytic);
        self.constant("well.measure_a_inf", report.measure_a_inf, Provenance::Analytic);
        self.constant("well.measure_a_lambda", measure_a_lambda(&well), Provenance::Analytic);
        self.constant("well.lambda0", report.lambda0, Provenance::Analytic);
        self.constant("well.a0", w.a0, Provenance::Config);
        self.constant("well.lambda", w.lambda, Provenance::Config);
        self.constant("problem.p", cfg.problem.p, Provenance::Config);
        if let AlphaSpec::Value(a) = cfg.problem.alpha {
            self.alpha = Some(a);
            self.constant("problem.alpha", a, Provenance::Config);
        }
        self.grid = Some(grid);
        self.well = Some(well);
        Ok(())
    }

    // ---- assemble ------------------------------------------------------

    fn assemble(&mut self) -> Result<(), RunError> {
        let stage = "assemble";
        let core = |source| RunError::Core { stage, source };
        let grid = *self.grid();
        let well = self.well();
        let ops = assemble(&grid, &well).map_err(core)?;
        self.sobolev = discrete_sobolev_constant(&ops, &grid, &well).map_err(core)?;
        self.sobolev_p =
            discrete_sobolev_p_constant(&ops, self.cfg.problem.p, self.cfg.geometry.sobolev_iters).map_err(core)?;
        let embedding = embedding_constants(&well, well.lambda, self.sobolev, self.sobolev_p).map_err(core)?;
        self.constant("sobolev.s_discrete", self.sobolev, Provenance::Computed);
        self.constant("sobolev.s_continuum", talenti_constant(), Provenance::Analytic);
        self.constant("sobolev.s_p", self.sobolev_p, Provenance::Estimated);
        self.constant("embedding.d_lambda", embedding.d_lambda, Provenance::Computed);
        self.constant("embedding.lp_coefficient", embedding.lp_coefficient, Provenance::Computed);
        // ‖u‖_{L²} ≤ d_λ‖u‖_λ on a smooth bump and on a rough vector
        let bump: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.node(i);
                (0..grid.dim()).map(|k| (-x[k] * x[k]).exp()).product()
            })
            .collect();
        let rough: Vec<f64> = (0..grid.len()).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        for (name, v) in [("bump", &bump), ("alternating", &rough)] {
            let l2 = ops.l2_sq(v).sqrt();
            let bound = embedding.d_lambda * ops.norm_sq(v).sqrt();
            self.check(
                stage,
                format!("L2 embedding on {name}"),
                l2 <= bound * (1.0 + 1e-12),
                format!("{l2:.6e} <= {bound:.6e}"),
            );
        }
        self.check(
            stage,
            "Sobolev constants positive",
            self.sobolev > 0.0 && self.sobolev_p > 0.0,
            format!("S = {:.6e}, S_p = {:.6e}", self.sobolev, self.sobolev_p),
        );
        self.embedding = Some(embedding);
        self.ops = Some(ops);
        Ok(())
    }

    // ---- dirichlet -----------------------------------------------------

    fn dirichlet(&mut self) -> Result<(), RunError> {
        let stage = "dirichlet";
        let well = self.well();
        if well.a0 == 0.0 {
            self.note(stage, "skipped: a0 = 0 has no weighted Dirichlet problem");
            return Ok(());
        }
        let spec = dirichlet_spectrum(self.grid(), &well, self.cfg.spectrum.count)
            .map_err(|source| RunError::Core { stage, source })?;
        let rows: Vec<Vec<String>> = spec
            .gammas
            .iter()
            .zip(&spec.multiplicities)
            .enumerate()
            .map(|(i, (g, m))| vec![(i + 1).to_string(), fmt_f64(*g), m.to_string()])
            .collect();
        self.csv("spectrum.csv", &["level", "gamma", "multiplicity"], &rows)?;
        for (i, g) in spec.gammas.iter().enumerate() {
            self.constant(format!("dirichlet.gamma_{}", i + 1), *g, Provenance::Computed);
        }
        self.check(
            stage,
            "eigen residual",
            spec.max_residual <= 1e-8,
            format!("max residual {:.3e}", spec.max_residual),
        );
        self.check(
            stage,
            "levels increasing",
            spec.gammas.windows(2).all(|w| w[0] < w[1]),
            format!("{} levels", spec.gammas.len()),
        );
        if well.a0 < 0.0 {
            let k = k0_star(&spec).map_err(|source| RunError::Core { stage, source })?;
            self.constant("dirichlet.k0_star", k as f64, Provenance::Computed);
            self.k0 = Some(k);
        }
        self.spec = Some(spec);
        Ok(())
    }

    // ---- flow ----------------------------------------------------------

    fn flow(&mut self) -> Result<(), RunError> {
        let stage = "flow";
        let well = self.well();
        if well.a0 >= 0.0 {
            self.note(stage, "skipped: a0 >= 0, the weighted form vanishes");
            return Ok(());
        }
        let lambdas = self.cfg.spectrum.lambdas.clone();
        if lambdas.is_empty() {
            self.note(stage, "skipped: no spectrum.lambdas");
            return Ok(());
        }
        let m_max = self.cfg.spectrum.m_max;
        let spec = self.spec.as_ref().expect("dirichlet stage ran");
        let grid = *self.grid();
        let per_lambda =
            parallel_map(&lambdas, self.threads, |&lambda| flow_rows_at(&grid, &well, lambda, m_max, spec));
        let mut rows: Vec<FlowRow> = Vec::new();
        for r in per_lambda {
            rows.extend(r.map_err(|source| RunError::Core { stage, source })?);
        }
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(r.lambda),
                    r.m.to_string(),
                    fmt_f64(r.beta),
                    fmt_f64(r.gamma_disc),
                    fmt_f64(r.subspace_dist),
                    r.iters.to_string(),
                ]
            })
            .collect();
        self.csv("flow.csv", &["lambda", "m", "beta_m", "gamma_m_disc", "subspace_dist", "iters"], &table)?;
        let level = |m: usize| rows.iter().filter(|r| r.m == m).collect::<Vec<_>>();
        let first = level(1);
        let gamma1 = first[0].gamma_disc;
        self.check(
            stage,
            "beta_1 nondecreasing in lambda",
            first.windows(2).all(|w| w[1].beta >= w[0].beta - 1e-12),
            first.iter().map(|r| format!("{:.6e}", r.beta)).collect::<Vec<_>>().join(" "),
        );
        self.check(
            stage,
            "0 < beta_1 <= gamma_1",
            first.iter().all(|r| r.beta > 0.0 && r.beta <= gamma1 * (1.0 + 1e-12)),
            format!("gamma_1 = {gamma1:.6e}"),
        );
        let ordered = lambdas.iter().all(|&l| {
            let at: Vec<f64> = rows.iter().filter(|r| r.lambda == l).map(|r| r.beta).collect();
            at.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12))
        });
        self.check(stage, "beta_1 <= beta_2 <= ... at every lambda", ordered, "");
        for m in 2..=m_max {
            let l = level(m);
            let monotone = l.windows(2).all(|w| w[1].beta >= w[0].beta - 1e-12);
            self.note(stage, format!("beta_{m} nondecreasing (measured, not asserted): {monotone}"));
        }
        for m in 1..=m_max {
            let last = *level(m).last().expect("nonempty");
            self.constant(format!("flow.beta_{m}_final"), last.beta, Provenance::Computed);
            self.constant(format!("flow.subspace_dist_{m}_final"), last.subspace_dist, Provenance::Computed);
        }
        let plot = Plot {
            title: "Well levels beta_m(lambda)".into(),
            x_label: "lambda".into(),
            y_label: "beta_m".into(),
            log_x: true,
            log_y: false,
            series: (1..=m_max)
                .flat_map(|m| {
                    let l = level(m);
                    let g = l[0].gamma_disc;
                    [
                        Series {
                            label: format!("beta_{m}"),
                            points: l.iter().map(|r| (r.lambda, r.beta)).collect(),
                            dashed: false,
                        },
                        Series {
                            label: format!("gamma_{m}"),
                            points: vec![(lambdas[0], g), (*lambdas.last().unwrap(), g)],
                            dashed: true,
                        },
                    ]
                })
                .collect(),
        };
        self.svg("flow.svg", &plot)
    }

    // ---- geometry ------------------------------------------------------

    fn geometry(&mut self) -> Result<(), RunError> {
        let stage = "geometry";
        let core = |source| RunError::Core { stage, source };
        let well = self.well();
        let k = match self.k0 {
            Some(k) if well.a0 < 0.0 && k >= 2 => k,
            _ => {
                self.note(stage, "skipped: no unstable levels below 1 (mountain-pass regime)");
                return Ok(());
            }
        };
        let spec = self.spec.as_ref().expect("dirichlet stage ran");
        let embedding = self.embedding.expect("assemble stage ran");
        // only p enters the constants
        let shape = ProblemParams::new(self.cfg.problem.p, 1.0).map_err(core)?;
        let g = linking_geometry(&embedding, spec, &shape, self.cfg.geometry.m_samples, self.cfg.seed).map_err(core)?;
        let alpha = match self.cfg.problem.alpha {
            AlphaSpec::Value(a) => a,
            AlphaSpec::OfAlpha0(f) => {
                self.constant("problem.alpha", f * g.alpha0, Provenance::Computed);
                f * g.alpha0
            }
        };
        self.alpha = Some(alpha);
        let params = ProblemParams::new(self.cfg.problem.p, alpha).map_err(core)?;
        let levels = (k + 1).max(self.cfg.spectrum.m_max);
        let wspec = well_spectrum(self.ops(), &well, levels).map_err(core)?;
        let sample = sample_linking_geometry(self.ops(), &params, &wspec, &g, self.cfg.geometry.samples, self.cfg.seed)
            .map_err(core)?;
        for (name, value, prov) in [
            ("geometry.rho", g.rho, Provenance::Computed),
            ("geometry.d0", g.d0, Provenance::Computed),
            ("geometry.m_lp", g.m_lp, Provenance::Estimated),
            ("geometry.r_star", g.r_star, Provenance::Computed),
            ("geometry.r0", g.r0, Provenance::Computed),
            ("geometry.alpha0", g.alpha0, Provenance::Computed),
            ("geometry.split", g.split, Provenance::Analytic),
            ("geometry.gamma_k0", g.gamma, Provenance::Computed),
            ("geometry.energy_ceiling", g.energy_ceiling(alpha), Provenance::Analytic),
            ("geometry.sphere_min", sample.sphere_min, Provenance::Estimated),
            ("geometry.boundary_max", sample.boundary_max, Provenance::Estimated),
            ("well.beta_k0_minus_1", wspec.beta(k - 1), Provenance::Computed),
        ] {
            self.constant(name, value, prov);
        }
        self.check(
            stage,
            "rho > 0, d0 > 0, R0 > rho, alpha0 > 0",
            g.rho > 0.0 && g.d0 > 0.0 && g.r0 > g.rho && g.alpha0 > 0.0,
            format!("rho {:.6e} d0 {:.6e} R0 {:.6e} alpha0 {:.6e}", g.rho, g.d0, g.r0, g.alpha0),
        );
        self.check(
            stage,
            "J >= d0 on the high rho-sphere",
            sample.sphere_min >= g.d0 - 1e-9,
            format!("min {:.6e} vs d0 {:.6e} ({} samples)", sample.sphere_min, g.d0, sample.samples),
        );
        if alpha < g.alpha0 {
            self.check(
                stage,
                "J <= d0/2 on the boundary of Q",
                sample.boundary_max <= g.d0 / 2.0 + 1e-9,
                format!("max {:.6e} vs d0/2 {:.6e}", sample.boundary_max, g.d0 / 2.0),
            );
        } else {
            self.note(stage, format!("alpha = {alpha} >= alpha0 = {}: boundary bound not guaranteed", g.alpha0));
        }
        let rows: Vec<Vec<String>> = [
            ("rho", g.rho),
            ("d0", g.d0),
            ("m_lp", g.m_lp),
            ("r0", g.r0),
            ("alpha0", g.alpha0),
            ("alpha", alpha),
            ("sphere_min", sample.sphere_min),
            ("boundary_max", sample.boundary_max),
        ]
        .iter()
        .map(|(n, v)| vec![n.to_string(), fmt_f64(*v)])
        .collect();
        self.csv("geometry.csv", &["quantity", "value"], &rows)?;
        self.geometry = Some(g);
        self.wspec = Some(wspec);
        Ok(())
    }

    // ---- solve ---------------------------------------------------------

    fn accept_checks(&mut self, rec: &SolutionRecord) {
        let stage = "solve";
        let tag = rec.method.tag();
        let ops = self.ops.as_ref().expect("assemble stage ran");
        let tol = self.cfg.solver.tol;
        let ray3 = rec.ray_energy(ops, 3.0);
        self.check(
            stage,
            format!("{tag}: gradient norm <= tol"),
            rec.grad_norm <= tol,
            format!("{:.3e}", rec.grad_norm),
        );
        self.check(
            stage,
            format!("{tag}: nehari defect <= 1e-6"),
            rec.nehari_defect <= 1e-6,
            format!("{:.3e}", rec.nehari_defect),
        );
        self.check(stage, format!("{tag}: nontrivial"), rec.norm >= 1e-6, format!("norm {:.6e}", rec.norm));
        self.check(stage, format!("{tag}: J(3u) < 0"), ray3 < 0.0, format!("{ray3:.6e}"));
        if let Some(r) = rec.ps_max_ratio {
            self.check(stage, format!("{tag}: iterates within the PS bound"), r <= 1.0, format!("max ratio {r:.3e}"));
        }
        if matches!(rec.method, Method::Nehari | Method::MountainPass) {
            self.check(
                stage,
                format!("{tag}: energy nonincreasing"),
                !(rec.max_step_increase > 1e-12),
                format!("largest step increase {:.3e}", rec.max_step_increase),
            );
        }
    }

    fn mountain_pass_endpoint(&self, params: &ProblemParams, base: &[f64]) -> Vec<f64> {
        let ops = self.ops();
        let mut t = 2.0;
        let mut e: Vec<f64> = base.iter().map(|x| t * x).collect();
        while ops.energy(params, &e) > 0.0 && t < 1e12 {
            t *= 2.0;
            e = base.iter().map(|x| t * x).collect();
        }
        e
    }

    fn solve(&mut self) -> Result<(), RunError> {
        let stage = "solve";
        let core = |source| RunError::Core { stage, source };
        let params = self.params()?;
        let well = self.well();
        let mut settings = self.settings();
        let ops = self.ops();
        let seed = match &self.spec {
            Some(spec) if well.a0 < 0.0 => spec.level(1)[0].clone(),
            _ => omega_ground_state(self.grid(), &well).map_err(core)?,
        };
        let linking = match self.cfg.solver.method {
            MethodChoice::Auto => self.k0.is_some_and(|k| k >= 2),
            MethodChoice::Linking => true,
            _ => false,
        };
        let mut records = Vec::new();
        let mut pending: Vec<(&str, bool, String)> = Vec::new();
        if linking {
            let (Some(spec), Some(k)) = (&self.spec, self.k0) else {
                return Err(config_error(self.cfg.location("solver.method"), "linking needs a0 < 0"));
            };
            if k < 2 {
                return Err(config_error(self.cfg.location("solver.method"), "linking needs gamma_1 < 1"));
            }
            let wspec = match &self.wspec {
                Some(w) => w.clone(),
                None => well_spectrum(ops, &well, k + 1).map_err(core)?,
            };
            settings.radius_cap = self.geometry.as_ref().map(|g| g.r0);
            let rec = linking_solve(ops, &params, &wspec, spec, &settings, None).map_err(core)?;
            if let Some(g) = &self.geometry {
                let ceiling = g.energy_ceiling(params.alpha);
                let inside = rec.energy >= g.d0 && rec.energy <= ceiling;
                pending.push((
                    "linking: energy in [d0, ceiling]",
                    inside,
                    format!("{:.6e} in [{:.6e}, {ceiling:.6e}]", rec.energy, g.d0),
                ));
            }
            let e = wspec.minimizer(k);
            let c = project_coefficients(&[e], &rec.u, |x, y| ops.inner(x, y))[0];
            let share = c.abs() * ops.norm_sq(e).sqrt() / rec.norm;
            pending.push(("linking: component along e_k0 >= 1e-3", share >= 1e-3, format!("{share:.6e}")));
            records.push(rec);
        } else {
            let run_nehari = self.cfg.solver.method != MethodChoice::MountainPass;
            let neh = if run_nehari {
                Some(nehari_solve(ops, &params, &seed, well.lambda, &settings).map_err(core)?)
            } else {
                None
            };
            let base = neh.as_ref().map(|r| r.u.clone()).unwrap_or(seed);
            let endpoint = self.mountain_pass_endpoint(&params, &base);
            let mp = mountain_pass_solve(ops, &params, &endpoint, well.lambda, &settings).map_err(core)?;
            if let Some(n) = &neh {
                let rel = (mp.energy - n.energy).abs() / n.energy.abs();
                pending.push((
                    "nehari and mountain pass agree within 1e-4",
                    rel <= 1e-4,
                    format!("relative {rel:.3e}"),
                ));
            }
            records.extend(neh);
            records.push(mp);
        }
        for (name, passed, detail) in pending {
            self.check(stage, name, passed, detail);
        }
        for rec in &records {
            self.accept_checks(rec);
        }
        let rows: Vec<Vec<String>> = records
            .iter()
            .map(|r| {
                vec![
                    r.method.tag().to_string(),
                    fmt_f64(r.lambda),
                    fmt_f64(r.alpha),
                    fmt_f64(r.p),
                    fmt_f64(r.energy),
                    fmt_f64(r.grad_norm),
                    fmt_f64(r.nehari_defect),
                    fmt_f64(r.norm),
                    fmt_f64(r.mass_outside),
                    r.iterations.to_string(),
                ]
            })
            .collect();
        self.csv(
            "solution.csv",
            &[
                "method",
                "lambda",
                "alpha",
                "p",
                "energy",
                "grad_norm",
                "nehari_defect",
                "norm",
                "mass_outside",
                "iters",
            ],
            &rows,
        )?;
        let main = records.swap_remove(0);
        let grid = *self.grid();
        let axes = ["x", "y", "z"];
        let mut header: Vec<&str> = axes[..grid.dim()].to_vec();
        header.push("u");
        let profile: Vec<Vec<String>> = (0..grid.len())
            .map(|i| {
                let x = grid.node(i);
                let mut row: Vec<String> = x[..grid.dim()].iter().map(|v| fmt_f64(*v)).collect();
                row.push(fmt_f64(main.u[i]));
                row
            })
            .collect();
        self.csv("profile.csv", &header, &profile)?;
        self.constant(format!("solve.energy_{}", main.method.tag()), main.energy, Provenance::Computed);
        self.solution = Some(main);
        Ok(())
    }

    // ---- sweep ---------------------------------------------------------

    fn sweep(&mut self) -> Result<(), RunError> {
        let stage = "sweep";
        let core = |source| RunError::Core { stage, source };
        let lambdas = self.cfg.sweep.lambdas.clone();
        if lambdas.is_empty() {
            self.note(stage, "skipped: no sweep.lambdas");
            return Ok(());
        }
        let params = self.params()?;
        let well = self.well();
        let grid = *self.grid();
        let base = SolverSettings { ps_guard: None, ..self.settings() };
        let limit = limit_problem_solve(&grid, &well, &params, &base).map_err(core)?;
        let c_cap = self.solution.as_ref().map_or(limit.energy, |s| s.energy.max(limit.energy));
        let ps_b = ps_bound(params.alpha, c_cap, well.a0.min(0.0), well.measure_a_inf(), self.sobolev, params.p)
            .map_err(core)?;
        let lambda_min = nontriviality_threshold(params.p, self.sobolev, well.a0, well.a_inf, ps_b).map_err(core)?;
        self.constant("sweep.limit_energy", limit.energy, Provenance::Computed);
        self.constant("sweep.ps_bound", ps_b, Provenance::Computed);
        self.constant("sweep.lambda_min", lambda_min, Provenance::Computed);
        let opts = SweepOptions {
            settings: self.settings(),
            warm_start: self.cfg.sweep.warm_start,
            lambda_min: Some(lambda_min),
        };
        let rows: Vec<ConcentrationRow> = if opts.warm_start || self.threads == 1 {
            concentration_sweep(&grid, &well, &params, &lambdas, &limit, &opts).map_err(core)?
        } else {
            let parts = parallel_map(&lambdas, self.threads, |&l| {
                concentration_sweep(&grid, &well, &params, &[l], &limit, &opts)
            });
            let mut rows = Vec::new();
            for p in parts {
                rows.extend(p.map_err(core)?);
            }
            rows
        };
        let mut table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(r.lambda),
                    fmt_f64(r.energy),
                    fmt_f64(r.grad_norm),
                    fmt_f64(r.nehari_defect),
                    fmt_f64(r.mass_outside),
                    fmt_f64(r.h1_dist_rel),
                    fmt_f64(r.well_energy),
                    r.flagged.to_string(),
                ]
            })
            .collect();
        table.push(vec![
            fmt_f64(limit.lambda),
            fmt_f64(limit.energy),
            fmt_f64(limit.grad_norm),
            fmt_f64(limit.nehari_defect),
            fmt_f64(limit.mass_outside),
            fmt_f64(0.0),
            fmt_f64(0.0),
            "false".into(),
        ]);
        self.csv(
            "sweep.csv",
            &[
                "lambda",
                "energy",
                "grad_norm",
                "nehari_defect",
                "mass_outside",
                "h1_dist_rel",
                "well_energy",
                "flagged",
            ],
            &table,
        )?;
        let failures: Vec<&ConcentrationRow> = rows.iter().filter(|r| r.failure.is_some()).collect();
        for r in &failures {
            let e = r.failure.as_ref().expect("filtered");
            self.sweep_code = self.sweep_code.max(exit_code_of(e));
        }
        self.check(
            stage,
            "every lambda solved",
            failures.is_empty(),
            failures
                .iter()
                .map(|r| format!("{}: {}", r.lambda, r.failure.as_ref().unwrap()))
                .collect::<Vec<_>>()
                .join("; "),
        );
        let tol = self.cfg.solver.tol;
        let solved: Vec<&ConcentrationRow> = rows.iter().filter(|r| r.failure.is_none()).collect();
        self.check(
            stage,
            "rows accepted (gradient, nehari defect)",
            solved.iter().all(|r| r.grad_norm <= tol && r.nehari_defect <= 1e-6),
            "",
        );
        let flagged = rows.iter().filter(|r| r.flagged && r.failure.is_none()).count();
        if flagged > 0 {
            self.note(
                stage,
                format!("{flagged} rows below lambda_min = {lambda_min:.3e} (outside the guaranteed regime)"),
            );
        }
        if let Some(s) = sweep_summary(&rows) {
            let caps = &self.cfg.sweep;
            let (mass_cap, h1_cap) = (caps.mass_cap, caps.h1_cap);
            self.check(
                stage,
                "mass_outside decreases first to final",
                s.mass_final < s.mass_first,
                format!("{:.3e} -> {:.3e}", s.mass_first, s.mass_final),
            );
            self.check(
                stage,
                "mass_outside(final) below cap",
                s.mass_final < mass_cap,
                format!("{:.3e} < {mass_cap}", s.mass_final),
            );
            self.check(
                stage,
                "h1_dist_rel decreases first to final",
                s.h1_final < s.h1_first,
                format!("{:.3e} -> {:.3e}", s.h1_first, s.h1_final),
            );
            self.check(
                stage,
                "h1_dist_rel(final) below cap",
                s.h1_final < h1_cap,
                format!("{:.3e} < {h1_cap}", s.h1_final),
            );
            self.check(stage, "well energy decreasing over the top decade", s.well_energy_top_decade_decreasing, "");
            self.constant("sweep.mass_outside_final", s.mass_final, Provenance::Computed);
            self.constant("sweep.h1_dist_rel_final", s.h1_final, Provenance::Computed);
        }
        let pts = |f: fn(&ConcentrationRow) -> f64| solved.iter().map(|r| (r.lambda, f(r))).collect::<Vec<_>>();
        let plot = Plot {
            title: "Concentration on the well bottom".into(),
            x_label: "lambda".into(),
            y_label: "fraction".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series { label: "mass_outside".into(), points: pts(|r| r.mass_outside), dashed: false },
                Series { label: "h1_dist_rel".into(), points: pts(|r| r.h1_dist_rel), dashed: false },
            ],
        };
        self.svg("sweep.svg", &plot)
    }

    // ---- artifacts -----------------------------------------------------

    fn report(&self, error: Option<&RunError>) -> String {
        let mut s = String::from("kwl run report\n\n");
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            if c.detail.is_empty() {
                s.push_str(&format!("{mark} [{}] {}\n", c.stage, c.name));
            } else {
                s.push_str(&format!("{mark} [{}] {}: {}\n", c.stage, c.name, c.detail));
            }
        }
        if !self.notes.is_empty() {
            s.push_str("\nnotes\n");
            for n in &self.notes {
                s.push_str(&format!("  {n}\n"));
            }
        }
        if let Some(e) = error {
            s.push_str(&format!("\nerror: {e}\n"));
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        s.push_str(&format!("\n{} checks, {} failed\n", self.checks.len(), failed));
        s
    }

    fn manifest(&self, config_name: &str, config_text: &str, exit_code: i32) -> Result<String, RunError> {
        let mut s = String::from("# kwl run manifest\n\n[inputs]\n");
        s.push_str(&format!("{config_name} = {}\n", blob_hash(config_text.as_bytes())));
        s.push_str("\n[config]\n");
        for (k, v) in self.cfg.echo() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str("\n[constants]\n");
        for c in &self.constants {
            s.push_str(&format!("{} = {} ; {}\n", c.name, fmt_f64(c.value), c.provenance));
        }
        s.push_str("\n[checks]\n");
        for c in &self.checks {
            s.push_str(&format!("{}: {} = {}\n", c.stage, c.name, if c.passed { "pass" } else { "fail" }));
        }
        s.push_str("\n[outputs]\n");
        for name in &self.outputs {
            let bytes = fs::read(self.out.join(name))?;
            s.push_str(&format!("{name} = {}\n", blob_hash(&bytes)));
        }
        s.push_str(&format!("\n[result]\nexit_code = {exit_code}\n"));
        Ok(s)
    }
}

/// Maps `f` over `items` on up to `threads` scoped threads, preserving order.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    thread::scope(|scope| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn default_out_dir(config_path: &Path) -> PathBuf {
    let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    PathBuf::from("kwl-out").join(stem)
}

/// Runs the pipeline described by the config file and writes all artifacts.
pub fn run_file(config_path: &Path, opts: &RunOptions) -> RunSummary {
    let failed = |error: RunError, out_dir: Option<PathBuf>| RunSummary {
        exit_code: error.exit_code(),
        out_dir,
        error: Some(error),
        checks: Vec::new(),
        constants: Vec::new(),
        outputs: Vec::new(),
    };
    let text = match fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            return failed(
                config_error(Location { line: 0, column: 0 }, format!("cannot read {}: {e}", config_path.display())),
                None,
            )
        }
    };
    let cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return failed(RunError::Config(e), None),
    };
    let last = match &opts.stage {
        None => STAGES.len() - 1,
        Some(name) => match STAGES.iter().position(|s| s == name) {
            Some(i) => i,
            None => return failed(RunError::UnknownStage(name.clone()), None),
        },
    };
    let out = opts.out.clone().or_else(|| cfg.output.directory.clone()).unwrap_or_else(|| default_out_dir(config_path));
    if let Err(e) = fs::create_dir_all(&out) {
        return failed(RunError::Io(e), Some(out));
    }
    let _ = fs::remove_file(out.join("FAILED"));
    let mut run = Run {
        cfg: &cfg,
        out: out.clone(),
        threads: opts.threads.unwrap_or(cfg.threads).max(1),
        checks: Vec::new(),
        constants: Vec::new(),
        outputs: Vec::new(),
        notes: Vec::new(),
        sweep_code: EXIT_OK,
        grid: None,
        well: None,
        ops: None,
        sobolev: 0.0,
        sobolev_p: 0.0,
        embedding: None,
        spec: None,
        k0: None,
        wspec: None,
        geometry: None,
        alpha: None,
        solution: None,
    };
    let mut error = None;
    for stage in &STAGES[..=last] {
        let result = match *stage {
            "validate" => run.validate(),
            "assemble" => run.assemble(),
            "dirichlet" => run.dirichlet(),
            "flow" => run.flow(),
            "geometry" => run.geometry(),
            "solve" => run.solve(),
            _ => run.sweep(),
        };
        if let Err(e) = result {
            error = Some(e);
            break;
        }
    }
    let mut exit_code = match &error {
        Some(e) => e.exit_code(),
        None if run.sweep_code != EXIT_OK => run.sweep_code,
        None if run.checks.iter().any(|c| !c.passed) => EXIT_INVARIANT,
        None => EXIT_OK,
    };
    let config_name = config_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let written = fs::write(out.join("report.txt"), run.report(error.as_ref()))
        .map_err(RunError::from)
        .and_then(|_| run.manifest(&config_name, &text, exit_code))
        .and_then(|m| fs::write(out.join("manifest.txt"), m).map_err(RunError::from));
    if let Err(e) = written {
        exit_code = exit_code.max(EXIT_INVARIANT);
        error.get_or_insert(e);
    }
    if exit_code != EXIT_OK {
        let reason = match &error {
            Some(e) => e.to_string(),
            None => run
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("[{}] {}", c.stage, c.name))
                .collect::<Vec<_>>()
                .join("\n"),
        };
        let _ = fs::write(out.join("FAILED"), format!("exit code {exit_code}\n{reason}\n"));
    }
    RunSummary {
        exit_code,
        out_dir: Some(out),
        error,
        checks: run.checks,
        constants: run.constants,
        outputs: run.outputs,
    }
}

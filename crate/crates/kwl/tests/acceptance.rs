//! Acceptance suite: every criterion at its stated tolerance and runtime
//! budget, one PASS/FAIL line each. Runs without the libtest harness so the
//! lines come out in order; exits nonzero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::result::Result;
use std::time::Instant;

use common::{shoot, HALF_PI};
use kwl::config::ExperimentConfig;
use kwl::pipeline::{run_file, RunOptions, RunSummary};
use kwl_core::operators::{discrete_sobolev_constant, discrete_sobolev_p_constant};
use kwl_core::spectrum::{coercivity_split, flow_rows_at, Side};
use kwl_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

/// Number, name, runtime budget in seconds, check.
type Criterion = (u32, &'static str, Option<f64>, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(format!("{name}.ini"))
}

fn run_example(name: &str, out: &Path) -> Result<RunSummary, String> {
    let s = run_file(&example(name), &RunOptions { out: Some(out.to_path_buf()), ..RunOptions::default() });
    match s.exit_code {
        0 => Ok(s),
        code => Err(format!("{name} exited {code}: {:?}", s.error)),
    }
}

fn constant(s: &RunSummary, name: &str) -> Result<f64, String> {
    s.constants.iter().find(|c| c.name == name).map(|c| c.value).ok_or(format!("no constant {name}"))
}

/// Columns of a CSV file by header name, parsed as numbers where possible.
fn table(path: &Path) -> Result<Vec<std::collections::BTreeMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(header.iter().cloned().zip(rec.iter().map(String::from)).collect())
        })
        .collect()
}

fn num(row: &std::collections::BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or(f64::NAN)
}

fn steep(dim: usize, a0: f64, lambda: f64) -> PotentialWell {
    PotentialWell { dim, omega_halfwidth: HALF_PI, ramp_width: 0.25, cap: 20.0, a_inf: 1.0, a0, lambda }
}

fn interval_grid(n: usize) -> Grid {
    Grid::staggered(1, n, HALF_PI, HALF_PI + 1.0).unwrap()
}

const DECADES: [f64; 6] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6];

fn interval_gammas(n: usize, a0: f64) -> Result<(f64, Vec<f64>), String> {
    let grid = Grid::aligned(1, n, HALF_PI, HALF_PI + 1.0).map_err(|e| e.to_string())?;
    let spec = dirichlet_spectrum(&grid, &steep(1, a0, 1.0), 5).map_err(|e| e.to_string())?;
    Ok((grid.spacing(), spec.gammas))
}

/// Order `q` with `(g₁-g₂)/(g₂-g₃) = (h₁^q-h₂^q)/(h₂^q-h₃^q)`, by bisection.
fn richardson_order(h: [f64; 3], g: [f64; 3]) -> f64 {
    let target = (g[0] - g[1]) / (g[1] - g[2]);
    let f = |q: f64| (h[0].powf(q) - h[1].powf(q)) / (h[1].powf(q) - h[2].powf(q)) - target;
    let (mut lo, mut hi) = (0.5, 6.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c1_dirichlet_oracle() -> Verdict {
    let (_, g) = interval_gammas(512, -1.0)?;
    let mut worst: f64 = 0.0;
    for i in 1..=5 {
        let exact = (i * i) as f64;
        worst = worst.max((g[i - 1] - exact).abs() / exact);
    }
    ensure!(worst <= 5e-3, "max relative error {worst:.3e}");
    let runs: Vec<(f64, Vec<f64>)> =
        [127, 255, 511].iter().map(|&n| interval_gammas(n, -1.0)).collect::<Result<_, _>>()?;
    let mut orders = Vec::new();
    for i in 0..5 {
        let q = richardson_order([runs[0].0, runs[1].0, runs[2].0], [runs[0].1[i], runs[1].1[i], runs[2].1[i]]);
        ensure!((1.8..=2.2).contains(&q), "level {} order {q:.3}", i + 1);
        orders.push(format!("{q:.3}"));
    }
    Ok(format!("max rel err {worst:.2e}; orders {}", orders.join(" ")))
}

fn c2_offset_convention() -> Verdict {
    let (_, g) = interval_gammas(512, -2.0)?;
    let mut worst: f64 = 0.0;
    for i in 1..=5 {
        let exact = (i * i) as f64 / 2.0;
        worst = worst.max((g[i - 1] - exact).abs() / exact);
    }
    ensure!(worst <= 5e-3, "max relative error {worst:.3e} against i²/2");
    Ok(format!("gamma_i vs i^2/2 max rel err {worst:.2e}"))
}

fn indefinite_flow(a0: f64) -> Result<(DirichletSpectrum, Vec<FlowRow>), String> {
    let grid = interval_grid(512);
    let well = steep(1, a0, 1e6);
    let spec = dirichlet_spectrum(&grid, &well, 4).map_err(|e| e.to_string())?;
    let rows = well_spectrum_flow(&grid, &well, &DECADES, 2, &spec).map_err(|e| e.to_string())?;
    Ok((spec, rows))
}

fn c3_first_level_flow() -> Verdict {
    let (spec, rows) = indefinite_flow(-1.0)?;
    let g1 = spec.gammas[0];
    let first: Vec<&FlowRow> = rows.iter().filter(|r| r.m == 1).collect();
    for w in first.windows(2) {
        ensure!(
            w[1].beta >= w[0].beta - 1e-12,
            "beta_1 drops from {} to {} at lambda {}",
            w[0].beta,
            w[1].beta,
            w[1].lambda
        );
    }
    ensure!(first.iter().all(|r| r.beta <= g1), "beta_1 exceeds gamma_1 = {g1}");
    let last = first.last().unwrap().beta;
    let rel = (last - g1).abs() / g1;
    ensure!(rel <= 0.02, "|beta_1(1e6) - gamma_1| / gamma_1 = {rel:.3e}");
    Ok(format!("beta_1(1e6) = {last:.6}, gamma_1 = {g1:.6}, rel gap {rel:.2e}"))
}

fn c4_second_level_and_subspaces() -> Verdict {
    let (spec, rows) = indefinite_flow(-1.0)?;
    let g2 = spec.gammas[1];
    let level = |m: usize| rows.iter().filter(|r| r.m == m).collect::<Vec<_>>();
    let b2 = level(2).last().unwrap().beta;
    let rel = (b2 - g2).abs() / g2;
    ensure!(rel <= 0.05, "|beta_2(1e6) - gamma_2| / gamma_2 = {rel:.3e}");
    let mut finals = Vec::new();
    for m in 1..=2 {
        let l = level(m);
        // the last three decades: 1e3 → 1e4 → 1e5 → 1e6
        let tail: Vec<f64> = l[l.len() - 4..].iter().map(|r| r.subspace_dist).collect();
        ensure!(tail.windows(2).all(|w| w[1] < w[0]), "level {m} distances {tail:?} not decreasing");
        ensure!(tail[3] < 0.1, "level {m} distance {} at 1e6", tail[3]);
        finals.push(tail[3]);
    }
    let grid = interval_grid(512);
    let mut worst: f64 = 0.0;
    for &lambda in &DECADES {
        let well = steep(1, -1.0, lambda);
        let ops = assemble(&grid, &well).map_err(|e| e.to_string())?;
        let ws = well_spectrum(&ops, &well, 2).map_err(|e| e.to_string())?;
        let (e1, e2) = (ws.minimizer(1), ws.minimizer(2));
        worst = worst.max((ops.inner(e1, e2) / (ops.norm_sq(e1) * ops.norm_sq(e2)).sqrt()).abs());
    }
    ensure!(worst <= 1e-8, "cross-orthogonality {worst:.3e}");
    Ok(format!(
        "beta_2 rel gap {rel:.2e}; final distances {:.2e} {:.2e}; cross inner {worst:.1e}",
        finals[0], finals[1]
    ))
}

fn c5_multiplicity() -> Verdict {
    let grid = Grid::staggered(2, 63, HALF_PI, HALF_PI + 0.5).map_err(|e| e.to_string())?;
    let well = steep(2, -1.0, 1e5);
    let spec = dirichlet_spectrum(&grid, &well, 4).map_err(|e| e.to_string())?;
    ensure!(spec.multiplicities[1] == 2, "gamma_2 multiplicity {}", spec.multiplicities[1]);
    let rows = flow_rows_at(&grid, &well, 1e5, 2, &spec).map_err(|e| e.to_string())?;
    let dim = rows[1].level_dim;
    ensure!((1..=2).contains(&dim), "captured level-2 dimension {dim}");
    Ok(format!("gamma_2 double; captured dimension {dim}, distance {:.2e}", rows[1].subspace_dist))
}

fn c6_coercivity_split() -> Verdict {
    let grid = interval_grid(512);
    let well = steep(1, -2.0, 1e6);
    let ops = assemble(&grid, &well).map_err(|e| e.to_string())?;
    let spec = dirichlet_spectrum(&grid, &well, 4).map_err(|e| e.to_string())?;
    let k = k0_star(&spec).map_err(|e| e.to_string())?;
    ensure!(spec.gammas[0] < 1.0 && spec.gammas[1] > 1.0 && k == 2, "not a gamma_1 < 1 < gamma_2 well (k0* = {k})");
    let ws = well_spectrum(&ops, &well, k).map_err(|e| e.to_string())?;
    let low = coercivity_split(&ops, &ws, &spec, ws.minimizer(1), Side::Low).map_err(|e| e.to_string())?;
    let high = coercivity_split(&ops, &ws, &spec, ws.minimizer(k), Side::High).map_err(|e| e.to_string())?;
    ensure!(low.holds && !low.vacuous, "low side {low:?}");
    ensure!(high.holds, "high side {high:?}");
    Ok(format!("low {:?}; high {:?}", (low.lhs, low.rhs), (high.lhs, high.rhs)))
}

fn c7_gradient() -> Verdict {
    let configs = [
        ("1D definite", interval_grid(128), steep(1, 1.0, 10.0), ProblemParams::new(5.0, 0.1)),
        ("1D indefinite", interval_grid(128), steep(1, -2.0, 1e3), ProblemParams::new(4.5, 1.0)),
        (
            "2D indefinite",
            Grid::staggered(2, 23, HALF_PI, HALF_PI + 0.5).map_err(|e| e.to_string())?,
            steep(2, -1.0, 1e2),
            ProblemParams::new(5.5, 0.01),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for (name, grid, well, params) in configs {
        let params = params.map_err(|e| e.to_string())?;
        let ops = assemble(&grid, &well).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let u: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = ops.gradient(&params, &u);
            let mut v = u.clone();
            let mut err: f64 = 0.0;
            for i in 0..u.len() {
                let eps = 1e-4;
                v[i] = u[i] + eps;
                let up = ops.energy(&params, &v);
                v[i] = u[i] - eps;
                let down = ops.energy(&params, &v);
                v[i] = u[i];
                err = err.max(((up - down) / (2.0 * eps) - g[i]).abs());
            }
            let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let rel = err / scale;
            ensure!(rel <= 1e-5, "{name}: relative error {rel:.3e}");
            worst = worst.max(rel);
        }
    }
    Ok(format!("60 points, max relative error {worst:.2e}"))
}

fn c8_definite() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = run_example("definite_1d", tmp.path())?;
    let rows = table(&tmp.path().join("solution.csv"))?;
    let get = |m: &str| rows.iter().find(|r| r["method"] == m).ok_or(format!("no {m} record"));
    let (neh, mp) = (get("nehari")?, get("mountain_pass")?);
    let (en, em) = (num(neh, "energy"), num(mp, "energy"));
    let rel = (en - em).abs() / en.abs();
    ensure!(rel <= 1e-4, "nehari {en} vs mountain pass {em}");
    for r in [neh, mp] {
        ensure!(num(r, "grad_norm") <= 1e-8, "{} gradient norm {}", r["method"], r["grad_norm"]);
        ensure!(num(r, "nehari_defect") <= 1e-6, "{} nehari defect {}", r["method"], r["nehari_defect"]);
    }
    let cfg =
        ExperimentConfig::parse(&fs::read_to_string(example("definite_1d")).unwrap()).map_err(|e| e.to_string())?;
    let w = &cfg.well;
    let well = PotentialWell {
        dim: 1,
        omega_halfwidth: w.omega_halfwidth,
        ramp_width: w.ramp_width,
        cap: w.cap,
        a_inf: w.a_inf,
        a0: w.a0,
        lambda: w.lambda,
    };
    let alpha = constant(&s, "problem.alpha")?;
    let half = constant(&s, "grid.box_halfwidth")?;
    let oracle = shoot(
        &|x| well.shifted(&[x]),
        half,
        &[w.omega_halfwidth, w.omega_halfwidth + w.ramp_width],
        alpha,
        cfg.problem.p,
    );
    let gap = (en - oracle.energy).abs() / oracle.energy;
    ensure!(gap <= 1e-3, "energy {en} vs shooting {}", oracle.energy);
    Ok(format!("methods agree to {rel:.1e}; shooting gap {gap:.2e}"))
}

fn c9_linking_geometry() -> Verdict {
    let err = |e: Error| e.to_string();
    let grid = interval_grid(512);
    let well = steep(1, -2.0, 1e5);
    let ops = assemble(&grid, &well).map_err(err)?;
    let spec = dirichlet_spectrum(&grid, &well, 6).map_err(err)?;
    let k = k0_star(&spec).map_err(err)?;
    let s = discrete_sobolev_constant(&ops, &grid, &well).map_err(err)?;
    let s_p = discrete_sobolev_p_constant(&ops, 5.0, 200).map_err(err)?;
    let consts = embedding_constants(&well, well.lambda, s, s_p).map_err(err)?;
    let shape = ProblemParams::new(5.0, 1.0).map_err(err)?;
    let g = linking_geometry(&consts, &spec, &shape, 10_000, 7).map_err(err)?;
    ensure!(g.rho > 0.0 && g.d0 > 0.0 && g.r0 > g.rho && g.alpha0 > 0.0, "constants {g:?}");
    let params = ProblemParams::new(5.0, g.alpha0 / 2.0).map_err(err)?;
    let ws = well_spectrum(&ops, &well, k + 1).map_err(err)?;
    let sample = kwl_core::analysis::sample_linking_geometry(&ops, &params, &ws, &g, 200, 7).map_err(err)?;
    ensure!(sample.sphere_min >= g.d0 - 1e-9, "sphere min {} < d0 {}", sample.sphere_min, g.d0);
    ensure!(sample.boundary_max <= g.d0 / 2.0 + 1e-9, "boundary max {} > d0/2 {}", sample.boundary_max, g.d0 / 2.0);
    Ok(format!(
        "rho {:.4e} d0 {:.4e} R0 {:.4e} alpha0 {:.4e}; sphere min {:.3e}, boundary max {:.3e}",
        g.rho, g.d0, g.r0, g.alpha0, sample.sphere_min, sample.boundary_max
    ))
}

fn c10_indefinite_solution() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = run_example("indefinite_1d", tmp.path())?;
    let rows = table(&tmp.path().join("solution.csv"))?;
    ensure!(rows.len() == 1 && rows[0]["method"] == "linking", "expected one linking record");
    let r = &rows[0];
    let (alpha, alpha0) = (constant(&s, "problem.alpha")?, constant(&s, "geometry.alpha0")?);
    ensure!((alpha - alpha0 / 2.0).abs() <= 1e-15 * alpha0, "alpha {alpha} is not alpha0/2");
    let lambda = constant(&s, "well.lambda")?;
    ensure!(lambda == 1e5, "lambda {lambda}");
    let (g1, g2) = (constant(&s, "dirichlet.gamma_1")?, constant(&s, "dirichlet.gamma_2")?);
    ensure!((g1 - 0.5).abs() < 0.05 && (g2 - 2.0).abs() < 0.2, "gammas {g1}, {g2}");
    let (d0, r0, gk) = (constant(&s, "geometry.d0")?, constant(&s, "geometry.r0")?, constant(&s, "geometry.gamma_k0")?);
    let ceiling = alpha / 4.0 * r0.powi(4) + 0.5 * (1.0 - 1.0 / gk) * r0 * r0;
    let energy = num(r, "energy");
    ensure!(energy >= d0 && energy <= ceiling, "energy {energy} outside [{d0}, {ceiling}]");
    ensure!(num(r, "norm") >= 1e-6, "trivial record");
    ensure!(num(r, "grad_norm") <= 1e-8, "gradient norm {}", r["grad_norm"]);
    let ps = s.checks.iter().find(|c| c.name == "linking: iterates within the PS bound").ok_or("no PS check")?;
    ensure!(ps.passed, "iterates left the PS bound: {}", ps.detail);
    Ok(format!("energy {energy:.6} in [{d0:.3e}, {ceiling:.4}]; grad {}; PS {}", r["grad_norm"], ps.detail))
}

fn c11_concentration() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_example("concentration_1d", tmp.path())?;
    let cfg = ExperimentConfig::parse(&fs::read_to_string(example("concentration_1d")).unwrap())
        .map_err(|e| e.to_string())?;
    ensure!(cfg.sweep.warm_start, "sweep is not warm-started");
    let rows = table(&tmp.path().join("sweep.csv"))?;
    let solved: Vec<_> = rows.iter().filter(|r| num(r, "lambda").is_finite()).collect();
    let (lo, hi) = (num(solved[0], "lambda"), num(solved[solved.len() - 1], "lambda"));
    ensure!(lo == 1e2 && (hi - 1e6).abs() <= 1e-9 * 1e6, "lambda range {lo}..{hi}");
    ensure!(solved.iter().all(|r| num(r, "grad_norm").is_finite()), "a sweep solve failed");
    let (first, last) = (solved[0], solved[solved.len() - 1]);
    let (m0, m1) = (num(first, "mass_outside"), num(last, "mass_outside"));
    ensure!(m1 < m0 && m1 < 1e-2, "mass_outside {m0} -> {m1}");
    let h1 = num(last, "h1_dist_rel");
    ensure!(h1 < 0.05, "h1_dist_rel at 1e6 = {h1}");
    let top: Vec<f64> =
        solved.iter().filter(|r| num(r, "lambda") >= 1e5 * (1.0 - 1e-12)).map(|r| num(r, "well_energy")).collect();
    ensure!(top.len() >= 2 && top.windows(2).all(|w| w[1] < w[0]), "well energy over the top decade {top:?}");
    Ok(format!(
        "mass_outside {m0:.2e} -> {m1:.2e}; h1_dist_rel {h1:.3e}; well energy {}",
        top.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" ")
    ))
}

fn c12_determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_example("indefinite_1d", &a)?;
    run_example("indefinite_1d", &b)?;
    let mut names: Vec<String> = fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    ensure!(names.len() >= 4, "only {names:?}");
    for n in &names {
        ensure!(fs::read(a.join(n)).ok() == fs::read(b.join(n)).ok(), "{n} differs");
    }
    Ok(format!("{} CSVs bit-identical", names.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        (1, "Dirichlet spectrum oracle", Some(5.0), c1_dirichlet_oracle),
        (2, "offset convention", Some(5.0), c2_offset_convention),
        (3, "first well level flow", Some(60.0), c3_first_level_flow),
        (4, "second level and subspace convergence", Some(60.0), c4_second_level_and_subspaces),
        (5, "multiplicity bound", Some(300.0), c5_multiplicity),
        (6, "coercivity split", Some(30.0), c6_coercivity_split),
        (7, "gradient correctness", Some(10.0), c7_gradient),
        (8, "definite cross-validation", Some(60.0), c8_definite),
        (9, "linking geometry", Some(60.0), c9_linking_geometry),
        (10, "indefinite solution", Some(300.0), c10_indefinite_solution),
        (11, "concentration", Some(600.0), c11_concentration),
        (12, "determinism", None, c12_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        let start = Instant::now();
        let verdict = panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let verdict = match (verdict, budget) {
            (Ok(_), Some(b)) if secs > b => Err(format!("took {secs:.1} s, budget {b} s")),
            (v, _) => v,
        };
        match verdict {
            Ok(detail) => println!("PASS criterion {id:>2} {name} ({secs:.2} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name} ({secs:.2} s): {detail}");
            }
        }
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

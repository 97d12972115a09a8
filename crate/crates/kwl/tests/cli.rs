use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kwl::output::blob_hash;

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(format!("{name}.ini"))
}

fn kwl(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwl"))
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn edited(dir: &Path, name: &str, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(example(name)).unwrap();
    assert!(text.contains(from), "{from:?} not in {name}");
    let path = dir.join(format!("{name}.ini"));
    fs::write(&path, text.replace(from, to)).unwrap();
    path
}

fn column(csv: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(csv).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn definite_run_writes_the_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kwl(&example("definite_1d"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["spectrum.csv", "solution.csv", "profile.csv", "manifest.txt", "report.txt"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    assert!(!tmp.path().join("FAILED").exists());
    assert_eq!(column(&tmp.path().join("solution.csv"), "method"), ["nehari", "mountain_pass"]);
    let report = fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(!report.contains("FAIL "));
}

#[test]
fn indefinite_run_uses_linking_inside_the_bracket() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kwl(&example("indefinite_1d"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(column(&tmp.path().join("solution.csv"), "method"), ["linking"]);
    let report = fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(report.contains("PASS [solve] linking: energy in [d0, ceiling]"));
    assert!(tmp.path().join("flow.svg").exists() && tmp.path().join("geometry.csv").exists());
}

#[test]
fn manifest_hashes_the_input_and_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example("indefinite_1d");
    kwl(&cfg, tmp.path(), &[]);
    let manifest = fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    let input = blob_hash(&fs::read(&cfg).unwrap());
    assert!(manifest.contains(&format!("indefinite_1d.ini = {input}")));
    for f in ["spectrum.csv", "flow.csv", "flow.svg", "geometry.csv", "solution.csv", "profile.csv"] {
        let h = blob_hash(&fs::read(tmp.path().join(f)).unwrap());
        assert!(manifest.contains(&format!("{f} = {h}")), "{f}");
    }
    for tag in ["; config", "; analytic", "; computed", "; estimated"] {
        assert!(manifest.contains(tag), "{tag}");
    }
    for key in ["geometry.alpha0", "geometry.r0", "sobolev.s_discrete", "embedding.d_lambda", "problem.alpha"] {
        assert!(manifest.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
    }
}

#[test]
fn malformed_config_reports_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = edited(tmp.path(), "definite_1d", "n = 512", "n = many");
    let out = kwl(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("{}:8:5:", cfg.display())), "{err}");
}

#[test]
fn failed_precondition_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = edited(tmp.path(), "indefinite_1d", "lambda = 1e5", "lambda = 0.5");
    let out = kwl(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":18:1:"));
    assert!(tmp.path().join("out/FAILED").exists());
}

#[test]
fn stage_flag_stops_early_and_rejects_unknown_names() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kwl(&example("indefinite_1d"), tmp.path(), &["--stage", "dirichlet"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("spectrum.csv").exists());
    assert!(!tmp.path().join("flow.csv").exists() && !tmp.path().join("solution.csv").exists());
    let out = kwl(&example("indefinite_1d"), tmp.path(), &["--stage", "solver"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_check_exits_one_and_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = edited(tmp.path(), "concentration_1d", "mass_cap = 1e-2", "mass_cap = 1e-12");
    let out = kwl(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let failed = fs::read_to_string(tmp.path().join("out/FAILED")).unwrap();
    assert!(failed.contains("mass_outside(final) below cap"));
    assert!(tmp.path().join("out/sweep.csv").exists());
}

#[test]
fn non_convergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = edited(tmp.path(), "definite_1d", "tol = 1e-8", "tol = 1e-8\nmax_iters = 2");
    let out = kwl(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(tmp.path().join("out/FAILED").exists());
    assert!(tmp.path().join("out/spectrum.csv").exists());
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = edited(tmp.path(), "concentration_1d", "warm_start = true", "warm_start = false");
    let (one, four) = (tmp.path().join("one"), tmp.path().join("four"));
    assert_eq!(kwl(&cfg, &one, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(kwl(&cfg, &four, &["--threads", "4"]).status.code(), Some(0));
    for f in ["flow.csv", "sweep.csv", "solution.csv"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(four.join(f)).unwrap(), "{f}");
    }
}

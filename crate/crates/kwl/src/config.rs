//! Experiment configuration: a flat, sectioned `key = value` format.
//!
//! ```text
//! seed = 7
//!
//! [domain]
//! dim = 1
//! n = 512
//! box_halfwidth = 2.5707963267948966
//!
//! [well]
//! omega_halfwidth = 1.5707963267948966
//! a0 = -2
//! lambda = 1e5
//! ```
//!
//! Comments start with `#` or `;` at the beginning of a line or after
//! whitespace. Every key is checked; unknown keys and sections are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

/// Position of a diagnostic, one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{column}: {message}", line = .location.line, column = .location.column)]
pub struct ConfigError {
    pub location: Location,
    pub message: String,
}

impl ConfigError {
    fn at(location: Location, message: impl Into<String>) -> Self {
        Self { location, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Lattice lines through the well edge.
    Aligned,
    /// Well edge halfway between lattice lines.
    Staggered,
    /// Plain `h = 2R/(n+1)` lattice.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Auto,
    Nehari,
    MountainPass,
    Linking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSpec {
    Value(f64),
    /// A multiple of the computed `α₀`.
    OfAlpha0(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub dim: usize,
    pub n: usize,
    pub box_halfwidth: f64,
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WellConfig {
    pub omega_halfwidth: f64,
    pub ramp_width: f64,
    pub cap: f64,
    pub a_inf: f64,
    pub a0: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub p: f64,
    pub alpha: AlphaSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumConfig {
    pub count: usize,
    pub m_max: usize,
    /// λ values of the β-flow.
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    pub samples: usize,
    pub m_samples: usize,
    pub sobolev_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub warm_start: bool,
    pub mass_cap: f64,
    pub h1_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub method: MethodChoice,
    pub path_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    pub emit_svg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: usize,
    pub domain: DomainConfig,
    pub well: WellConfig,
    pub problem: ProblemConfig,
    pub spectrum: SpectrumConfig,
    pub geometry: GeometryConfig,
    pub sweep: SweepConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    /// Where each given key was found, for later diagnostics.
    pub locations: BTreeMap<String, Location>,
}

impl ExperimentConfig {
    /// Location of `section.key`, or of the start of the file. A λ list
    /// given as `log_range` answers for `lambdas`.
    pub fn location(&self, key: &str) -> Location {
        let alias = key.strip_suffix(".lambdas").map(|s| format!("{s}.log_range"));
        self.locations
            .get(key)
            .or_else(|| alias.and_then(|a| self.locations.get(&a)))
            .copied()
            .unwrap_or(Location { line: 1, column: 1 })
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    key_at: Location,
    value_at: Location,
}

#[derive(Debug, Default)]
struct Section {
    header: Option<Location>,
    entries: BTreeMap<String, Entry>,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("", &["seed", "threads"]),
    ("domain", &["dim", "n", "box_halfwidth", "layout"]),
    ("well", &["omega_halfwidth", "ramp_width", "cap", "a_inf", "a0", "lambda"]),
    ("problem", &["p", "alpha", "alpha_over_alpha0"]),
    ("spectrum", &["count", "m_max", "lambdas", "log_range"]),
    ("geometry", &["samples", "m_samples", "sobolev_iters"]),
    ("sweep", &["lambdas", "log_range", "warm_start", "mass_cap", "h1_cap"]),
    ("solver", &["tol", "max_iters", "method", "path_nodes"]),
    ("output", &["directory", "emit_svg"]),
];

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if (b == b'#' || b == b';') && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

fn column_of(line: &str, offset: usize) -> usize {
    line[..offset].chars().count() + 1
}

fn tokenize(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    sections.insert(String::new(), Section::default());
    let mut current = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = strip_comment(raw);
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = body.len() - body.trim_start().len();
        let at = |offset: usize| Location { line: line_no, column: column_of(raw, offset) };
        if trimmed.starts_with('[') {
            let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) else {
                return Err(ConfigError::at(at(lead), "unterminated section header"));
            };
            let name = name.trim().to_string();
            if !SECTIONS.iter().any(|(s, _)| *s == name) || name.is_empty() {
                return Err(ConfigError::at(at(lead + 1), format!("unknown section [{name}]")));
            }
            let section = sections.entry(name.clone()).or_default();
            if section.header.is_some() {
                return Err(ConfigError::at(at(lead), format!("section [{name}] appears twice")));
            }
            section.header = Some(at(lead));
            current = name;
            continue;
        }
        let Some(eq) = body.find('=') else {
            return Err(ConfigError::at(at(lead), "expected `key = value` or a [section] header"));
        };
        let key = body[..eq].trim();
        if key.is_empty() {
            return Err(ConfigError::at(at(lead), "missing key before `=`"));
        }
        let allowed = SECTIONS.iter().find(|(s, _)| *s == current).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            let place = if current.is_empty() { "top level".to_string() } else { format!("[{current}]") };
            return Err(ConfigError::at(at(lead), format!("unknown key `{key}` in {place}")));
        }
        let rest = &body[eq + 1..];
        let value = rest.trim();
        let value_offset = eq + 1 + (rest.len() - rest.trim_start().len());
        if value.is_empty() {
            return Err(ConfigError::at(at(value_offset), format!("missing value for `{key}`")));
        }
        let entry = Entry { value: value.to_string(), key_at: at(lead), value_at: at(value_offset) };
        let section = sections.get_mut(&current).expect("section registered above");
        if section.entries.insert(key.to_string(), entry).is_some() {
            return Err(ConfigError::at(at(lead), format!("duplicate key `{key}`")));
        }
    }
    Ok(sections)
}

/// Typed access to one section, remembering which keys were consumed.
struct Reader<'a> {
    name: &'a str,
    section: Option<&'a Section>,
    end: Location,
    locations: &'a mut BTreeMap<String, Location>,
}

impl Reader<'_> {
    fn full_key(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn entry(&mut self, key: &str) -> Option<Entry> {
        let e = self.section.and_then(|s| s.entries.get(key)).cloned()?;
        self.locations.insert(self.full_key(key), e.key_at);
        Some(e)
    }

    fn missing(&self, key: &str) -> ConfigError {
        let at = self.section.and_then(|s| s.header).unwrap_or(self.end);
        let place = if self.name.is_empty() { "top level".to_string() } else { format!("[{}]", self.name) };
        ConfigError::at(at, format!("missing required key `{key}` in {place}"))
    }

    fn parse<T>(&mut self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ConfigError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .ok_or_else(|| ConfigError::at(e.value_at, format!("`{key}`: expected {what}, found `{}`", e.value))),
        }
    }

    fn float(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse(key, "a finite number", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
    }

    fn float_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.float(key)?.unwrap_or(default))
    }

    fn float_req(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.float(key)?.ok_or_else(|| self.missing(key))
    }

    fn uint(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.parse(key, "a nonnegative integer", |s| s.parse::<usize>().ok())
    }

    fn uint_or(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.uint(key)?.unwrap_or(default))
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self
            .parse(key, "true or false", |s| match s {
                "true" | "yes" | "on" => Some(true),
                "false" | "no" | "off" => Some(false),
                _ => None,
            })?
            .unwrap_or(default))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.parse(key, "a comma-separated list of numbers", |s| {
            s.split(',').map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect()
        })
    }

    /// `lambdas = …` or `log_range = first_exp, last_exp, count`.
    fn lambdas(&mut self) -> Result<Vec<f64>, ConfigError> {
        let list = self.list("lambdas")?;
        let range = self.entry("log_range");
        match (list, range) {
            (Some(_), Some(e)) => Err(ConfigError::at(e.key_at, "give either `lambdas` or `log_range`, not both")),
            (Some(l), None) => Ok(l),
            (None, Some(e)) => {
                let parts: Vec<&str> = e.value.split(',').map(str::trim).collect();
                let bad = || {
                    ConfigError::at(
                        e.value_at,
                        format!("`log_range`: expected `first, last, count`, found `{}`", e.value),
                    )
                };
                if parts.len() != 3 {
                    return Err(bad());
                }
                let lo: f64 = parts[0].parse().map_err(|_| bad())?;
                let hi: f64 = parts[1].parse().map_err(|_| bad())?;
                let count: usize = parts[2].parse().map_err(|_| bad())?;
                if count < 2 || !(hi > lo) {
                    return Err(bad());
                }
                Ok((0..count).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64)).collect())
            }
            (None, None) => Ok(Vec::new()),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let sections = tokenize(text)?;
        let end = Location { line: text.lines().count() + 1, column: 1 };
        let mut locations = BTreeMap::new();
        macro_rules! reader {
            ($name:expr) => {
                Reader { name: $name, section: sections.get($name), end, locations: &mut locations }
            };
        }

        let mut top = reader!("");
        let seed = top.parse("seed", "a nonnegative integer", |s| s.parse::<u64>().ok())?.unwrap_or(0);
        let threads = top.uint_or("threads", 1)?.max(1);

        let mut r = reader!("domain");
        let layout = r
            .parse("layout", "aligned, staggered or plain", |s| match s {
                "aligned" => Some(Layout::Aligned),
                "staggered" => Some(Layout::Staggered),
                "plain" => Some(Layout::Plain),
                _ => None,
            })?
            .unwrap_or(Layout::Staggered);
        let domain = DomainConfig {
            dim: r.uint("dim")?.ok_or_else(|| r.missing("dim"))?,
            n: r.uint("n")?.ok_or_else(|| r.missing("n"))?,
            box_halfwidth: r.float_req("box_halfwidth")?,
            layout,
        };

        let mut r = reader!("well");
        let well = WellConfig {
            omega_halfwidth: r.float_req("omega_halfwidth")?,
            ramp_width: r.float_or("ramp_width", 0.25)?,
            cap: r.float_or("cap", 20.0)?,
            a_inf: r.float_or("a_inf", 1.0)?,
            a0: r.float_req("a0")?,
            lambda: r.float_req("lambda")?,
        };

        let mut r = reader!("problem");
        let p = r.float_or("p", 5.0)?;
        let alpha = match (r.float("alpha")?, r.float("alpha_over_alpha0")?) {
            (Some(a), None) => AlphaSpec::Value(a),
            (None, Some(f)) => AlphaSpec::OfAlpha0(f),
            (None, None) => return Err(r.missing("alpha")),
            (Some(_), Some(_)) => {
                let at = r.section.and_then(|s| s.entries.get("alpha_over_alpha0")).map(|e| e.key_at).unwrap_or(end);
                return Err(ConfigError::at(at, "give either `alpha` or `alpha_over_alpha0`, not both"));
            }
        };
        let problem = ProblemConfig { p, alpha };

        let mut r = reader!("spectrum");
        let spectrum =
            SpectrumConfig { count: r.uint_or("count", 6)?, m_max: r.uint_or("m_max", 2)?, lambdas: r.lambdas()? };

        let mut r = reader!("geometry");
        let geometry = GeometryConfig {
            samples: r.uint_or("samples", 200)?,
            m_samples: r.uint_or("m_samples", 10_000)?,
            sobolev_iters: r.uint_or("sobolev_iters", 200)?,
        };

        let mut r = reader!("sweep");
        let sweep = SweepConfig {
            lambdas: r.lambdas()?,
            warm_start: r.bool_or("warm_start", true)?,
            mass_cap: r.float_or("mass_cap", 1e-2)?,
            h1_cap: r.float_or("h1_cap", 0.05)?,
        };

        let mut r = reader!("solver");
        let solver = SolverConfig {
            tol: r.float_or("tol", 1e-8)?,
            max_iters: r.uint_or("max_iters", 100_000)?,
            method: r
                .parse("method", "auto, nehari, mountain_pass or linking", |s| match s {
                    "auto" => Some(MethodChoice::Auto),
                    "nehari" => Some(MethodChoice::Nehari),
                    "mountain_pass" => Some(MethodChoice::MountainPass),
                    "linking" => Some(MethodChoice::Linking),
                    _ => None,
                })?
                .unwrap_or(MethodChoice::Auto),
            path_nodes: r.uint_or("path_nodes", 25)?,
        };

        let mut r = reader!("output");
        let output = OutputConfig {
            directory: r.parse("directory", "a path", |s| Some(PathBuf::from(s.trim_matches('"'))))?,
            emit_svg: r.bool_or("emit_svg", true)?,
        };

        Ok(Self { seed, threads, domain, well, problem, spectrum, geometry, sweep, solver, output, locations })
    }

    /// Canonical `key = value` lines of every setting, defaults included.
    pub fn echo(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| v.iter().map(|x| crate::output::fmt_f64(*x)).collect::<Vec<_>>().join(", ");
        let f = crate::output::fmt_f64;
        let mut out = vec![
            ("seed".into(), self.seed.to_string()),
            ("threads".into(), self.threads.to_string()),
            ("domain.dim".into(), self.domain.dim.to_string()),
            ("domain.n".into(), self.domain.n.to_string()),
            ("domain.box_halfwidth".into(), f(self.domain.box_halfwidth)),
            ("domain.layout".into(), format!("{}", self.domain.layout)),
            ("well.omega_halfwidth".into(), f(self.well.omega_halfwidth)),
            ("well.ramp_width".into(), f(self.well.ramp_width)),
            ("well.cap".into(), f(self.well.cap)),
            ("well.a_inf".into(), f(self.well.a_inf)),
            ("well.a0".into(), f(self.well.a0)),
            ("well.lambda".into(), f(self.well.lambda)),
            ("problem.p".into(), f(self.problem.p)),
        ];
        out.push(match self.problem.alpha {
            AlphaSpec::Value(a) => ("problem.alpha".into(), f(a)),
            AlphaSpec::OfAlpha0(x) => ("problem.alpha_over_alpha0".into(), f(x)),
        });
        out.extend([
            ("spectrum.count".into(), self.spectrum.count.to_string()),
            ("spectrum.m_max".into(), self.spectrum.m_max.to_string()),
            ("spectrum.lambdas".into(), list(&self.spectrum.lambdas)),
            ("geometry.samples".into(), self.geometry.samples.to_string()),
            ("geometry.m_samples".into(), self.geometry.m_samples.to_string()),
            ("geometry.sobolev_iters".into(), self.geometry.sobolev_iters.to_string()),
            ("sweep.lambdas".into(), list(&self.sweep.lambdas)),
            ("sweep.warm_start".into(), self.sweep.warm_start.to_string()),
            ("sweep.mass_cap".into(), f(self.sweep.mass_cap)),
            ("sweep.h1_cap".into(), f(self.sweep.h1_cap)),
            ("solver.tol".into(), f(self.solver.tol)),
            ("solver.max_iters".into(), self.solver.max_iters.to_string()),
            ("solver.method".into(), format!("{}", self.solver.method)),
            ("solver.path_nodes".into(), self.solver.path_nodes.to_string()),
            ("output.emit_svg".into(), self.output.emit_svg.to_string()),
        ]);
        out
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Aligned => "aligned",
            Layout::Staggered => "staggered",
            Layout::Plain => "plain",
        })
    }
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodChoice::Auto => "auto",
            MethodChoice::Nehari => "nehari",
            MethodChoice::MountainPass => "mountain_pass",
            MethodChoice::Linking => "linking",
        })
    }
}

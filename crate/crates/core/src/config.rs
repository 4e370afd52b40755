//! `key = value` run configuration shared by the command-line front end
//! and the CSV configuration echo.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::integrator::{Scheme, StepperConfig};
use crate::operators::Dimension;
use crate::problems::{self, Discretization, ProblemDefinition, RationalForm, RunDefaults};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Rational,
    Mt,
    Both,
}

impl Mode {
    pub fn runs_rational(self) -> bool {
        self != Mode::Mt
    }

    pub fn runs_mt(self) -> bool {
        self != Mode::Rational
    }

    fn name(self) -> &'static str {
        match self {
            Mode::Rational => "rational",
            Mode::Mt => "mt",
            Mode::Both => "both",
        }
    }
}

/// Time-stepping choice: trapezoidal, implicit Euler, or fixed-step BDF2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Theta,
    Theta1,
    Bdf2,
}

impl SchemeChoice {
    fn name(self) -> &'static str {
        match self {
            SchemeChoice::Theta => "theta",
            SchemeChoice::Theta1 => "theta1",
            SchemeChoice::Bdf2 => "bdf2",
        }
    }
}

/// Every knob of a run. Unset problem parameters fall back to the example's
/// reference values in [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub example: Option<u8>,
    pub dimension: usize,
    pub length: f64,
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    pub kappa: Option<f64>,
    pub k: Vec<usize>,
    pub t_end: Option<f64>,
    pub scheme: SchemeChoice,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt: Option<f64>,
    pub mode: Mode,
    pub form: RationalForm,
    pub snapshots: usize,
    pub out: Option<String>,
    pub alphas: Vec<f64>,
    pub k_max: usize,
    pub timing_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stepper = StepperConfig::default();
        Self {
            example: None,
            dimension: 1,
            length: 1.0,
            n: None,
            alpha: None,
            kappa: None,
            k: Vec::new(),
            t_end: None,
            scheme: SchemeChoice::Theta,
            rel_tol: stepper.rel_tol,
            abs_tol: stepper.abs_tol,
            dt: None,
            mode: Mode::Both,
            form: RationalForm::Factored,
            snapshots: 20,
            out: None,
            alphas: vec![1.2, 1.5, 1.8],
            k_max: 20,
            timing_runs: 3,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Text holding a
    /// `# config:` echo line (entries separated by `;`), such as a CSV written
    /// by a previous run, is read from its echo lines only.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let echoed = text.lines().any(|l| l.trim().starts_with("# config:"));
        for line in text.lines() {
            let line = line.trim();
            if let Some(echo) = line.strip_prefix("# config:") {
                for entry in echo.split(';') {
                    self.apply_entry(entry)?;
                }
                continue;
            }
            if echoed {
                continue;
            }
            let body = line.split('#').next().unwrap_or("");
            self.apply_entry(body)?;
        }
        Ok(())
    }

    fn apply_entry(&mut self, entry: &str) -> Result<()> {
        let entry = entry.trim();
        if entry.is_empty() {
            return Ok(());
        }
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key = value, got {entry:?}")))?;
        self.set(key.trim(), value.trim())
    }

    /// Sets one key. Dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim_start_matches('-').replace('-', "_");
        let none = value.is_empty() || value == "none";
        match key.as_str() {
            "example" => {
                self.example = if none {
                    None
                } else {
                    Some(parse(&key, value)?)
                };
            }
            "dimension" => self.dimension = parse(&key, value)?,
            "length" => self.length = parse(&key, value)?,
            "N" | "n" => {
                self.n = if none {
                    None
                } else {
                    Some(parse(&key, value)?)
                }
            }
            "alpha" => {
                self.alpha = if none {
                    None
                } else {
                    Some(parse(&key, value)?)
                }
            }
            "kappa" => {
                self.kappa = if none {
                    None
                } else {
                    Some(parse(&key, value)?)
                }
            }
            "k" => {
                self.k = if none {
                    Vec::new()
                } else {
                    parse_list(&key, value)?
                }
            }
            "t_end" => {
                self.t_end = if none {
                    None
                } else {
                    Some(parse(&key, value)?)
                }
            }
            "scheme" => {
                self.scheme = match value {
                    "theta" => SchemeChoice::Theta,
                    "theta1" => SchemeChoice::Theta1,
                    "bdf2" => SchemeChoice::Bdf2,
                    _ => return Err(Error::Config(format!("unknown scheme {value:?}"))),
                }
            }
            "rel_tol" => self.rel_tol = parse(&key, value)?,
            "abs_tol" => self.abs_tol = parse(&key, value)?,
            "dt" => {
                self.dt = if none {
                    None
                } else {
                    Some(parse(&key, value)?)
                }
            }
            "mode" => {
                self.mode = match value {
                    "rational" => Mode::Rational,
                    "mt" => Mode::Mt,
                    "both" => Mode::Both,
                    _ => return Err(Error::Config(format!("unknown mode {value:?}"))),
                }
            }
            "form" => {
                self.form = match value {
                    "factored" => RationalForm::Factored,
                    "banded" => RationalForm::Banded,
                    _ => return Err(Error::Config(format!("unknown form {value:?}"))),
                }
            }
            "snapshots" => self.snapshots = parse(&key, value)?,
            "out" => self.out = if none { None } else { Some(value.to_string()) },
            "alphas" => self.alphas = parse_list(&key, value)?,
            "k_max" => self.k_max = parse(&key, value)?,
            "timing_runs" => self.timing_runs = parse(&key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Fills unset problem parameters from the example (or generic) defaults
    /// and checks ranges.
    pub fn resolve(&self) -> Result<Self> {
        let mut out = self.clone();
        let problem = self.base_problem()?;
        out.dimension = problem.dimension.as_usize();
        out.length = problem.length;
        out.alpha = Some(problem.alpha);
        out.kappa = Some(problem.kappa);
        out.n = Some(self.n.unwrap_or(problem.defaults.n));
        out.t_end = Some(self.t_end.unwrap_or(problem.defaults.t_end));
        if out.k.is_empty() {
            out.k = match self.example {
                Some(3) => vec![1, 3, 5],
                _ => vec![problem.defaults.k],
            };
        }
        out.validate()?;
        Ok(out)
    }

    fn base_problem(&self) -> Result<ProblemDefinition> {
        match self.example {
            Some(id) => problems::example(id, self.alpha, self.kappa),
            None => problems::sine_mode_problem(
                Dimension::from_usize(self.dimension).map_err(|e| Error::Config(e.to_string()))?,
                self.length,
                self.alpha.unwrap_or(1.5),
                self.kappa.unwrap_or(1.0),
                RunDefaults {
                    n: 100,
                    k: 5,
                    t_end: 0.1,
                },
            ),
        }
        .map_err(|e| match e {
            Error::Domain(msg) => Error::Config(msg),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.contains(&0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if let Some(n) = self.n {
            if n < 2 {
                return Err(Error::Config(format!("N must be at least 2, got {n}")));
            }
        }
        if let Some(t) = self.t_end {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "t_end must be non-negative, got {t}"
                )));
            }
        }
        if self.snapshots == 0 || self.timing_runs == 0 || self.k_max == 0 {
            return Err(Error::Config(
                "snapshots, timing_runs and k_max must be positive".into(),
            ));
        }
        self.stepper().validate()
    }

    pub fn stepper(&self) -> StepperConfig {
        let (scheme, theta) = match self.scheme {
            SchemeChoice::Theta => (Scheme::Theta, 0.5),
            SchemeChoice::Theta1 => (Scheme::Theta, 1.0),
            SchemeChoice::Bdf2 => (Scheme::Bdf2, 1.0),
        };
        StepperConfig {
            scheme,
            theta,
            dt: self.dt,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            ..StepperConfig::default()
        }
    }

    /// The problem on its mesh; requires a resolved configuration.
    pub fn discretization(&self) -> Result<Discretization> {
        let r = self.resolve()?;
        Discretization::new(&r.base_problem()?, r.n.expect("resolved"))
    }

    /// Single-line `key = value; ...` rendering; floats use shortest
    /// round-trip formatting so parsing the echo reproduces the run.
    pub fn echo(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let _ =
            write!(
            s,
            "example = {}; dimension = {}; length = {:?}; N = {}; alpha = {}; kappa = {}; k = {}; \
             t_end = {}; scheme = {}; rel_tol = {:?}; abs_tol = {:?}; dt = {}; mode = {}; \
             form = {}; snapshots = {}; alphas = {}; k_max = {}; timing_runs = {}",
            opt(self.example.map(|e| e.to_string())),
            self.dimension,
            self.length,
            opt(self.n.map(|n| n.to_string())),
            opt(self.alpha.map(|a| format!("{a:?}"))),
            opt(self.kappa.map(|a| format!("{a:?}"))),
            if self.k.is_empty() { "none".into() } else { join(&self.k) },
            opt(self.t_end.map(|a| format!("{a:?}"))),
            self.scheme.name(),
            self.rel_tol,
            self.abs_tol,
            opt(self.dt.map(|a| format!("{a:?}"))),
            self.mode.name(),
            match self.form {
                RationalForm::Factored => "factored",
                RationalForm::Banded => "banded",
            },
            self.snapshots,
            self.alphas.iter().map(|a| format!("{a:?}")).collect::<Vec<_>>().join(","),
            self.k_max,
            self.timing_runs,
        );
        s
    }

    /// `# config: ...` comment line for CSV outputs.
    pub fn echo_line(&self) -> String {
        format!("# config: {}\n", self.echo())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let cfg = RunConfig::parse_text(
            "# run\nexample = 3\nalpha = 1.6   # override\nk = 1, 3\nt-end = 0.25\nscheme = theta1\n\n",
        )
        .unwrap();
        assert_eq!(cfg.example, Some(3));
        assert_eq!(cfg.alpha, Some(1.6));
        assert_eq!(cfg.k, vec![1, 3]);
        assert_eq!(cfg.t_end, Some(0.25));
        assert_eq!(cfg.scheme, SchemeChoice::Theta1);
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(RunConfig::parse_text("colour = red").is_err());
        assert!(RunConfig::parse_text("alpha = fast").is_err());
        assert!(RunConfig::parse_text("mode = all").is_err());
        assert!(RunConfig::parse_text("just text").is_err());
    }

    #[test]
    fn resolve_fills_example_defaults() {
        let mut cfg = RunConfig::default();
        cfg.example = Some(1);
        let r = cfg.resolve().unwrap();
        assert_eq!(
            (r.n, r.alpha, r.kappa, r.t_end),
            (Some(200), Some(1.8), Some(0.25), Some(0.4))
        );
        assert_eq!(r.k, vec![2]);
        cfg.example = Some(3);
        assert_eq!(cfg.resolve().unwrap().k, vec![1, 3, 5]);
        cfg.example = Some(9);
        assert!(cfg.resolve().is_err());
        cfg.example = Some(1);
        cfg.alpha = Some(2.5);
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("example", "4").unwrap();
        cfg.set("rel-tol", "1e-7").unwrap();
        cfg.set("kappa", "0.1").unwrap();
        cfg.set("dt", "0.001").unwrap();
        let r = cfg.resolve().unwrap();
        let back = RunConfig::parse_text(&r.echo_line()).unwrap();
        assert_eq!(back, r);
        let csv = format!("{}t,error\n0.5,1e-3\n", r.echo_line());
        assert_eq!(RunConfig::parse_text(&csv).unwrap(), r);
        assert_eq!(back.resolve().unwrap(), r);
    }

    #[test]
    fn generic_problem_without_example() {
        let cfg = RunConfig::parse_text("dimension = 2\nN = 10\nalpha = 1.4").unwrap();
        let d = cfg.discretization().unwrap();
        assert_eq!(d.operator().size(), 100);
        assert!(d.exact_vector(0.0).is_some());
        assert!(RunConfig::parse_text("dimension = 3")
            .unwrap()
            .resolve()
            .is_err());
    }

    #[test]
    fn stepper_mapping() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.stepper().theta, 0.5);
        cfg.scheme = SchemeChoice::Theta1;
        assert_eq!(cfg.stepper().theta, 1.0);
        cfg.scheme = SchemeChoice::Bdf2;
        assert!(cfg.stepper().validate().is_err());
        cfg.dt = Some(0.01);
        assert!(cfg.stepper().validate().is_ok());
    }
}

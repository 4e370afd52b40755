//! `fraclap`: convergence curves, bound tables and example runs as CSV.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fraclap::commands::{cmd_bound, cmd_convergence, cmd_solve};
use fraclap::config::RunConfig;
use fraclap::Error;

#[derive(Parser)]
#[command(
    name = "fraclap",
    version,
    about = "Rational approximation of fractional Laplacians"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relative error of R_k against L^(alpha/2) versus k, with the a-priori bound.
    Convergence(Flags),
    /// Run an example along the rational and/or matrix-transfer paths.
    Solve(Flags),
    /// Bound constants, per-k bound versus measured error, k selection.
    Bound(Flags),
}

/// Every flag mirrors a configuration-file key; flags override the file.
#[derive(Args, Default)]
struct Flags {
    /// key = value configuration file (a CSV written by a previous run works too).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_name = "1..4")]
    example: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    /// Interior mesh points (per side in 2-D).
    #[arg(long = "N", value_name = "N")]
    n: Option<String>,
    /// Quadrature points; a comma-separated list runs several.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    t_end: Option<String>,
    #[arg(long, value_name = "theta|theta1|bdf2")]
    scheme: Option<String>,
    #[arg(long)]
    rel_tol: Option<String>,
    #[arg(long)]
    abs_tol: Option<String>,
    /// Fixed step size (adaptive when absent).
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long, value_name = "rational|mt|both")]
    mode: Option<String>,
    #[arg(long, value_name = "factored|banded")]
    form: Option<String>,
    #[arg(long)]
    snapshots: Option<String>,
    #[arg(long)]
    dimension: Option<String>,
    #[arg(long)]
    length: Option<String>,
    /// Comma-separated exponents for the convergence command.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    k_max: Option<String>,
    #[arg(long)]
    timing_runs: Option<String>,
}

impl Flags {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::parse_text(&text)?
            }
            None => RunConfig::default(),
        };
        let pairs = [
            ("example", &self.example),
            ("alpha", &self.alpha),
            ("kappa", &self.kappa),
            ("N", &self.n),
            ("k", &self.k),
            ("t_end", &self.t_end),
            ("scheme", &self.scheme),
            ("rel_tol", &self.rel_tol),
            ("abs_tol", &self.abs_tol),
            ("dt", &self.dt),
            ("out", &self.out),
            ("mode", &self.mode),
            ("form", &self.form),
            ("snapshots", &self.snapshots),
            ("dimension", &self.dimension),
            ("length", &self.length),
            ("alphas", &self.alphas),
            ("k_max", &self.k_max),
            ("timing_runs", &self.timing_runs),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

/// `errors.csv` -> `errors_profile.csv`.
fn profile_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    let name = match out.extension() {
        Some(ext) => format!("{stem}_profile.{}", ext.to_string_lossy()),
        None => format!("{stem}_profile"),
    };
    out.with_file_name(name)
}

fn emit(out: Option<&str>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {path}: {e}")))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Convergence(flags) => {
            let cfg = flags.config()?;
            emit(cfg.out.as_deref(), &cmd_convergence(&cfg)?)
        }
        Command::Bound(flags) => {
            let cfg = flags.config()?;
            emit(cfg.out.as_deref(), &cmd_bound(&cfg)?)
        }
        Command::Solve(flags) => {
            let cfg = flags.config()?;
            let report = cmd_solve(&cfg)?;
            eprint!("{}", report.summary());
            emit(cfg.out.as_deref(), &report.errors_csv())?;
            if let Some(out) = &cfg.out {
                let path = profile_path(Path::new(out));
                fs::write(&path, report.profile_csv())
                    .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
                log::info!("profiles written to {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Domain(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_path_inserts_suffix() {
        assert_eq!(
            profile_path(Path::new("/tmp/a.csv")),
            PathBuf::from("/tmp/a_profile.csv")
        );
        assert_eq!(profile_path(Path::new("run")), PathBuf::from("run_profile"));
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "example = 1\nalpha = 1.6\nk = 4\n").unwrap();
        let flags = Flags {
            config: Some(path),
            alpha: Some("1.7".into()),
            ..Flags::default()
        };
        let cfg = flags.config().unwrap();
        assert_eq!(
            (cfg.example, cfg.alpha, cfg.k.clone()),
            (Some(1), Some(1.7), vec![4])
        );
    }
}

//! The three front-end commands: convergence curves, bound tables and
//! example runs. Each returns its CSV text so callers decide where it goes.

use std::fmt::Write as _;
use std::time::Instant;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::integrator::{integrate, Trajectory};
use crate::operators::{Dimension, DiscreteLaplacian, SpdOperator};
use crate::problems::snapshot_times;
use crate::rational::{
    build_coeffs, convergence_factor, ellipse_radius, epsilon_k, error_bound,
    inverse_convergence_factor, mesh_rate_estimate, pole_gap, select_k, spectral_error, tau_opt,
};

/// Tolerances tried by the k-selection ladder of [`cmd_bound`].
pub const TOLERANCE_LADDER: [f64; 9] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10];

/// Mesh sizes of the 1 + 2π/N comparison table.
pub const MESH_RATE_SIZES: [usize; 3] = [100, 200, 400];

fn operator_for(dimension: usize, n: usize) -> Result<DiscreteLaplacian> {
    match Dimension::from_usize(dimension).map_err(|e| Error::Config(e.to_string()))? {
        Dimension::One => DiscreteLaplacian::one_dimensional(n, 1.0),
        Dimension::Two => DiscreteLaplacian::two_dimensional(n),
    }
    .map_err(|e| Error::Config(e.to_string()))
}

fn check_alpha(alpha: f64) -> Result<f64> {
    if alpha > 0.0 && alpha < 2.0 {
        Ok(alpha / 2.0)
    } else {
        Err(Error::Config(format!(
            "alpha must lie in (0, 2), got {alpha}"
        )))
    }
}

/// Mesh size used when none is given: 200 points in 1-D, 20 per side
/// (400 unknowns) in 2-D.
pub fn default_convergence_mesh(dimension: usize) -> usize {
    if dimension == 2 {
        20
    } else {
        200
    }
}

/// One row of [`cmd_convergence`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub alpha: f64,
    pub k: usize,
    /// max_s |λ_s^β - R_k(λ_s)| / max_s λ_s^β over the analytic spectrum.
    pub relative_error: f64,
    /// The a-priori bound divided by λ_max^β, comparable with the error.
    pub theorem_bound: f64,
    /// convergence_factor(κ)^k.
    pub convergence_factor_power: f64,
}

pub fn convergence_rows(
    dimension: usize,
    n: usize,
    alphas: &[f64],
    k_max: usize,
) -> Result<Vec<ConvergenceRow>> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    let op = operator_for(dimension, n)?;
    let eigenvalues = op.eigenvalues();
    let (lmin, lmax) = op.spectral_bounds();
    let kappa = lmax / lmin;
    let tau = tau_opt(lmin, lmax)?;
    let factor = convergence_factor(kappa);
    let mut rows = Vec::with_capacity(alphas.len() * k_max);
    for &alpha in alphas {
        let beta = check_alpha(alpha)?;
        let scale = lmax.powf(beta);
        for k in 1..=k_max {
            let r = build_coeffs(k, beta, tau)?;
            rows.push(ConvergenceRow {
                alpha,
                k,
                relative_error: spectral_error(&r, &eigenvalues) / scale,
                theorem_bound: error_bound(k, beta, kappa, lmax, tau)? / scale,
                convergence_factor_power: factor.powi(k as i32),
            });
        }
    }
    Ok(rows)
}

/// CSV `alpha,k,relative_error,theorem_bound,convergence_factor_power` for
/// the configured dimension, mesh, exponents and k_max.
pub fn cmd_convergence(config: &RunConfig) -> Result<String> {
    let mut cfg = config.clone();
    cfg.example = None;
    cfg.n = Some(
        cfg.n
            .unwrap_or_else(|| default_convergence_mesh(cfg.dimension)),
    );
    let rows = convergence_rows(cfg.dimension, cfg.n.unwrap(), &cfg.alphas, cfg.k_max)?;
    let mut out = cfg.echo_line();
    out.push_str("alpha,k,relative_error,theorem_bound,convergence_factor_power\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:?},{},{:.16e},{:.16e},{:.16e}",
            r.alpha, r.k, r.relative_error, r.theorem_bound, r.convergence_factor_power
        );
    }
    Ok(out)
}

/// Per-k row of [`cmd_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub k: usize,
    pub bound: f64,
    /// ‖L^β - R_k(L)‖₂ from the analytic spectrum.
    pub measured: f64,
    pub epsilon_k: f64,
    /// ρ_M^(-2).
    pub factor: f64,
}

/// Row of the 1 + 2π/N comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshRateRow {
    pub n: usize,
    pub estimate: f64,
    pub direct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    pub kappa: f64,
    pub gamma: f64,
    pub rho: f64,
    pub factor: f64,
    pub rows: Vec<BoundRow>,
    /// (tolerance, k, ε_k, reached).
    pub selections: Vec<(f64, usize, f64, bool)>,
    pub mesh_rate: Vec<MeshRateRow>,
}

pub fn bound_table(dimension: usize, n: usize, alpha: f64, k_max: usize) -> Result<BoundTable> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    let beta = check_alpha(alpha)?;
    let op = operator_for(dimension, n)?;
    let eigenvalues = op.eigenvalues();
    let (lmin, lmax) = op.spectral_bounds();
    let kappa = lmax / lmin;
    let tau = tau_opt(lmin, lmax)?;
    let rho = ellipse_radius(kappa);
    let mut rows = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let r = build_coeffs(k, beta, tau)?;
        rows.push(BoundRow {
            k,
            bound: error_bound(k, beta, kappa, lmax, tau)?,
            measured: spectral_error(&r, &eigenvalues),
            epsilon_k: epsilon_k(&r, lmin, beta),
            factor: rho.powi(-2),
        });
    }
    let selections = TOLERANCE_LADDER
        .iter()
        .map(|&tol| select_k(&op, beta, tol, k_max).map(|s| (tol, s.k, s.epsilon, s.reached)))
        .collect::<Result<Vec<_>>>()?;
    let mesh_rate = MESH_RATE_SIZES
        .iter()
        .map(|&m| {
            let c = DiscreteLaplacian::one_dimensional(m, 1.0)?.condition_number();
            Ok(MeshRateRow {
                n: m,
                estimate: mesh_rate_estimate(m),
                direct: inverse_convergence_factor(c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundTable {
        kappa,
        gamma: pole_gap(kappa),
        rho,
        factor: convergence_factor(kappa),
        rows,
        selections,
        mesh_rate,
    })
}

/// Bound table as three CSV blocks (per-k, k selection, mesh-rate
/// comparison), each preceded by a comment line naming it.
pub fn cmd_bound(config: &RunConfig) -> Result<String> {
    let cfg = config.resolve()?;
    let table = bound_table(
        cfg.dimension,
        cfg.n.expect("resolved"),
        cfg.alpha.expect("resolved"),
        cfg.k_max,
    )?;
    let mut out = cfg.echo_line();
    let _ = writeln!(
        out,
        "# condition_number = {:.16e}; gamma = {:.16e}; rho_M = {:.16e}; convergence_factor = {:.16e}",
        table.kappa, table.gamma, table.rho, table.factor
    );
    out.push_str("# bounds\nk,bound,measured,epsilon_k,factor\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.k, r.bound, r.measured, r.epsilon_k, r.factor
        );
    }
    out.push_str("# k selection\ntolerance,k,epsilon_k,reached\n");
    for (tol, k, eps, reached) in &table.selections {
        let _ = writeln!(out, "{tol:e},{k},{eps:.16e},{reached}");
    }
    out.push_str("# mesh rate\nN,one_plus_two_pi_over_N,direct\n");
    for r in &table.mesh_rate {
        let _ = writeln!(out, "{},{:.16e},{:.16e}", r.n, r.estimate, r.direct);
    }
    Ok(out)
}

/// One rational run of [`cmd_solve`].
#[derive(Debug, Clone)]
pub struct RationalRun {
    pub k: usize,
    pub epsilon_k: f64,
    pub trajectory: Trajectory,
    /// Max-norm error against the exact solution per snapshot.
    pub error_exact: Option<Vec<f64>>,
    /// Max-norm difference to the matrix-transfer run per snapshot.
    pub diff_mt: Option<Vec<f64>>,
    /// Median wall-clock seconds of the integrate call.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct MtRun {
    pub trajectory: Trajectory,
    pub error_exact: Option<Vec<f64>>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub times: Vec<f64>,
    pub rational: Vec<RationalRun>,
    pub mt: Option<MtRun>,
    /// Mesh points of the final-state profile.
    pub points: Vec<Vec<f64>>,
    pub exact_final: Option<Vec<f64>>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn finite_errors(name: &str, errors: &[f64]) -> Result<()> {
    match errors.iter().find(|e| !e.is_finite()) {
        Some(e) => Err(Error::StepFailure {
            t: f64::NAN,
            reason: format!("{name}: non-finite error {e}"),
        }),
        None => Ok(()),
    }
}

fn timed<F: FnMut() -> Result<Trajectory>>(runs: usize, mut f: F) -> Result<(Trajectory, f64)> {
    let mut seconds = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        let traj = f()?;
        seconds.push(start.elapsed().as_secs_f64());
        last = Some(traj);
    }
    seconds.sort_by(f64::total_cmp);
    Ok((last.expect("at least one run"), seconds[seconds.len() / 2]))
}

impl RunReport {
    /// Per-snapshot max-norm errors: `t`, then `err_exact_<path>` and
    /// `diff_mt_<path>` columns as available.
    pub fn errors_csv(&self) -> String {
        let mut columns: Vec<(String, &[f64])> = Vec::new();
        if let Some(mt) = &self.mt {
            if let Some(e) = &mt.error_exact {
                columns.push(("err_exact_mt".into(), e));
            }
        }
        for run in &self.rational {
            if let Some(e) = &run.error_exact {
                columns.push((format!("err_exact_rational_k{}", run.k), e));
            }
            if let Some(e) = &run.diff_mt {
                columns.push((format!("diff_mt_rational_k{}", run.k), e));
            }
        }
        let mut out = self.config.echo_line();
        out.push('t');
        for (name, _) in &columns {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:.16e}");
            for (_, e) in &columns {
                let _ = write!(out, ",{:.16e}", e[i]);
            }
            out.push('\n');
        }
        out
    }

    /// Final-state profiles: coordinates, then exact, MT and rational values.
    pub fn profile_csv(&self) -> String {
        let dim = self.points.first().map_or(1, |p| p.len());
        let mut columns: Vec<(String, &[f64])> = Vec::new();
        if let Some(e) = &self.exact_final {
            columns.push(("exact".into(), e));
        }
        if let Some(s) = self.mt.as_ref().and_then(|m| m.trajectory.final_state()) {
            columns.push(("mt".into(), s));
        }
        for run in &self.rational {
            if let Some(s) = run.trajectory.final_state() {
                columns.push((format!("rational_k{}", run.k), s));
            }
        }
        let mut out = self.config.echo_line();
        out.push_str(if dim == 2 { "x,y" } else { "x" });
        for (name, _) in &columns {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            let coords: Vec<String> = p.iter().map(|c| format!("{c:.16e}")).collect();
            out.push_str(&coords.join(","));
            for (_, v) in &columns {
                let _ = write!(out, ",{:.16e}", v[i]);
            }
            out.push('\n');
        }
        out
    }

    /// Human-readable timing and ε_k summary (not part of the CSV, which
    /// stays byte-identical across runs).
    pub fn summary(&self) -> String {
        let mut out = String::new();
        if let Some(mt) = &self.mt {
            let _ = writeln!(out, "mt: {:.3} s, {:?}", mt.seconds, mt.trajectory.stats);
        }
        for run in &self.rational {
            let _ = writeln!(
                out,
                "rational k={}: eps_k = {:.3e}, {:.3} s, {:?}",
                run.k, run.epsilon_k, run.seconds, run.trajectory.stats
            );
        }
        out
    }
}

/// Runs the configured example along the requested paths.
pub fn cmd_solve(config: &RunConfig) -> Result<RunReport> {
    let cfg = config.resolve()?;
    let disc = cfg.discretization()?;
    let t_end = cfg.t_end.expect("resolved");
    let stepper = cfg.stepper();
    let times = snapshot_times(t_end, cfg.snapshots);
    let exact: Option<Vec<Vec<f64>>> = times.iter().map(|&t| disc.exact_vector(t)).collect();
    let errors_vs = |traj: &Trajectory, reference: &[Vec<f64>]| -> Vec<f64> {
        traj.states
            .iter()
            .zip(reference)
            .map(|(s, r)| max_abs_diff(s, r))
            .collect()
    };

    let mt = if cfg.mode.runs_mt() {
        let system = disc.matrix_transfer_system()?;
        let (trajectory, seconds) = timed(cfg.timing_runs, || {
            integrate(&system, t_end, &stepper, &times)
        })?;
        let error_exact = exact.as_ref().map(|e| errors_vs(&trajectory, e));
        if let Some(e) = &error_exact {
            finite_errors("mt", e)?;
        }
        log::info!("mt path: {seconds:.3} s");
        Some(MtRun {
            trajectory,
            error_exact,
            seconds,
        })
    } else {
        None
    };

    let mut rational = Vec::new();
    if cfg.mode.runs_rational() {
        let lmin = disc.operator().lambda_min();
        for &k in &cfg.k {
            let system = disc.rational_system(k, cfg.form)?;
            let (trajectory, seconds) = timed(cfg.timing_runs, || {
                integrate(&system, t_end, &stepper, &times)
            })?;
            let error_exact = exact.as_ref().map(|e| errors_vs(&trajectory, e));
            let diff_mt = mt
                .as_ref()
                .map(|m| errors_vs(&trajectory, &m.trajectory.states));
            for e in error_exact.iter().chain(&diff_mt) {
                finite_errors("rational", e)?;
            }
            log::info!("rational path k = {k}: {seconds:.3} s");
            rational.push(RationalRun {
                k,
                epsilon_k: epsilon_k(&disc.coeffs(k)?, lmin, disc.beta()),
                trajectory,
                error_exact,
                diff_mt,
                seconds,
            });
        }
    }

    Ok(RunReport {
        exact_final: disc.exact_vector(t_end),
        points: disc.points().to_vec(),
        config: cfg,
        times,
        rational,
        mt,
    })
}

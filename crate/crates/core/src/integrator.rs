//! Time integration of semi-discrete systems M u' = -S u + M f(t, u).
//!
//! S is the already scaled stiffness (κ/h^α times K, or times L^β on the
//! matrix-transfer path). Steps are θ-method or BDF2 stages, each of which
//! needs solves with M + shift (S - M diag(∂f/∂u)).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{check_len, Error, Result};
use crate::operators::{Dimension, DiscreteLaplacian, SpdOperator};
use crate::oracle::dense_frac_power_matrix;
use crate::rational::{apply_rational, stage_roots, FactorizedPower, RationalCoeffs};

/// Smallest step the adaptive driver will attempt.
pub const DT_MIN: f64 = 1e-12;
/// Factorizations kept alive at once.
const CACHE_SIZE: usize = 8;
/// Adaptive positions are counted in units of H / 2^POS_BITS per snapshot interval.
const POS_BITS: u32 = 48;

/// A factorized stage matrix.
pub trait LinearSolver: Send + Sync {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>>;
}

impl LinearSolver for BandedLu {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        BandedLu::solve(self, rhs)
    }
}

/// The linear part of a semi-discrete system.
pub trait SemiDiscreteOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// M v.
    fn mass_apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// S v.
    fn stiff_apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// Solver for M + shift (S - M diag(d)); `None` means d = 0.
    fn factor_stage(&self, shift: f64, jac_diag: Option<&[f64]>) -> Result<Box<dyn LinearSolver>>;
}

/// Assembled banded M and S; stage matrices are factorized by banded LU.
#[derive(Debug, Clone)]
pub struct BandedSystem {
    mass: BandedMatrix,
    stiff: BandedMatrix,
}

impl BandedSystem {
    pub fn new(mass: BandedMatrix, stiff: BandedMatrix) -> Result<Self> {
        check_len(mass.n(), stiff.n())?;
        Ok(Self { mass, stiff })
    }

    /// M and scale·K from an assembled rational power.
    pub fn from_power(power: &FactorizedPower, scale: f64) -> Result<Self> {
        match (power.mass(), power.stiff()) {
            (Some(m), Some(k)) => Self::new(m.clone(), k.scaled(scale)),
            _ => Err(Error::Domain(
                "rational power was not assembled in banded form".into(),
            )),
        }
    }

    pub fn mass(&self) -> &BandedMatrix {
        &self.mass
    }

    pub fn stiff(&self) -> &BandedMatrix {
        &self.stiff
    }
}

impl SemiDiscreteOperator for BandedSystem {
    fn dim(&self) -> usize {
        self.mass.n()
    }

    fn mass_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.mass.matvec(v)
    }

    fn stiff_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.stiff.matvec(v)
    }

    fn factor_stage(&self, shift: f64, jac_diag: Option<&[f64]>) -> Result<Box<dyn LinearSolver>> {
        let mut stage = self.mass.add_scaled(&self.stiff, shift)?;
        if let Some(d) = jac_diag {
            stage = stage.add_scaled(&self.mass.scale_columns(d)?, -shift)?;
        }
        Ok(Box::new(stage.lu()?))
    }
}

/// Identity mass with a dense stiffness matrix; the matrix-transfer path.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    stiff: DMatrix<f64>,
}

struct DenseLu(nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>);

impl LinearSolver for DenseLu {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.0.l().nrows(), rhs.len())?;
        self.0
            .solve(&DVector::from_column_slice(rhs))
            .map(|x| x.as_slice().to_vec())
            .ok_or(Error::Breakdown { row: 0, pivot: 0.0 })
    }
}

impl DenseSystem {
    pub fn new(stiff: DMatrix<f64>) -> Result<Self> {
        if !stiff.is_square() {
            return Err(Error::DimensionMismatch {
                expected: stiff.nrows(),
                found: stiff.ncols(),
            });
        }
        Ok(Self { stiff })
    }

    /// S = scale · L^β.
    pub fn matrix_transfer(op: &DiscreteLaplacian, beta: f64, scale: f64) -> Result<Self> {
        Self::new(dense_frac_power_matrix(op, beta)? * scale)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.stiff
    }
}

impl SemiDiscreteOperator for DenseSystem {
    fn dim(&self) -> usize {
        self.stiff.nrows()
    }

    fn mass_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v.len())?;
        Ok(v.to_vec())
    }

    fn stiff_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v.len())?;
        Ok((&self.stiff * DVector::from_column_slice(v))
            .as_slice()
            .to_vec())
    }

    fn factor_stage(&self, shift: f64, jac_diag: Option<&[f64]>) -> Result<Box<dyn LinearSolver>> {
        let n = self.dim();
        let mut stage = &self.stiff * shift;
        for i in 0..n {
            stage[(i, i)] += 1.0;
        }
        if let Some(d) = jac_diag {
            check_len(n, d.len())?;
            for i in 0..n {
                stage[(i, i)] -= shift * d[i];
            }
        }
        let lu = stage.lu();
        if !lu.is_invertible() {
            return Err(Error::Breakdown { row: 0, pivot: 0.0 });
        }
        Ok(Box::new(DenseLu(lu)))
    }
}

/// The rational system in factored form: identity mass and S = scale·R_k(L).
///
/// Equivalent to M⁻¹ applied to the banded system. Stage matrices
/// I + s(S - d̄ I) are inverted as (1/ℓ) Π (L + η_i)(L + ω_i)⁻¹, with ω_i
/// from [`stage_roots`], so every stage costs k shifted solves with L and
/// never forms the ill-conditioned product M. A non-constant Jacobian
/// diagonal is replaced by its mean, which turns the Newton iteration into
/// a simplified one.
///
/// In 2-D each L + ω_i is factorized once per stage matrix as a banded LU
/// (bandwidth N); in 1-D the tridiagonal solves need no setup.
#[derive(Debug, Clone)]
pub struct FactoredSystem {
    coeffs: RationalCoeffs,
    op: Arc<DiscreteLaplacian>,
    scale: f64,
    // banded L for the 2-D stage factorizations, with LU factors of L + η_j
    banded: Option<(Arc<BandedMatrix>, Arc<Vec<BandedLu>>)>,
}

struct FactoredStage {
    op: Arc<DiscreteLaplacian>,
    // (η_i, ω_i) pairs, both ascending
    pairs: Vec<(f64, f64)>,
    // LU factors of L + ω_i, when direct factorization is used
    direct: Vec<BandedLu>,
    inv_lead: f64,
}

impl LinearSolver for FactoredStage {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.op.size(), rhs.len())?;
        let mut x: Vec<f64> = rhs.iter().map(|v| v * self.inv_lead).collect();
        for (i, &(eta, omega)) in self.pairs.iter().enumerate() {
            // (L + η)(L + ω)⁻¹ x = x + (η - ω)(L + ω)⁻¹ x
            let y = match self.direct.get(i) {
                Some(lu) => lu.solve(&x)?,
                None => self.op.shifted_solve(omega, &x)?,
            };
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi += (eta - omega) * yi;
            }
        }
        Ok(x)
    }
}

impl FactoredSystem {
    pub fn new(coeffs: RationalCoeffs, op: DiscreteLaplacian, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!(
                "stiffness scale must be positive, got {scale}"
            )));
        }
        let banded = match op.dimension() {
            Dimension::One => None,
            Dimension::Two => {
                let base = op.banded();
                let poles = coeffs
                    .eta()
                    .par_iter()
                    .map(|&eta| base.shifted(eta).lu())
                    .collect::<Result<Vec<_>>>()?;
                Some((Arc::new(base), Arc::new(poles)))
            }
        };
        Ok(Self {
            coeffs,
            op: Arc::new(op),
            scale,
            banded,
        })
    }

    pub fn coeffs(&self) -> &RationalCoeffs {
        &self.coeffs
    }

    pub fn operator(&self) -> &DiscreteLaplacian {
        &self.op
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl SemiDiscreteOperator for FactoredSystem {
    fn dim(&self) -> usize {
        self.op.size()
    }

    fn mass_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v.len())?;
        Ok(v.to_vec())
    }

    fn stiff_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = match &self.banded {
            Some((_, poles)) => {
                check_len(self.dim(), v.len())?;
                let solves = poles
                    .par_iter()
                    .map(|lu| lu.solve(v))
                    .collect::<Result<Vec<_>>>()?;
                let mut acc = vec![0.0; v.len()];
                for (g, x) in self.coeffs.gamma().iter().zip(&solves) {
                    for (a, xi) in acc.iter_mut().zip(x) {
                        *a += g * xi;
                    }
                }
                self.op.apply(&acc)?
            }
            None => apply_rational(&self.coeffs, self.op.as_ref(), v)?,
        };
        for x in &mut out {
            *x *= self.scale;
        }
        Ok(out)
    }

    fn factor_stage(&self, shift: f64, jac_diag: Option<&[f64]>) -> Result<Box<dyn LinearSolver>> {
        let mean = match jac_diag {
            Some(d) => {
                check_len(self.dim(), d.len())?;
                d.iter().sum::<f64>() / d.len() as f64
            }
            None => 0.0,
        };
        let a = 1.0 - shift * mean;
        if shift == 0.0 {
            return Ok(Box::new(FactoredStage {
                op: self.op.clone(),
                pairs: Vec::new(),
                direct: Vec::new(),
                inv_lead: 1.0,
            }));
        }
        if !(a > 0.0) {
            return Err(Error::StepFailure {
                t: f64::NAN,
                reason: format!("stage matrix is not positive definite (1 - shift * d = {a:e})"),
            });
        }
        let b = shift * self.scale;
        let omega = stage_roots(&self.coeffs, a, b)?;
        let mut eta = self.coeffs.eta().to_vec();
        eta.sort_by(f64::total_cmp);
        let lead = a + b * self.coeffs.gamma().iter().sum::<f64>();
        let direct = match &self.banded {
            Some((base, _)) => omega
                .par_iter()
                .map(|&w| base.shifted(w).lu())
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(Box::new(FactoredStage {
            op: self.op.clone(),
            pairs: eta.into_iter().zip(omega).collect(),
            direct,
            inv_lead: 1.0 / lead,
        }))
    }
}

type TimeFn = dyn Fn(f64) -> Vec<f64> + Send + Sync;
type StateFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// The source term f(t, u).
///
/// State-dependent forcing must act pointwise: f_i may depend on u_i only,
/// so that ∂f/∂u is diagonal.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Time(Arc<TimeFn>),
    State {
        f: Arc<StateFn>,
        jacobian_diag: Option<Arc<StateFn>>,
    },
}

impl Forcing {
    pub fn time<F: Fn(f64) -> Vec<f64> + Send + Sync + 'static>(f: F) -> Self {
        Forcing::Time(Arc::new(f))
    }

    /// State-dependent forcing; without a Jacobian, its diagonal is taken by
    /// finite differences.
    pub fn state<F>(f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Forcing::State {
            f: Arc::new(f),
            jacobian_diag: None,
        }
    }

    pub fn state_with_jacobian<F, J>(f: F, jacobian_diag: J) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        J: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Forcing::State {
            f: Arc::new(f),
            jacobian_diag: Some(Arc::new(jacobian_diag)),
        }
    }

    pub fn eval(&self, t: f64, u: &[f64]) -> Vec<f64> {
        match self {
            Forcing::Zero => vec![0.0; u.len()],
            Forcing::Time(f) => f(t),
            Forcing::State { f, .. } => f(t, u),
        }
    }

    pub fn depends_on_state(&self) -> bool {
        matches!(self, Forcing::State { .. })
    }

    /// ∂f_i/∂u_i, analytic when available.
    pub fn jacobian_diag(&self, t: f64, u: &[f64]) -> Option<Vec<f64>> {
        match self {
            Forcing::State {
                jacobian_diag: Some(j),
                ..
            } => Some(j(t, u)),
            Forcing::State { f, .. } => {
                let base = f(t, u);
                let steps: Vec<f64> = u
                    .iter()
                    .map(|x| f64::EPSILON.sqrt() * x.abs().max(1.0))
                    .collect();
                let shifted: Vec<f64> = u.iter().zip(&steps).map(|(x, e)| x + e).collect();
                let moved = f(t, &shifted);
                Some(
                    moved
                        .iter()
                        .zip(&base)
                        .zip(&steps)
                        .map(|((a, b), e)| (a - b) / e)
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Forcing::Zero"),
            Forcing::Time(_) => write!(f, "Forcing::Time(..)"),
            Forcing::State { jacobian_diag, .. } => write!(
                f,
                "Forcing::State {{ analytic_jacobian: {} }}",
                jacobian_diag.is_some()
            ),
        }
    }
}

/// Operator, forcing and initial state.
#[derive(Clone)]
pub struct SemiLinearSystem {
    pub operator: Arc<dyn SemiDiscreteOperator>,
    pub forcing: Forcing,
    pub initial: Vec<f64>,
    pub t0: f64,
}

impl SemiLinearSystem {
    pub fn new(
        operator: Arc<dyn SemiDiscreteOperator>,
        forcing: Forcing,
        initial: Vec<f64>,
        t0: f64,
    ) -> Result<Self> {
        check_len(operator.dim(), initial.len())?;
        Ok(Self {
            operator,
            forcing,
            initial,
            t0,
        })
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }
}

impl fmt::Debug for SemiLinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemiLinearSystem")
            .field("dim", &self.dim())
            .field("forcing", &self.forcing)
            .field("t0", &self.t0)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// θ-method, θ ∈ [1/2, 1].
    Theta,
    /// Two-step BDF, started (and restarted on step changes) with implicit Euler.
    Bdf2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub theta: f64,
    /// Fixed step; `None` selects step-doubling adaptivity.
    pub dt: Option<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_newton: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Theta,
            theta: 0.5,
            dt: None,
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            max_newton: 8,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.5 && self.theta <= 1.0) {
            return Err(Error::Config(format!(
                "theta must lie in [1/2, 1], got {}",
                self.theta
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_newton == 0 {
            return Err(Error::Config("max_newton must be at least 1".into()));
        }
        match self.dt {
            Some(dt) if !(dt > 0.0 && dt.is_finite()) => Err(Error::Config(format!(
                "step size must be positive, got {dt}"
            ))),
            None if self.scheme == Scheme::Bdf2 => {
                Err(Error::Config("BDF2 runs with a fixed step only".into()))
            }
            _ => Ok(()),
        }
    }

    /// Order used by the step-doubling error estimate.
    fn order(&self) -> i32 {
        if self.scheme == Scheme::Theta && self.theta == 0.5 {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub newton_iterations: usize,
    pub linear_solves: usize,
    pub factorizations: usize,
    pub forcing_evals: usize,
}

/// States at the snapshot times.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: IntegrationStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(|s| s.as_slice())
    }

    /// CSV with header `t,x_1,..,x_n`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x_{i}"));
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{t:.16e}"));
            for x in s {
                out.push_str(&format!(",{x:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// CSV with header `t,error`.
pub fn error_series_csv(series: &[(f64, f64)]) -> String {
    let mut out = String::from("t,error\n");
    for (t, e) in series {
        out.push_str(&format!("{t:.16e},{e:.16e}\n"));
    }
    out
}

/// max_i |a_i - b_i| at every snapshot.
pub fn step_by_step_difference(a: &Trajectory, b: &Trajectory) -> Result<Vec<(f64, f64)>> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "snapshot grids differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut out = Vec::with_capacity(a.len());
    for ((ta, sa), (tb, sb)) in a
        .times
        .iter()
        .zip(&a.states)
        .zip(b.times.iter().zip(&b.states))
    {
        if (ta - tb).abs() > 1e-12 * ta.abs().max(1.0) {
            return Err(Error::Domain(format!(
                "snapshot times differ: {ta} vs {tb}"
            )));
        }
        check_len(sa.len(), sb.len())?;
        out.push((*ta, max_abs_diff(sa, sb)));
    }
    Ok(out)
}

/// √(uᵀ M u).
pub fn mass_norm(op: &dyn SemiDiscreteOperator, u: &[f64]) -> Result<f64> {
    let mu = op.mass_apply(u)?;
    Ok(u.iter()
        .zip(&mu)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Result of a single step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: Vec<f64>,
    pub newton_iterations: usize,
}

/// One θ-method step from (t, u) with step dt.
pub fn step(
    system: &SemiLinearSystem,
    u: &[f64],
    t: f64,
    dt: f64,
    config: &StepperConfig,
) -> Result<StepReport> {
    config.validate()?;
    check_len(system.dim(), u.len())?;
    if !(dt > 0.0) {
        return Err(Error::Domain(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let mut stepper = Stepper::new(system, config);
    stepper.refresh_jacobian(t, u);
    let (state, newton_iterations) = stepper.theta_step(t, u, None, None, dt)?;
    Ok(StepReport {
        state,
        newton_iterations,
    })
}

struct Stepper<'a> {
    system: &'a SemiLinearSystem,
    config: &'a StepperConfig,
    cache: Vec<(u64, u64, Box<dyn LinearSolver>)>,
    jac: Option<Vec<f64>>,
    jac_version: u64,
    // the Jacobian was evaluated at the state currently being stepped from
    jac_current: bool,
    forcing_cache: Vec<(u64, Vec<f64>)>,
    stats: IntegrationStats,
}

impl<'a> Stepper<'a> {
    fn new(system: &'a SemiLinearSystem, config: &'a StepperConfig) -> Self {
        Self {
            system,
            config,
            cache: Vec::new(),
            jac: None,
            jac_version: 0,
            jac_current: false,
            forcing_cache: Vec::new(),
            stats: IntegrationStats::default(),
        }
    }

    fn op(&self) -> &dyn SemiDiscreteOperator {
        self.system.operator.as_ref()
    }

    fn refresh_jacobian(&mut self, t: f64, u: &[f64]) {
        if let Some(d) = self.system.forcing.jacobian_diag(t, u) {
            self.stats.forcing_evals += 1;
            self.jac = Some(d);
            self.jac_version += 1;
            self.jac_current = true;
            let version = self.jac_version;
            self.cache.retain(|(_, v, _)| *v == version);
        }
    }

    fn forcing(&mut self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let key = t.to_bits();
        if let Forcing::Time(_) = self.system.forcing {
            if let Some((_, f)) = self.forcing_cache.iter().find(|(k, _)| *k == key) {
                return Ok(f.clone());
            }
        }
        self.stats.forcing_evals += 1;
        let f = self.system.forcing.eval(t, u);
        check_len(u.len(), f.len())?;
        if let Forcing::Time(_) = self.system.forcing {
            if self.forcing_cache.len() >= 4 {
                self.forcing_cache.remove(0);
            }
            self.forcing_cache.push((key, f.clone()));
        }
        Ok(f)
    }

    fn solve(&mut self, shift: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let key = shift.to_bits();
        let version = self.jac_version;
        let idx = match self
            .cache
            .iter()
            .position(|(s, v, _)| *s == key && *v == version)
        {
            Some(i) => i,
            None => {
                let solver = self
                    .system
                    .operator
                    .factor_stage(shift, self.jac.as_deref())?;
                self.stats.factorizations += 1;
                if self.cache.len() >= CACHE_SIZE {
                    self.cache.remove(0);
                }
                self.cache.push((key, version, solver));
                self.cache.len() - 1
            }
        };
        self.stats.linear_solves += 1;
        self.cache[idx].2.solve(rhs)
    }

    /// Solves M x + shift S x - shift M f(t, x) = rhs.
    fn solve_stage(
        &mut self,
        t: f64,
        shift: f64,
        rhs: Vec<f64>,
        guess: &[f64],
    ) -> Result<(Vec<f64>, usize)> {
        match &self.system.forcing {
            Forcing::Zero => Ok((self.solve(shift, &rhs)?, 1)),
            Forcing::Time(_) => {
                let f = self.forcing(t, guess)?;
                let mut b = rhs;
                axpy(&mut b, shift, &self.op().mass_apply(&f)?);
                Ok((self.solve(shift, &b)?, 1))
            }
            Forcing::State { .. } => match self.newton(t, shift, &rhs, guess) {
                Err(e) if is_recoverable(&e) && !self.jac_current => {
                    self.refresh_jacobian(t, guess);
                    self.newton(t, shift, &rhs, guess)
                }
                other => other,
            },
        }
    }

    fn newton(
        &mut self,
        t: f64,
        shift: f64,
        rhs: &[f64],
        guess: &[f64],
    ) -> Result<(Vec<f64>, usize)> {
        let mut x = guess.to_vec();
        let mut last = f64::INFINITY;
        for m in 1..=self.config.max_newton {
            let f = self.forcing(t, &x)?;
            let mut inner = x.clone();
            axpy(&mut inner, -shift, &f);
            let mut g = self.op().mass_apply(&inner)?;
            axpy(&mut g, shift, &self.op().stiff_apply(&x)?);
            axpy(&mut g, -1.0, rhs);
            for gi in &mut g {
                *gi = -*gi;
            }
            let delta = self.solve(shift, &g)?;
            axpy(&mut x, 1.0, &delta);
            last = max_abs(&delta);
            if !last.is_finite() {
                break;
            }
            if last <= self.config.abs_tol + self.config.rel_tol * max_abs(&x) {
                // the final update only confirms the previous iterate
                let iterations = (m - 1).max(1);
                self.stats.newton_iterations += iterations;
                return Ok((x, iterations));
            }
        }
        Err(Error::NoConvergence {
            method: "Newton",
            iterations: self.config.max_newton,
            residual: last,
        })
    }

    /// θ-step; `su` and `fu` are S u and f(t, u) when already known.
    fn theta_step(
        &mut self,
        t: f64,
        u: &[f64],
        su: Option<&[f64]>,
        fu: Option<&[f64]>,
        dt: f64,
    ) -> Result<(Vec<f64>, usize)> {
        let theta = self.config.theta;
        let mut w = u.to_vec();
        let mut rhs_extra = vec![0.0; u.len()];
        if theta < 1.0 {
            let su = match su {
                Some(s) => s.to_vec(),
                None => self.op().stiff_apply(u)?,
            };
            if !matches!(self.system.forcing, Forcing::Zero) {
                let fu = match fu {
                    Some(f) => f.to_vec(),
                    None => self.forcing(t, u)?,
                };
                axpy(&mut w, (1.0 - theta) * dt, &fu);
            }
            axpy(&mut rhs_extra, -(1.0 - theta) * dt, &su);
        }
        let mut rhs = self.op().mass_apply(&w)?;
        axpy(&mut rhs, 1.0, &rhs_extra);
        self.solve_stage(t + dt, theta * dt, rhs, u)
    }

    /// BDF2 step from u (at t) and the previous state.
    fn bdf2_step(&mut self, t: f64, u: &[f64], prev: &[f64], dt: f64) -> Result<(Vec<f64>, usize)> {
        let w: Vec<f64> = u
            .iter()
            .zip(prev)
            .map(|(a, b)| (4.0 * a - b) / 3.0)
            .collect();
        let rhs = self.op().mass_apply(&w)?;
        self.solve_stage(t + dt, 2.0 * dt / 3.0, rhs, u)
    }

    fn implicit_euler_step(&mut self, t: f64, u: &[f64], dt: f64) -> Result<(Vec<f64>, usize)> {
        let rhs = self.op().mass_apply(u)?;
        self.solve_stage(t + dt, dt, rhs, u)
    }

    fn fixed_interval(
        &mut self,
        u: Vec<f64>,
        prev: &mut Option<(Vec<f64>, f64)>,
        ta: f64,
        tb: f64,
        dt: f64,
    ) -> Result<Vec<f64>> {
        let span = tb - ta;
        let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let mut u = u;
        for i in 0..steps {
            let t = ta + span * i as f64 / steps as f64;
            self.jac_current = false;
            let (next, _) = match self.config.scheme {
                Scheme::Theta => self.theta_step(t, &u, None, None, h),
                Scheme::Bdf2 => match prev.take() {
                    Some((p, hp)) if hp == h => self.bdf2_step(t, &u, &p, h),
                    _ => self.implicit_euler_step(t, &u, h),
                },
            }
            .map_err(|e| with_time(e, t))?;
            if self.config.scheme == Scheme::Bdf2 {
                *prev = Some((u, h));
            }
            self.stats.accepted += 1;
            u = next;
        }
        Ok(u)
    }

    fn adaptive_interval(
        &mut self,
        u: Vec<f64>,
        level: &mut u32,
        ta: f64,
        tb: f64,
    ) -> Result<Vec<f64>> {
        let span = tb - ta;
        let full: u64 = 1 << POS_BITS;
        let p = self.config.order();
        let denom = 2f64.powi(p) - 1.0;
        let exponent = 1.0 / (p + 1) as f64;
        let mut pos = 0u64;
        let mut u = u;
        let mut known: Option<(Vec<f64>, Vec<f64>)> = None;
        self.jac_current = false;
        while pos < full {
            let units = 1u64 << (POS_BITS - *level);
            let dt = span / (1u64 << *level) as f64;
            let t = ta + span * (pos as f64 / full as f64);
            if dt < DT_MIN {
                return Err(Error::StepFailure {
                    t,
                    reason: format!("step size fell below {DT_MIN:e}"),
                });
            }
            if known.is_none() {
                let su = self.op().stiff_apply(&u)?;
                let fu = if matches!(self.system.forcing, Forcing::Zero) {
                    vec![0.0; u.len()]
                } else {
                    self.forcing(t, &u)?
                };
                known = Some((su, fu));
            }
            let (su, fu) = known.as_ref().expect("set above").clone();
            let attempt = self.doubling_attempt(t, &u, &su, &fu, dt, denom);
            match attempt {
                Ok((small, err)) if err <= 1.0 => {
                    u = small;
                    pos += units;
                    known = None;
                    self.jac_current = false;
                    self.stats.accepted += 1;
                    let factor = if err == 0.0 {
                        4.0
                    } else {
                        (0.9 * err.powf(-exponent)).min(4.0)
                    };
                    let mut up = factor.log2().floor().max(0.0) as u32;
                    while up > 0 && (up > *level || !pos.is_multiple_of(units << up)) {
                        up -= 1;
                    }
                    *level -= up;
                }
                Ok((_, err)) => {
                    self.stats.rejected += 1;
                    let factor = (0.9 * err.powf(-exponent)).max(0.1);
                    let down = (1.0 / factor).log2().ceil().max(1.0) as u32;
                    *level = (*level + down).min(POS_BITS);
                }
                Err(e) if is_recoverable(&e) => {
                    log::debug!("step rejected at t = {t}: {e}");
                    self.stats.rejected += 1;
                    *level = (*level + 1).min(POS_BITS);
                    if *level == POS_BITS {
                        return Err(with_time(e, t));
                    }
                }
                Err(e) => return Err(with_time(e, t)),
            }
        }
        Ok(u)
    }

    /// Full step against two half steps; returns the two-half-step state
    /// and the scaled local error estimate.
    fn doubling_attempt(
        &mut self,
        t: f64,
        u: &[f64],
        su: &[f64],
        fu: &[f64],
        dt: f64,
        denom: f64,
    ) -> Result<(Vec<f64>, f64)> {
        let (big, _) = self.theta_step(t, u, Some(su), Some(fu), dt)?;
        let (half, _) = self.theta_step(t, u, Some(su), Some(fu), 0.5 * dt)?;
        let (small, _) = self.theta_step(t + 0.5 * dt, &half, None, None, 0.5 * dt)?;
        let mut err = 0.0f64;
        for i in 0..u.len() {
            let scale = self.config.abs_tol + self.config.rel_tol * u[i].abs().max(small[i].abs());
            err = err.max((small[i] - big[i]).abs() / denom / scale);
        }
        if !err.is_finite() {
            return Err(Error::StepFailure {
                t,
                reason: "non-finite state".into(),
            });
        }
        Ok((small, err))
    }
}

/// Advances the system to every snapshot time and to t_end.
///
/// Snapshots must be non-decreasing and inside [t0, t_end]; t_end is added
/// when missing, and t_end = t0 returns the initial state. Every snapshot is
/// hit exactly. In adaptive mode the steps are dyadic fractions H 2^-j of
/// the current snapshot interval H, so the few distinct stage matrices are
/// factorized once and reused.
pub fn integrate(
    system: &SemiLinearSystem,
    t_end: f64,
    config: &StepperConfig,
    snapshots: &[f64],
) -> Result<Trajectory> {
    config.validate()?;
    let t0 = system.t0;
    if !(t_end >= t0 && t_end.is_finite()) {
        return Err(Error::Domain(format!("t_end = {t_end} precedes t0 = {t0}")));
    }
    let mut grid: Vec<f64> = Vec::with_capacity(snapshots.len() + 1);
    for &s in snapshots {
        if !(s >= t0 && s <= t_end) {
            return Err(Error::Domain(format!(
                "snapshot {s} outside [{t0}, {t_end}]"
            )));
        }
        if let Some(&last) = grid.last() {
            if s < last {
                return Err(Error::Domain(
                    "snapshot times must be non-decreasing".into(),
                ));
            }
        }
        grid.push(s);
    }
    if grid.last() != Some(&t_end) {
        grid.push(t_end);
    }

    let mut stepper = Stepper::new(system, config);
    stepper.refresh_jacobian(t0, &system.initial);
    let mut traj = Trajectory::default();
    let mut u = system.initial.clone();
    let mut t = t0;
    let mut level = 0u32;
    let mut last_dt: Option<f64> = None;
    let mut prev: Option<(Vec<f64>, f64)> = None;
    for &target in &grid {
        if target > t {
            let span = target - t;
            u = match config.dt {
                Some(dt) => stepper.fixed_interval(u, &mut prev, t, target, dt)?,
                None => {
                    if let Some(dt) = last_dt {
                        level = (span / dt).log2().ceil().clamp(0.0, POS_BITS as f64) as u32;
                    }
                    let out = stepper.adaptive_interval(u, &mut level, t, target)?;
                    last_dt = Some(span / (1u64 << level) as f64);
                    out
                }
            };
            t = target;
        }
        traj.times.push(target);
        traj.states.push(u.clone());
    }
    traj.stats = stepper.stats;
    Ok(traj)
}

fn is_recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::NoConvergence {
            method: "Newton",
            ..
        } | Error::StepFailure { .. }
    )
}

fn with_time(e: Error, t: f64) -> Error {
    match e {
        Error::StepFailure { t: s, reason } if s.is_nan() => Error::StepFailure { t, reason },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SpectralDecomposition;
    use crate::rational::{assemble_mk, build_coeffs, tau_opt};

    fn scalar_system(value: f64, forcing: Forcing, u0: f64) -> SemiLinearSystem {
        let sys = BandedSystem::new(
            BandedMatrix::identity(1),
            BandedMatrix::identity(1).scaled(value),
        )
        .unwrap();
        SemiLinearSystem::new(Arc::new(sys), forcing, vec![u0], 0.0).unwrap()
    }

    fn fixed(theta: f64, dt: f64) -> StepperConfig {
        StepperConfig {
            theta,
            dt: Some(dt),
            ..StepperConfig::default()
        }
    }

    fn rational_pair(n: usize, k: usize, beta: f64, scale: f64) -> (FactoredSystem, BandedSystem) {
        let op = DiscreteLaplacian::one_dimensional(n, 1.0).unwrap();
        let r = build_coeffs(k, beta, tau_opt(op.lambda_min(), op.lambda_max()).unwrap()).unwrap();
        let banded = BandedSystem::from_power(&assemble_mk(&r, &op).unwrap(), scale).unwrap();
        (FactoredSystem::new(r, op, scale).unwrap(), banded)
    }

    #[test]
    fn trapezoid_amplification() {
        let sys = scalar_system(3.0, Forcing::Zero, 2.0);
        let out = step(&sys, &[2.0], 0.0, 0.1, &StepperConfig::default()).unwrap();
        let z = 0.3;
        assert!((out.state[0] - 2.0 * (1.0 - z / 2.0) / (1.0 + z / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn implicit_euler_damps_stiff_modes() {
        let sys = scalar_system(1e12, Forcing::Zero, 1.0);
        let out = step(&sys, &[1.0], 0.0, 1.0, &fixed(1.0, 1.0)).unwrap();
        assert!(out.state[0].abs() < 1e-11);
    }

    #[test]
    fn affine_forcing_needs_one_newton_iteration() {
        let (factored, banded) = rational_pair(40, 3, 0.8, 50.0);
        let op = DiscreteLaplacian::one_dimensional(30, 1.0).unwrap();
        let dense = DenseSystem::matrix_transfer(&op, 0.8, 50.0).unwrap();
        let systems: Vec<Arc<dyn SemiDiscreteOperator>> =
            vec![Arc::new(factored), Arc::new(banded), Arc::new(dense)];
        for sys in systems {
            let n = sys.dim();
            let forcing = Forcing::state_with_jacobian(
                |t, u: &[f64]| {
                    u.iter()
                        .enumerate()
                        .map(|(i, x)| t * i as f64 - 10.0 * x)
                        .collect()
                },
                |_, u: &[f64]| vec![-10.0; u.len()],
            );
            let u0: Vec<f64> = (0..n).map(|i| (0.2 * i as f64).sin()).collect();
            let system = SemiLinearSystem::new(sys, forcing, u0.clone(), 0.0).unwrap();
            let config = StepperConfig {
                rel_tol: 1e-10,
                abs_tol: 1e-12,
                ..StepperConfig::default()
            };
            let out = step(&system, &u0, 0.0, 0.01, &config).unwrap();
            assert_eq!(out.newton_iterations, 1);
        }
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        let f = Forcing::state(|_, u: &[f64]| u.iter().map(|x| x * x * x - 2.0 * x).collect());
        let u = [0.5, -3.0, 10.0];
        let d = f.jacobian_diag(0.0, &u).unwrap();
        for (di, x) in d.iter().zip(&u) {
            let exact = 3.0 * x * x - 2.0;
            assert!((di - exact).abs() < 1e-6 * exact.abs().max(1.0));
        }
        assert!(Forcing::Zero.jacobian_diag(0.0, &u).is_none());
    }

    #[test]
    fn nonlinear_forcing_converges_adaptively() {
        // u' = -u + u², u(0) = 1/2 has u(t) = 1 / (1 + e^t)
        let sys = scalar_system(1.0, Forcing::state(|_, u: &[f64]| vec![u[0] * u[0]]), 0.5);
        let traj = integrate(&sys, 1.0, &StepperConfig::default(), &[0.5]).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let exact = 1.0 / (1.0 + t.exp());
            assert!((s[0] - exact).abs() < 1e-5, "t = {t}");
        }
    }

    #[test]
    fn factored_stage_matches_banded_stage() {
        let (factored, banded) = rational_pair(30, 3, 0.75, 20.0);
        let rhs: Vec<f64> = (0..30).map(|i| (0.4 * i as f64).cos()).collect();
        let d = vec![-3.0; 30];
        for jac in [None, Some(d.as_slice())] {
            // the banded stage is M times the factored one
            let a = factored
                .factor_stage(0.05, jac)
                .unwrap()
                .solve(&rhs)
                .unwrap();
            let m_rhs = banded.mass_apply(&rhs).unwrap();
            let b = banded
                .factor_stage(0.05, jac)
                .unwrap()
                .solve(&m_rhs)
                .unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-10 * max_abs(&a));
        }
    }

    #[test]
    fn factored_stage_on_an_eigenvector() {
        let (factored, _) = rational_pair(25, 4, 0.9, 7.0);
        let op = factored.operator().clone();
        let spec = SpectralDecomposition::new(&op);
        let phi = spec.eigenvector((3, 1));
        let mu = crate::operators::line_eigenvalue(3, 25);
        let r = crate::rational::eval_scalar(factored.coeffs(), mu);
        let x = factored
            .factor_stage(0.2, None)
            .unwrap()
            .solve(&phi)
            .unwrap();
        let expected = 1.0 / (1.0 + 0.2 * 7.0 * r);
        for (xi, p) in x.iter().zip(&phi) {
            assert!((xi - expected * p).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenmode_decay_on_matrix_transfer_path() {
        let op = DiscreteLaplacian::one_dimensional(20, 1.0).unwrap();
        let (beta, scale) = (0.8, 2.0);
        let sys = DenseSystem::matrix_transfer(&op, beta, scale).unwrap();
        let phi = SpectralDecomposition::new(&op).eigenvector((1, 1));
        let system = SemiLinearSystem::new(Arc::new(sys), Forcing::Zero, phi.clone(), 0.0).unwrap();
        let config = StepperConfig::default();
        let traj = integrate(&system, 2.0, &config, &[0.5, 1.0, 1.5]).unwrap();
        let rate = scale * op.lambda_min().powf(beta);
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let decay = (-rate * t).exp();
            let err = s
                .iter()
                .zip(&phi)
                .fold(0.0f64, |m, (a, p)| m.max((a - decay * p).abs()));
            assert!(
                err <= 10.0 * config.rel_tol * decay * max_abs(&phi),
                "t = {t}"
            );
        }
    }

    #[test]
    fn empty_interval_returns_initial_state() {
        let sys = scalar_system(1.0, Forcing::Zero, 3.0);
        let traj = integrate(&sys, 0.0, &StepperConfig::default(), &[]).unwrap();
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.states, vec![vec![3.0]]);
    }

    #[test]
    fn rejects_bad_configuration() {
        let sys = scalar_system(1.0, Forcing::Zero, 1.0);
        let mut c = StepperConfig::default();
        c.theta = 0.4;
        assert!(integrate(&sys, 1.0, &c, &[]).is_err());
        let c = StepperConfig {
            scheme: Scheme::Bdf2,
            ..StepperConfig::default()
        };
        assert!(matches!(
            integrate(&sys, 1.0, &c, &[]),
            Err(Error::Config(_))
        ));
        assert!(integrate(&sys, 1.0, &StepperConfig::default(), &[2.0]).is_err());
        assert!(integrate(&sys, 1.0, &StepperConfig::default(), &[0.5, 0.2]).is_err());
        assert!(integrate(&sys, -1.0, &StepperConfig::default(), &[]).is_err());
    }

    #[test]
    fn snapshots_are_hit_exactly() {
        let sys = scalar_system(2.0, Forcing::time(|t| vec![t.cos()]), 1.0);
        let snaps = [0.1, 0.25, 0.7];
        for config in [StepperConfig::default(), fixed(0.5, 0.03)] {
            let traj = integrate(&sys, 1.0, &config, &snaps).unwrap();
            assert_eq!(traj.times, vec![0.1, 0.25, 0.7, 1.0]);
        }
    }

    #[test]
    fn time_forcing_solution() {
        // u' = -2u + cos t, u(0) = 1
        let sys = scalar_system(2.0, Forcing::time(|t| vec![t.cos()]), 1.0);
        let exact = |t: f64| 0.6 * (-2.0 * t).exp() + (2.0 * t.cos() + t.sin()) / 5.0;
        let traj = integrate(&sys, 2.0, &StepperConfig::default(), &[0.5, 1.0]).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!(
                (s[0] - exact(*t)).abs() < 1e-5,
                "t = {t}: {} vs {}",
                s[0],
                exact(*t)
            );
        }
        let bdf = StepperConfig {
            scheme: Scheme::Bdf2,
            dt: Some(1e-3),
            ..StepperConfig::default()
        };
        let traj = integrate(&sys, 2.0, &bdf, &[0.5, 1.0]).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!(
                (s[0] - exact(*t)).abs() < 1e-5,
                "t = {t}: {} vs {}",
                s[0],
                exact(*t)
            );
        }
    }

    #[test]
    fn difference_of_trajectories() {
        let a = Trajectory {
            times: vec![0.0, 1.0],
            states: vec![vec![1.0, 2.0], vec![3.0, -1.0]],
            stats: IntegrationStats::default(),
        };
        let zero = step_by_step_difference(&a, &a).unwrap();
        assert!(zero.iter().all(|&(_, d)| d == 0.0));
        let delta = [0.25, -0.5];
        let mut b = a.clone();
        for s in &mut b.states {
            for (x, d) in s.iter_mut().zip(&delta) {
                *x += d;
            }
        }
        let diff = step_by_step_difference(&a, &b).unwrap();
        assert!(diff.iter().all(|&(_, d)| d == 0.5));
        b.times[1] = 2.0;
        assert!(step_by_step_difference(&a, &b).is_err());
    }

    #[test]
    fn csv_layout() {
        let a = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            stats: IntegrationStats::default(),
        };
        let csv = a.to_csv();
        assert!(csv.starts_with("t,x_1,x_2\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(error_series_csv(&[(0.5, 1e-3)]).starts_with("t,error\n5.0000000000000000e-1,"));
    }

    #[test]
    fn banded_and_factored_trajectories_agree() {
        let (factored, banded) = rational_pair(40, 2, 0.9, 5.0);
        let u0: Vec<f64> = (1..=40)
            .map(|i| {
                let x = i as f64 / 41.0;
                x * (1.0 - x)
            })
            .collect();
        let config = fixed(0.5, 1e-3);
        let a = integrate(
            &SemiLinearSystem::new(Arc::new(factored), Forcing::Zero, u0.clone(), 0.0).unwrap(),
            0.1,
            &config,
            &[0.05],
        )
        .unwrap();
        let b = integrate(
            &SemiLinearSystem::new(Arc::new(banded), Forcing::Zero, u0, 0.0).unwrap(),
            0.1,
            &config,
            &[0.05],
        )
        .unwrap();
        let diff = step_by_step_difference(&a, &b).unwrap();
        assert!(diff.iter().all(|&(_, d)| d < 1e-12), "{diff:?}");
    }
}

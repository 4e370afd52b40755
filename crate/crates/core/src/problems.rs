//! Benchmark problems u_t = -κ (-Δ)^(α/2) u + f on (0, a) or (0, 1)² with
//! homogeneous Dirichlet data, and their finite-difference discretizations.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::integrator::{
    BandedSystem, DenseSystem, FactoredSystem, Forcing, SemiDiscreteOperator, SemiLinearSystem,
};
use crate::operators::{Dimension, DiscreteLaplacian};
use crate::oracle::{
    exact_solution_example1, exact_solution_example3, exact_solution_example4, EXAMPLE1_TERMS,
};
use crate::rational::{assemble_mk, build_coeffs, tau_opt, RationalCoeffs};
use crate::special::gamma;

type PointFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type SourceFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Right-hand side f(x, t, u).
#[derive(Clone)]
pub enum ProblemForcing {
    Zero,
    /// f = s(x, t).
    Source(Arc<SourceFn>),
    /// f = s(x, t) + c u.
    Affine {
        source: Arc<SourceFn>,
        reaction: f64,
    },
}

/// Reference parameters used when a run does not override them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunDefaults {
    pub n: usize,
    pub k: usize,
    pub t_end: f64,
}

#[derive(Clone)]
pub struct ProblemDefinition {
    pub name: String,
    pub dimension: Dimension,
    /// Side length of the interval or square.
    pub length: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub forcing: ProblemForcing,
    pub initial: Arc<PointFn>,
    pub exact: Option<Arc<SourceFn>>,
    pub defaults: RunDefaults,
}

impl fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDefinition")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("length", &self.length)
            .field("alpha", &self.alpha)
            .field("kappa", &self.kappa)
            .field("has_exact", &self.exact.is_some())
            .field("defaults", &self.defaults)
            .finish()
    }
}

fn check_parameters(alpha: f64, kappa: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (1, 2], got {alpha}"
        )));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    Ok(())
}

/// Reference parameters: α = 1.8, κ = 0.25.
pub fn example1() -> ProblemDefinition {
    example1_with(1.8, 0.25).expect("reference parameters are valid")
}

/// Decay of u₀ = x²(π - x) on (0, π), f = 0, with its sine-series solution.
pub fn example1_with(alpha: f64, kappa: f64) -> Result<ProblemDefinition> {
    check_parameters(alpha, kappa)?;
    Ok(ProblemDefinition {
        name: "example1".into(),
        dimension: Dimension::One,
        length: PI,
        alpha,
        kappa,
        forcing: ProblemForcing::Zero,
        initial: Arc::new(|x: &[f64]| x[0] * x[0] * (PI - x[0])),
        exact: Some(Arc::new(move |x: &[f64], t| {
            exact_solution_example1(x[0], t, alpha, kappa, EXAMPLE1_TERMS)
        })),
        defaults: RunDefaults {
            n: 200,
            k: 2,
            t_end: 0.4,
        },
    })
}

/// Reference parameters: α = 1.9 (the run matrix also uses 1.1), κ = 0.25.
pub fn example2() -> ProblemDefinition {
    example2_with(1.9, 0.25).expect("reference parameters are valid")
}

/// u₀ = sin 4x on (0, π), f = 0; no closed form is attached.
pub fn example2_with(alpha: f64, kappa: f64) -> Result<ProblemDefinition> {
    check_parameters(alpha, kappa)?;
    Ok(ProblemDefinition {
        name: "example2".into(),
        dimension: Dimension::One,
        length: PI,
        alpha,
        kappa,
        forcing: ProblemForcing::Zero,
        initial: Arc::new(|x: &[f64]| (4.0 * x[0]).sin()),
        exact: None,
        defaults: RunDefaults {
            n: 500,
            k: 3,
            t_end: 0.3,
        },
    })
}

/// Reference parameters: α = 1.7, κ = 2.
pub fn example3() -> ProblemDefinition {
    example3_with(1.7, 2.0).expect("reference parameters are valid")
}

/// Forced problem on (0, 1) built so that t^α x²(1 - x)² solves it with
/// the Riesz (two-sided Riemann-Liouville) fractional derivative.
pub fn example3_with(alpha: f64, kappa: f64) -> Result<ProblemDefinition> {
    check_parameters(alpha, kappa)?;
    let c2 = 2.0 / gamma(3.0 - alpha);
    let c3 = 12.0 / gamma(4.0 - alpha);
    let c4 = 24.0 / gamma(5.0 - alpha);
    let front = kappa / (2.0 * (alpha * PI / 2.0).cos());
    let source = move |x: &[f64], t: f64| -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let (x, y) = (x[0], 1.0 - x[0]);
        let both = |p: f64| x.powf(p) + y.powf(p);
        let riesz = c2 * both(2.0 - alpha) - c3 * both(3.0 - alpha) + c4 * both(4.0 - alpha);
        front * t.powf(alpha) * riesz + alpha * t.powf(alpha - 1.0) * (x * y).powi(2)
    };
    Ok(ProblemDefinition {
        name: "example3".into(),
        dimension: Dimension::One,
        length: 1.0,
        alpha,
        kappa,
        forcing: ProblemForcing::Source(Arc::new(source)),
        initial: Arc::new(|_: &[f64]| 0.0),
        exact: Some(Arc::new(move |x: &[f64], t| {
            exact_solution_example3(x[0], t, alpha)
        })),
        defaults: RunDefaults {
            n: 400,
            k: 5,
            t_end: 0.5,
        },
    })
}

/// Sine modes (p, q, weight, μ) whose sum is 16 sin³(πx) sin³(πy).
pub const EXAMPLE4_MODES: [(f64, f64, f64, f64); 4] = [
    (1.0, 1.0, 9.0, 2.0 * PI * PI),
    (1.0, 3.0, -3.0, 10.0 * PI * PI),
    (3.0, 1.0, -3.0, 10.0 * PI * PI),
    (3.0, 3.0, 1.0, 18.0 * PI * PI),
];

/// Reference parameters: α = 1.5, κ = 10.
pub fn example4() -> ProblemDefinition {
    example4_with(1.5, 10.0).expect("reference parameters are valid")
}

/// Reaction-diffusion on the unit square with the affine reaction -κu and
/// exact solution t^α sin³(πx) sin³(πy).
pub fn example4_with(alpha: f64, kappa: f64) -> Result<ProblemDefinition> {
    check_parameters(alpha, kappa)?;
    let beta = alpha / 2.0;
    let source = move |p: &[f64], t: f64| -> f64 {
        let (x, y) = (p[0], p[1]);
        let modes: f64 = EXAMPLE4_MODES
            .iter()
            .map(|&(a, b, v, mu)| {
                (1.0 + mu.powf(beta)) * v * (a * PI * x).sin() * (b * PI * y).sin()
            })
            .sum();
        let bump = ((PI * x).sin() * (PI * y).sin()).powi(3);
        let growth = if t == 0.0 {
            0.0
        } else {
            alpha * t.powf(alpha - 1.0)
        };
        t.powf(alpha) * kappa / 16.0 * modes + growth * bump
    };
    Ok(ProblemDefinition {
        name: "example4".into(),
        dimension: Dimension::Two,
        length: 1.0,
        alpha,
        kappa,
        forcing: ProblemForcing::Affine {
            source: Arc::new(source),
            reaction: -kappa,
        },
        initial: Arc::new(|_: &[f64]| 0.0),
        exact: Some(Arc::new(move |p: &[f64], t| {
            exact_solution_example4(p[0], p[1], t, alpha)
        })),
        defaults: RunDefaults {
            n: 40,
            k: 7,
            t_end: 1.0,
        },
    })
}

/// Example by number 1..=4 with optional α and κ overrides.
pub fn example(id: u8, alpha: Option<f64>, kappa: Option<f64>) -> Result<ProblemDefinition> {
    let base = match id {
        1 => example1(),
        2 => example2(),
        3 => example3(),
        4 => example4(),
        _ => {
            return Err(Error::Config(format!(
                "unknown example {id}; expected 1..4"
            )))
        }
    };
    let (a, k) = (alpha.unwrap_or(base.alpha), kappa.unwrap_or(base.kappa));
    match id {
        1 => example1_with(a, k),
        2 => example2_with(a, k),
        3 => example3_with(a, k),
        _ => example4_with(a, k),
    }
}

/// Unforced decay of the first sine mode on (0, a)^d, for configurations
/// that do not name an example. Its exact solution is
/// exp(-κ (dπ²/a²)^(α/2) t) Π sin(π x_i / a).
pub fn sine_mode_problem(
    dimension: Dimension,
    length: f64,
    alpha: f64,
    kappa: f64,
    defaults: RunDefaults,
) -> Result<ProblemDefinition> {
    check_parameters(alpha, kappa)?;
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::Domain(format!(
            "domain length must be positive, got {length}"
        )));
    }
    let d = dimension.as_usize() as f64;
    let rate = kappa * (d * (PI / length).powi(2)).powf(alpha / 2.0);
    let mode = move |x: &[f64]| x.iter().map(|xi| (PI * xi / length).sin()).product::<f64>();
    Ok(ProblemDefinition {
        name: "sine_mode".into(),
        dimension,
        length,
        alpha,
        kappa,
        forcing: ProblemForcing::Zero,
        initial: Arc::new(mode),
        exact: Some(Arc::new(move |x: &[f64], t| (-rate * t).exp() * mode(x))),
        defaults,
    })
}

/// How the rational semi-discrete system is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RationalForm {
    /// Stage matrices factored through the zeros of the shifted rational function.
    Factored,
    /// Assembled banded M and K, as in M u' = -c K u + M f.
    Banded,
}

/// A problem bound to an N-point (per side) mesh.
#[derive(Clone)]
pub struct Discretization {
    problem: ProblemDefinition,
    op: DiscreteLaplacian,
    points: Arc<Vec<Vec<f64>>>,
}

impl fmt::Debug for Discretization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Discretization")
            .field("problem", &self.problem.name)
            .field("n_side", &self.op.n_side())
            .field("h", &self.op.h())
            .finish()
    }
}

impl Discretization {
    pub fn new(problem: &ProblemDefinition, n: usize) -> Result<Self> {
        let op = match problem.dimension {
            Dimension::One => DiscreteLaplacian::one_dimensional(n, problem.length)?,
            Dimension::Two => {
                if problem.length != 1.0 {
                    return Err(Error::Domain("2-D problems live on the unit square".into()));
                }
                DiscreteLaplacian::two_dimensional(n)?
            }
        };
        let h = op.h();
        let points: Vec<Vec<f64>> = match problem.dimension {
            Dimension::One => (1..=n).map(|i| vec![i as f64 * h]).collect(),
            Dimension::Two => (0..n * n)
                .map(|idx| vec![(idx % n + 1) as f64 * h, (idx / n + 1) as f64 * h])
                .collect(),
        };
        Ok(Self {
            problem: problem.clone(),
            op,
            points: Arc::new(points),
        })
    }

    pub fn problem(&self) -> &ProblemDefinition {
        &self.problem
    }

    pub fn operator(&self) -> &DiscreteLaplacian {
        &self.op
    }

    /// Mesh points; in 2-D the index is iy·N + ix with coordinates (x, y).
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Fractional power β = α/2 applied to the matrix L.
    pub fn beta(&self) -> f64 {
        self.problem.alpha / 2.0
    }

    /// κ / h^α.
    pub fn stiffness_scale(&self) -> f64 {
        self.problem.kappa / self.op.h().powf(self.problem.alpha)
    }

    pub fn initial_vector(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| (self.problem.initial)(p))
            .collect()
    }

    pub fn exact_vector(&self, t: f64) -> Option<Vec<f64>> {
        self.problem
            .exact
            .as_ref()
            .map(|u| self.points.iter().map(|p| u(p, t)).collect())
    }

    /// The forcing evaluated on the mesh.
    pub fn forcing(&self) -> Forcing {
        let points = self.points.clone();
        match &self.problem.forcing {
            ProblemForcing::Zero => Forcing::Zero,
            ProblemForcing::Source(s) => {
                let s = s.clone();
                Forcing::time(move |t| points.iter().map(|p| s(p, t)).collect())
            }
            ProblemForcing::Affine { source, reaction } => {
                let (s, c) = (source.clone(), *reaction);
                Forcing::state_with_jacobian(
                    move |t, u: &[f64]| {
                        points
                            .iter()
                            .zip(u)
                            .map(|(p, ui)| s(p, t) + c * ui)
                            .collect()
                    },
                    move |_, u: &[f64]| vec![c; u.len()],
                )
            }
        }
    }

    /// Rational coefficients with τ = τ_opt for this mesh.
    pub fn coeffs(&self, k: usize) -> Result<RationalCoeffs> {
        let tau = tau_opt(self.op.lambda_min(), self.op.lambda_max())?;
        build_coeffs(k, self.beta(), tau)
    }

    fn system(&self, operator: Arc<dyn SemiDiscreteOperator>) -> Result<SemiLinearSystem> {
        SemiLinearSystem::new(operator, self.forcing(), self.initial_vector(), 0.0)
    }

    /// u' = -(κ/h^α) R_k(L) u + f.
    pub fn rational_system(&self, k: usize, form: RationalForm) -> Result<SemiLinearSystem> {
        let r = self.coeffs(k)?;
        let c = self.stiffness_scale();
        let operator: Arc<dyn SemiDiscreteOperator> = match form {
            RationalForm::Factored => Arc::new(FactoredSystem::new(r, self.op.clone(), c)?),
            RationalForm::Banded => {
                Arc::new(BandedSystem::from_power(&assemble_mk(&r, &self.op)?, c)?)
            }
        };
        self.system(operator)
    }

    /// u' = -(κ/h^α) L^(α/2) u + f with a dense matrix power.
    pub fn matrix_transfer_system(&self) -> Result<SemiLinearSystem> {
        let operator = DenseSystem::matrix_transfer(&self.op, self.beta(), self.stiffness_scale())?;
        self.system(Arc::new(operator))
    }
}

/// `count` equally spaced times in (0, t_end], ending at t_end.
pub fn snapshot_times(t_end: f64, count: usize) -> Vec<f64> {
    let count = count.max(1);
    (1..=count)
        .map(|i| {
            if i == count {
                t_end
            } else {
                t_end * i as f64 / count as f64
            }
        })
        .collect()
}

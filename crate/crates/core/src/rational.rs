//! Rational approximation R_k(z) = z Σ γ_j / (η_j + z) of z^β.
//!
//! The coefficients come from the k-point Gauss-Jacobi rule for the weight
//! (1 - t)^(β-1) (1 + t)^(-β) applied to the real integral representation of
//! A^β, after the change of variable ρ^(1/β) = τ(1 - t)/(1 + t). With
//! τ = √(λ_min λ_max) the poles of the integrand sit symmetrically away from
//! [-1, 1], and the error decays geometrically in k at a rate fixed by the
//! condition number alone.
//!
//! Writing R_k = z P_{k-1}(z) / Q_k(z) turns A^β into M⁻¹K with M = Q_k(A)
//! and K = A P_{k-1}(A), both banded when A is.

use std::f64::consts::{E, PI};

use rayon::prelude::*;

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{check_len, Error, Result};
use crate::operators::{DiscreteLaplacian, SpdOperator};
use crate::quadrature::{gauss_jacobi, JacobiWeight};

/// Constant of the a-priori error bound, 8e · C_β · 2 sin(βπ)/π with C_β = π/sin(βπ).
pub const BOUND_CONSTANT: f64 = 16.0 * E;

/// τ = √(λ_min λ_max), the shift that balances the pole distances at both
/// ends of the spectrum.
pub fn tau_opt(lambda_min: f64, lambda_max: f64) -> Result<f64> {
    if !(lambda_min > 0.0 && lambda_max >= lambda_min && lambda_max.is_finite()) {
        return Err(Error::Domain(format!(
            "need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    Ok((lambda_min * lambda_max).sqrt())
}

/// Pole of the quadrature integrand for eigenvalue λ: (τ + λ)/(τ - λ).
pub fn mobius_pole(tau: f64, lambda: f64) -> Result<f64> {
    if lambda == tau {
        return Err(Error::Pole(format!("lambda equals tau = {tau}")));
    }
    Ok((tau + lambda) / (tau - lambda))
}

/// Half-width γ = (√κ + 1)/(√κ - 1) of the pole-free gap around [-1, 1] at τ_opt.
pub fn pole_gap(kappa: f64) -> f64 {
    let s = kappa.sqrt();
    (s + 1.0) / (s - 1.0)
}

/// ρ_M = γ + √(γ² - 1), the largest admissible Bernstein ellipse parameter.
pub fn ellipse_radius(kappa: f64) -> f64 {
    let g = pole_gap(kappa);
    g + (g * g - 1.0).sqrt()
}

/// Asymptotic error reduction per quadrature point, ((κ^¼ - 1)/(κ^¼ + 1))².
pub fn convergence_factor(kappa: f64) -> f64 {
    let q = kappa.powf(0.25);
    ((q - 1.0) / (q + 1.0)).powi(2)
}

/// ((κ^¼ + 1)/(κ^¼ - 1))², the reciprocal of [`convergence_factor`].
pub fn inverse_convergence_factor(kappa: f64) -> f64 {
    let q = kappa.powf(0.25);
    ((q + 1.0) / (q - 1.0)).powi(2)
}

/// Heuristic 1 + 2π/N for [`inverse_convergence_factor`] of the N-point Laplacian.
pub fn mesh_rate_estimate(n: usize) -> f64 {
    1.0 + 2.0 * PI / n as f64
}

/// A-priori bound on ‖A^β - R_k(A)‖₂ for τ = τ_opt:
/// C ‖A‖ τ^β (ρ_M + 1) / ((ρ_M - 1)(ρ_M - γ)) · k / ρ_M^(2k), with C = 16e.
///
/// The constant is traced through the proof chain and can overestimate by a
/// small factor; the bound is asymptotic in k.
pub fn error_bound(k: usize, beta: f64, kappa: f64, norm_a: f64, tau: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!(
            "beta must lie in (0, 1), got {beta}"
        )));
    }
    if !(kappa >= 1.0) {
        return Err(Error::Domain(format!(
            "condition number must be >= 1, got {kappa}"
        )));
    }
    if kappa == 1.0 {
        return Ok(0.0);
    }
    let gamma = pole_gap(kappa);
    let rho = ellipse_radius(kappa);
    let kf = k as f64;
    Ok(
        BOUND_CONSTANT * norm_a * tau.powf(beta) * (rho + 1.0) / ((rho - 1.0) * (rho - gamma))
            * kf
            * (-2.0 * kf * rho.ln()).exp(),
    )
}

/// Partial-fraction data of R_k together with the quadrature rule behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalCoeffs {
    k: usize,
    beta: f64,
    tau: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    gamma: Vec<f64>,
    eta: Vec<f64>,
}

impl RationalCoeffs {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// CSV table `j,node,weight,gamma,eta` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# k={} beta={:.16e} tau={:.16e}\nj,node,weight,gamma,eta\n",
            self.k, self.beta, self.tau
        );
        for j in 0..self.k {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                j + 1,
                self.nodes[j],
                self.weights[j],
                self.gamma[j],
                self.eta[j]
            ));
        }
        out
    }
}

/// γ_j = 2 sin(βπ) τ^β / π · w_j / (1 + ϑ_j), η_j = τ (1 - ϑ_j)/(1 + ϑ_j).
pub fn build_coeffs(k: usize, beta: f64, tau: f64) -> Result<RationalCoeffs> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let rule = gauss_jacobi(&JacobiWeight::fractional(beta)?, k)?;
    let scale = 2.0 * (beta * PI).sin() * tau.powf(beta) / PI;
    let (gamma, eta) = rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .map(|(&t, &w)| (scale * w / (1.0 + t), tau * (1.0 - t) / (1.0 + t)))
        .unzip();
    Ok(RationalCoeffs {
        k,
        beta,
        tau,
        nodes: rule.nodes().to_vec(),
        weights: rule.weights().to_vec(),
        gamma,
        eta,
    })
}

/// R_k(λ) = λ Σ γ_j / (η_j + λ).
pub fn eval_scalar(r: &RationalCoeffs, lambda: f64) -> f64 {
    lambda
        * r.gamma
            .iter()
            .zip(&r.eta)
            .map(|(g, e)| g / (e + lambda))
            .sum::<f64>()
}

/// max_s |λ_s^β - R_k(λ_s)| over the given eigenvalues, i.e. ‖A^β - R_k(A)‖₂
/// for symmetric A with that spectrum.
pub fn spectral_error(r: &RationalCoeffs, eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .iter()
        .map(|&l| (l.powf(r.beta) - eval_scalar(r, l)).abs())
        .fold(0.0, f64::max)
}

/// ε_k = |R_k(λ_min) - λ_min^β|, the perturbation of the slowest decay rate.
pub fn epsilon_k(r: &RationalCoeffs, lambda_min: f64, beta: f64) -> f64 {
    (eval_scalar(r, lambda_min) - lambda_min.powf(beta)).abs()
}

/// Positive ω_i, ascending, with
/// a + b R_k(z) = (a + b Σγ_j) Π (z + ω_i) / Π (z + η_j)  for a, b > 0.
///
/// The zeros of a + b R_k interlace the poles: one lies in (0, η_(1)) and one
/// in each gap between consecutive sorted η. Each is located by a bracketed
/// Newton iteration on a/(bx) - Σ γ_j/(η_j - x), which decreases strictly.
pub fn stage_roots(r: &RationalCoeffs, a: f64, b: f64) -> Result<Vec<f64>> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!(
            "stage root coefficients must be positive, got a = {a}, b = {b}"
        )));
    }
    let mut poles: Vec<(f64, f64)> = r.eta.iter().copied().zip(r.gamma.iter().copied()).collect();
    poles.sort_by(|x, y| x.0.total_cmp(&y.0));
    let g = |x: f64| -> (f64, f64) {
        let mut val = a / (b * x);
        let mut der = -a / (b * x * x);
        for &(eta, gamma) in &poles {
            let d = eta - x;
            val -= gamma / d;
            der -= gamma / (d * d);
        }
        (val, der)
    };
    let mut roots = Vec::with_capacity(poles.len());
    for i in 0..poles.len() {
        let (mut lo, mut hi) = (if i == 0 { 0.0 } else { poles[i - 1].0 }, poles[i].0);
        let mut x = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        for _ in 0..200 {
            let (val, der) = g(x);
            if val == 0.0 {
                break;
            }
            if val > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let newton = x - val / der;
            x = if newton > lo && newton < hi {
                newton
            } else if lo > 0.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * hi
            };
        }
        roots.push(x);
    }
    Ok(roots)
}

/// Outcome of [`select_k`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub epsilon: f64,
    /// false when the tolerance was not met by k_max.
    pub reached: bool,
}

/// Smallest k ≤ k_max with ε_k ≤ tol, using τ = τ_opt for the operator.
pub fn select_k(op: &DiscreteLaplacian, beta: f64, tol: f64, k_max: usize) -> Result<KSelection> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if k_max == 0 {
        return Err(Error::Domain("k_max must be at least 1".into()));
    }
    let (lmin, lmax) = op.spectral_bounds();
    let tau = tau_opt(lmin, lmax)?;
    let mut last = f64::NAN;
    for k in 1..=k_max {
        let eps = epsilon_k(&build_coeffs(k, beta, tau)?, lmin, beta);
        if eps <= tol {
            return Ok(KSelection {
                k,
                epsilon: eps,
                reached: true,
            });
        }
        last = eps;
    }
    log::warn!("select_k: tolerance {tol:e} not reached with k = {k_max} (eps = {last:e})");
    Ok(KSelection {
        k: k_max,
        epsilon: last,
        reached: false,
    })
}

/// R_k(A) v = A Σ γ_j x_j with (η_j I + A) x_j = v.
///
/// The k shifted solves run in parallel; the sum is taken in index order.
pub fn apply_rational<O: SpdOperator + ?Sized>(
    r: &RationalCoeffs,
    op: &O,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_len(op.dim(), v.len())?;
    let solves: Vec<Vec<f64>> = r
        .eta
        .par_iter()
        .map(|&eta| op.shifted_solve(eta, v))
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; v.len()];
    for (g, x) in r.gamma.iter().zip(&solves) {
        for (a, xi) in acc.iter_mut().zip(x) {
            *a += g * xi;
        }
    }
    op.apply(&acc)
}

/// How a [`FactorizedPower`] realizes R_k(L).
#[derive(Debug, Clone)]
pub enum PowerForm {
    /// Banded M = Q_k(L), K = L P_{k-1}(L), with the LU factors of M.
    Banded {
        mass: BandedMatrix,
        stiff: BandedMatrix,
        mass_lu: BandedLu,
    },
    /// Shifted solves only; used when the band would fill the matrix.
    PartialFraction,
}

/// R_k(L) = M⁻¹K for a discrete Laplacian.
///
/// Each factor (η_j I + L) is divided by (η_j + τ); the common scaling of M
/// and K leaves M⁻¹K unchanged and keeps the products of many factors in range.
#[derive(Debug, Clone)]
pub struct FactorizedPower {
    form: PowerForm,
    coeffs: RationalCoeffs,
    source: DiscreteLaplacian,
}

/// Builds M = Π_j F_j and K = L Σ_j γ_j/(η_j + τ) Π_{i≠j} F_i with
/// F_j = (η_j I + L)/(η_j + τ), using prefix and suffix products of the factors.
pub fn assemble_mk(r: &RationalCoeffs, op: &DiscreteLaplacian) -> Result<FactorizedPower> {
    let base = op.banded();
    let n = base.n();
    let (bw, _) = base.bandwidths();
    if r.k * bw >= n {
        log::warn!(
            "assemble_mk: bandwidth {} >= dimension {n}; using partial fractions",
            r.k * bw
        );
        return Ok(FactorizedPower {
            form: PowerForm::PartialFraction,
            coeffs: r.clone(),
            source: op.clone(),
        });
    }
    let factors: Vec<BandedMatrix> = r
        .eta
        .iter()
        .map(|&eta| base.shifted(eta).scaled(1.0 / (eta + r.tau)))
        .collect();
    let k = r.k;
    let mut prefix = Vec::with_capacity(k + 1);
    prefix.push(BandedMatrix::identity(n));
    for f in &factors {
        let next = prefix.last().expect("non-empty").multiply(f)?;
        prefix.push(next);
    }
    let mut suffix = vec![BandedMatrix::identity(n); k + 1];
    for j in (0..k).rev() {
        suffix[j] = factors[j].multiply(&suffix[j + 1])?;
    }
    let mut numerator = BandedMatrix::zeros(n, 0, 0);
    for j in 0..k {
        let others = prefix[j].multiply(&suffix[j + 1])?;
        numerator = numerator.add_scaled(&others, r.gamma[j] / (r.eta[j] + r.tau))?;
    }
    let stiff = base.multiply(&numerator)?;
    let mass = prefix.pop().expect("k + 1 prefixes");
    let mass_lu = mass.lu()?;
    Ok(FactorizedPower {
        form: PowerForm::Banded {
            mass,
            stiff,
            mass_lu,
        },
        coeffs: r.clone(),
        source: op.clone(),
    })
}

impl FactorizedPower {
    pub fn form(&self) -> &PowerForm {
        &self.form
    }

    pub fn coeffs(&self) -> &RationalCoeffs {
        &self.coeffs
    }

    pub fn source(&self) -> &DiscreteLaplacian {
        &self.source
    }

    pub fn is_banded(&self) -> bool {
        matches!(self.form, PowerForm::Banded { .. })
    }

    /// M, when assembled.
    pub fn mass(&self) -> Option<&BandedMatrix> {
        match &self.form {
            PowerForm::Banded { mass, .. } => Some(mass),
            PowerForm::PartialFraction => None,
        }
    }

    /// K, when assembled.
    pub fn stiff(&self) -> Option<&BandedMatrix> {
        match &self.form {
            PowerForm::Banded { stiff, .. } => Some(stiff),
            PowerForm::PartialFraction => None,
        }
    }

    /// R_k(L) v.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.form {
            PowerForm::Banded { stiff, mass_lu, .. } => {
                let mut x = stiff.matvec(v)?;
                mass_lu.solve_in_place(&mut x);
                Ok(x)
            }
            PowerForm::PartialFraction => apply_rational(&self.coeffs, &self.source, v),
        }
    }
}

//! Gauss-Jacobi quadrature for the weight (1 - t)^a (1 + t)^b on [-1, 1].
//!
//! Nodes and weights come from the Golub-Welsch construction: the monic
//! Jacobi three-term recurrence defines a symmetric tridiagonal matrix whose
//! eigenvalues are the nodes, and whose normalized eigenvectors give the
//! weights through their first components. The eigenproblem is solved with
//! implicit-shift QL, carrying only the first row of the eigenvector matrix.

use crate::error::{Error, Result};
use crate::special::ln_beta;

/// Relative off-diagonal size below which a QL sweep deflates.
const QL_TOL: f64 = 1e-14;
/// Sweep budget per eigenvalue.
const QL_MAX_SWEEPS: usize = 50;

/// Exponents of the Jacobi weight (1 - t)^a (1 + t)^b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiWeight {
    a: f64,
    b: f64,
}

impl JacobiWeight {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a > -1.0 && b > -1.0) {
            return Err(Error::Domain(format!(
                "Jacobi exponents must exceed -1, got a = {a}, b = {b}"
            )));
        }
        Ok(Self { a, b })
    }

    /// The weight (1 - t)^(β-1) (1 + t)^(-β) used by the fractional power
    /// integral, for 0 < β < 1.
    pub fn fractional(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Domain(format!(
                "fractional exponent must lie in (0, 1), got {beta}"
            )));
        }
        Self::new(beta - 1.0, -beta)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn eval(&self, t: f64) -> f64 {
        (1.0 - t).powf(self.a) * (1.0 + t).powf(self.b)
    }
}

/// Nodes (increasing) and positive weights of a k-point Gaussian rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Σ w_j g(ϑ_j).
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * g(t))
            .sum()
    }

    /// Plain-text table, one `node weight` pair per line, 17 significant digits.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            out.push_str(&format!("{t:.16e} {w:.16e}\n"));
        }
        out
    }
}

/// μ₀ = ∫ (1 - t)^a (1 + t)^b dt = 2^(a+b+1) B(a+1, b+1).
pub fn zeroth_moment(weight: &JacobiWeight) -> f64 {
    let (a, b) = (weight.a, weight.b);
    ((a + b + 1.0) * std::f64::consts::LN_2 + ln_beta(a + 1.0, b + 1.0)).exp()
}

/// Recurrence coefficients (α_i, β_i), i = 0..k-1, of the monic Jacobi
/// polynomials: p_{i+1}(t) = (t - α_i) p_i(t) - β_i p_{i-1}(t), with β₀ = μ₀.
pub fn jacobi_recurrence(weight: &JacobiWeight, k: usize) -> Result<Vec<(f64, f64)>> {
    if k == 0 {
        return Err(Error::Domain("recurrence length must be at least 1".into()));
    }
    let (a, b) = (weight.a, weight.b);
    let ab = a + b;
    let mut coeffs = Vec::with_capacity(k);
    coeffs.push(((b - a) / (ab + 2.0), zeroth_moment(weight)));
    for n in 1..k {
        let nf = n as f64;
        let s = 2.0 * nf + ab;
        let alpha = (b * b - a * a) / (s * (s + 2.0));
        let beta = if n == 1 {
            // the (n + a + b) factor cancels analytically; a + b = -1 is our main case
            4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            4.0 * nf * (nf + a) * (nf + b) * (nf + ab) / (s * s * (s + 1.0) * (s - 1.0))
        };
        coeffs.push((alpha, beta));
    }
    Ok(coeffs)
}

/// k-point Gauss-Jacobi rule by the Golub-Welsch construction.
pub fn gauss_jacobi(weight: &JacobiWeight, k: usize) -> Result<QuadratureRule> {
    let rec = jacobi_recurrence(weight, k)?;
    let mu0 = rec[0].1;
    let mut diag: Vec<f64> = rec.iter().map(|&(alpha, _)| alpha).collect();
    let mut off: Vec<f64> = rec.iter().skip(1).map(|&(_, beta)| beta.sqrt()).collect();
    off.push(0.0);
    let mut first = vec![0.0; k];
    first[0] = 1.0;
    symmetric_tridiagonal_ql(&mut diag, &mut off, &mut first)?;

    let mut pairs: Vec<(f64, f64)> = diag
        .into_iter()
        .zip(first)
        .map(|(t, z)| (t, mu0 * z * z))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (nodes, weights) = pairs.into_iter().unzip();
    Ok(QuadratureRule { nodes, weights })
}

/// Implicit-shift QL on a symmetric tridiagonal matrix.
///
/// `diag` is overwritten with the eigenvalues; `off[i]` couples rows i and
/// i + 1 (last entry ignored). `row` holds one row of the accumulated
/// rotation matrix; start it at e₀ to obtain first eigenvector components.
fn symmetric_tridiagonal_ql(diag: &mut [f64], off: &mut [f64], row: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 1 {
        return Ok(());
    }
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let scale = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= QL_TOL * scale {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > QL_MAX_SWEEPS {
                return Err(Error::NoConvergence {
                    method: "tridiagonal QL",
                    iterations: sweeps - 1,
                    residual: off[l].abs(),
                });
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let z = row[i + 1];
                row[i + 1] = s * row[i] + c * z;
                row[i] = c * row[i] - s * z;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

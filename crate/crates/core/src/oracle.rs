//! Reference results: fractional powers through the exact sine eigenbasis of
//! the discrete Laplacian, and closed-form solutions of the benchmark problems.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::operators::{line_eigenvalue, Dimension, DiscreteLaplacian};

/// Eigenpairs of a [`DiscreteLaplacian`] in closed form.
///
/// The 1-D eigenvectors are φ_s(i) = √(2/(N+1)) sin(s i π/(N+1)); 2-D
/// eigenvectors are tensor products φ_s ⊗ φ_r with eigenvalue μ_s + μ_r.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    dimension: Dimension,
    n_side: usize,
    line_values: Vec<f64>,
    // symmetric orthogonal sine matrix, sine[(s-1, i-1)] = φ_s(i)
    sine: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn new(op: &DiscreteLaplacian) -> Self {
        let n = op.n_side();
        let period = 2 * (n + 1);
        let scale = (2.0 / (n + 1) as f64).sqrt();
        let sine = DMatrix::from_fn(n, n, |s, i| {
            // reduce the argument exactly before taking the sine
            let m = ((s + 1) * (i + 1)) % period;
            scale * (m as f64 * PI / (n + 1) as f64).sin()
        });
        Self {
            dimension: op.dimension(),
            n_side: n,
            line_values: (1..=n).map(|s| line_eigenvalue(s, n)).collect(),
            sine,
        }
    }

    pub fn size(&self) -> usize {
        match self.dimension {
            Dimension::One => self.n_side,
            Dimension::Two => self.n_side * self.n_side,
        }
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut out = match self.dimension {
            Dimension::One => self.line_values.clone(),
            Dimension::Two => self
                .line_values
                .iter()
                .flat_map(|a| self.line_values.iter().map(move |b| a + b))
                .collect(),
        };
        out.sort_by(f64::total_cmp);
        out
    }

    /// Eigenvector with 1-based mode indices; `modes.1` is ignored in 1-D.
    pub fn eigenvector(&self, modes: (usize, usize)) -> Vec<f64> {
        let n = self.n_side;
        let row = |s: usize| self.sine.row(s - 1).iter().copied().collect::<Vec<_>>();
        match self.dimension {
            Dimension::One => row(modes.0),
            Dimension::Two => {
                // modes.0 varies along y (slow index), modes.1 along x
                let (py, px) = (row(modes.0), row(modes.1));
                let mut out = vec![0.0; n * n];
                for iy in 0..n {
                    for ix in 0..n {
                        out[iy * n + ix] = py[iy] * px[ix];
                    }
                }
                out
            }
        }
    }

    /// Fourier coefficients ⟨v, φ⟩ in mode order: index s-1 in 1-D,
    /// (s-1)·N + (r-1) in 2-D.
    pub fn coefficients(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), v.len())?;
        Ok(self.transform(v))
    }

    fn transform(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n_side;
        match self.dimension {
            Dimension::One => (&self.sine * DVector::from_column_slice(v))
                .as_slice()
                .to_vec(),
            Dimension::Two => {
                let grid = DMatrix::from_row_slice(n, n, v);
                let c = &self.sine * grid * &self.sine;
                // back to row-major
                c.transpose().as_slice().to_vec()
            }
        }
    }

    /// Σ g(μ) ⟨v, φ⟩ φ over all eigenpairs.
    pub fn apply_function<G: Fn(f64) -> f64>(&self, v: &[f64], g: G) -> Result<Vec<f64>> {
        let mut c = self.coefficients(v)?;
        let n = self.n_side;
        match self.dimension {
            Dimension::One => {
                for (ci, mu) in c.iter_mut().zip(&self.line_values) {
                    *ci *= g(*mu);
                }
            }
            Dimension::Two => {
                for s in 0..n {
                    for r in 0..n {
                        c[s * n + r] *= g(self.line_values[s] + self.line_values[r]);
                    }
                }
            }
        }
        // the sine matrix is its own inverse
        Ok(self.transform(&c))
    }
}

fn check_power(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "power must lie in (0, 1], got {beta}"
        )))
    }
}

/// L^β v through the exact eigenbasis (matrix transfer, without h and κ scaling).
pub fn dense_frac_power_apply(op: &DiscreteLaplacian, beta: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_power(beta)?;
    SpectralDecomposition::new(op).apply_function(v, |mu| mu.powf(beta))
}

/// The dense matrix L^β.
pub fn dense_frac_power_matrix(op: &DiscreteLaplacian, beta: f64) -> Result<DMatrix<f64>> {
    check_power(beta)?;
    let spec = SpectralDecomposition::new(op);
    match op.dimension() {
        Dimension::One => {
            let d = DMatrix::from_diagonal(&DVector::from_iterator(
                spec.n_side,
                spec.line_values.iter().map(|mu| mu.powf(beta)),
            ));
            Ok(&spec.sine * d * &spec.sine)
        }
        Dimension::Two => {
            let size = spec.size();
            let mut out = DMatrix::zeros(size, size);
            let mut unit = vec![0.0; size];
            for j in 0..size {
                unit[j] = 1.0;
                let col = spec.apply_function(&unit, |mu| mu.powf(beta))?;
                out.column_mut(j).copy_from_slice(&col);
                unit[j] = 0.0;
            }
            // symmetrize rounding
            Ok((&out + out.transpose()) * 0.5)
        }
    }
}

/// Default series length for [`exact_solution_example1`].
pub const EXAMPLE1_TERMS: usize = 10_000;

/// Series solution of u_t = -κ(-Δ)^(α/2) u on (0, π) with u₀ = x²(π - x):
/// Σ (8(-1)^(n+1) - 4)/n³ sin(nx) exp(-κ n^α t).
///
/// Coefficients are bounded by 12/n³, so dropping terms beyond `terms`
/// changes the value by at most 6/terms².
pub fn exact_solution_example1(x: f64, t: f64, alpha: f64, kappa: f64, terms: usize) -> f64 {
    let mut sum = 0.0;
    for n in (1..=terms).rev() {
        let nf = n as f64;
        let sign = if n % 2 == 1 { 8.0 } else { -8.0 };
        let decay = (-kappa * nf.powf(alpha) * t).exp();
        if decay == 0.0 {
            continue;
        }
        sum += (sign - 4.0) / (nf * nf * nf) * (nf * x).sin() * decay;
    }
    sum
}

/// t^α x²(1 - x)².
pub fn exact_solution_example3(x: f64, t: f64, alpha: f64) -> f64 {
    t.powf(alpha) * (x * (1.0 - x)).powi(2)
}

/// t^α sin³(πx) sin³(πy).
pub fn exact_solution_example4(x: f64, y: f64, t: f64, alpha: f64) -> f64 {
    t.powf(alpha) * ((PI * x).sin() * (PI * y).sin()).powi(3)
}

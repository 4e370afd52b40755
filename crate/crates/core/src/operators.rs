//! Finite-difference Dirichlet Laplacians and the shifted solves built on them.

use std::f64::consts::PI;
use std::io::{self, Write};

use crate::banded::{thomas_constant, BandedMatrix};
use crate::error::{check_len, Error, Result};

/// Relative residual target for the 2-D conjugate gradient solves.
pub const CG_REL_TOL: f64 = 1e-12;

/// A symmetric positive definite operator with known spectral bounds.
pub trait SpdOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// Solves (eta I + A) x = rhs.
    fn shifted_solve(&self, eta: f64, rhs: &[f64]) -> Result<Vec<f64>>;

    /// (λ_min, λ_max).
    fn spectral_bounds(&self) -> (f64, f64);
}

/// value · I of size n; useful as a test operator with a single eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledIdentity {
    pub n: usize,
    pub value: f64,
}

impl SpdOperator for ScaledIdentity {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, v.len())?;
        Ok(v.iter().map(|x| self.value * x).collect())
    }

    fn shifted_solve(&self, eta: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, rhs.len())?;
        check_shift(eta)?;
        let d = eta + self.value;
        Ok(rhs.iter().map(|x| x / d).collect())
    }

    fn spectral_bounds(&self) -> (f64, f64) {
        (self.value, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    One,
    Two,
}

impl Dimension {
    pub fn as_usize(self) -> usize {
        match self {
            Dimension::One => 1,
            Dimension::Two => 2,
        }
    }

    pub fn from_usize(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Dimension::One),
            2 => Ok(Dimension::Two),
            _ => Err(Error::Domain(format!("dimension must be 1 or 2, got {d}"))),
        }
    }
}

/// Eigenvalue s (1-based) of tridiag(-1, 2, -1) of size n: 2 - 2cos(sπ/(n+1)).
pub fn line_eigenvalue(s: usize, n: usize) -> f64 {
    let half = s as f64 * PI / (2.0 * (n + 1) as f64);
    4.0 * half.sin().powi(2)
}

/// Dirichlet Laplacian on a uniform mesh, scaled so that L/h² ≈ -Δ.
///
/// In 1-D the operator is tridiag(-1, 2, -1) of size N. In 2-D it is the
/// 5-point stencil of size N², held as I⊗T + T⊗I and never stored densely;
/// unknowns are ordered row by row, index = iy·N + ix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaplacian {
    dimension: Dimension,
    n_side: usize,
    h: f64,
    lambda_min: f64,
    lambda_max: f64,
    line: BandedMatrix,
}

impl DiscreteLaplacian {
    /// tridiag(-1, 2, -1) on (0, domain_length) with N interior points.
    pub fn one_dimensional(n: usize, domain_length: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 interior points, got {n}"
            )));
        }
        if !(domain_length > 0.0 && domain_length.is_finite()) {
            return Err(Error::Domain(format!(
                "domain length must be positive, got {domain_length}"
            )));
        }
        Ok(Self {
            dimension: Dimension::One,
            n_side: n,
            h: domain_length / (n + 1) as f64,
            lambda_min: line_eigenvalue(1, n),
            lambda_max: line_eigenvalue(n, n),
            line: BandedMatrix::tridiagonal(n, -1.0, 2.0, -1.0),
        })
    }

    /// 5-point Laplacian tridiag(-I, B, -I) on the unit square, N points per side.
    pub fn two_dimensional(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 interior points, got {n}"
            )));
        }
        Ok(Self {
            dimension: Dimension::Two,
            n_side: n,
            h: 1.0 / (n + 1) as f64,
            lambda_min: 2.0 * line_eigenvalue(1, n),
            lambda_max: 2.0 * line_eigenvalue(n, n),
            line: BandedMatrix::tridiagonal(n, -1.0, 2.0, -1.0),
        })
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    /// Interior points per direction.
    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn size(&self) -> usize {
        match self.dimension {
            Dimension::One => self.n_side,
            Dimension::Two => self.n_side * self.n_side,
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Spectral condition number λ_max / λ_min.
    pub fn condition_number(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    /// The 1-D factor tridiag(-1, 2, -1) of size N.
    pub fn line_operator(&self) -> &BandedMatrix {
        &self.line
    }

    /// All eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.n_side;
        let line: Vec<f64> = (1..=n).map(|s| line_eigenvalue(s, n)).collect();
        let mut out = match self.dimension {
            Dimension::One => line,
            Dimension::Two => line
                .iter()
                .flat_map(|a| line.iter().map(move |b| a + b))
                .collect(),
        };
        out.sort_by(f64::total_cmp);
        out
    }

    /// Banded form; bandwidth 1 in 1-D and N in 2-D.
    pub fn banded(&self) -> BandedMatrix {
        match self.dimension {
            Dimension::One => self.line.clone(),
            Dimension::Two => {
                let n = self.n_side;
                let size = n * n;
                let mut m = BandedMatrix::zeros(size, n, n);
                for k in 0..size {
                    m.set(k, k, 4.0).expect("diagonal");
                    if k % n != 0 {
                        m.set(k, k - 1, -1.0).expect("in band");
                        m.set(k - 1, k, -1.0).expect("in band");
                    }
                    if k >= n {
                        m.set(k, k - n, -1.0).expect("in band");
                        m.set(k - n, k, -1.0).expect("in band");
                    }
                }
                m
            }
        }
    }

    pub fn write_matrix_market<W: Write>(&self, w: W) -> io::Result<()> {
        self.banded().write_matrix_market(w)
    }

    fn apply_2d(&self, v: &[f64], shift: f64) -> Vec<f64> {
        let n = self.n_side;
        let mut out = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let k = iy * n + ix;
                let mut acc = (4.0 + shift) * v[k];
                if ix > 0 {
                    acc -= v[k - 1];
                }
                if ix + 1 < n {
                    acc -= v[k + 1];
                }
                if iy > 0 {
                    acc -= v[k - n];
                }
                if iy + 1 < n {
                    acc -= v[k + n];
                }
                out[k] = acc;
            }
        }
        out
    }

    /// IC(0) pivots of eta I + L for the 5-point stencil.
    fn incomplete_cholesky_2d(&self, eta: f64) -> Vec<f64> {
        let n = self.n_side;
        let mut d = vec![0.0; n * n];
        for k in 0..n * n {
            let mut p = 4.0 + eta;
            if k % n != 0 {
                p -= 1.0 / d[k - 1];
            }
            if k >= n {
                p -= 1.0 / d[k - n];
            }
            d[k] = p;
        }
        d
    }

    fn apply_ic_2d(&self, pivots: &[f64], r: &[f64]) -> Vec<f64> {
        let n = self.n_side;
        let size = n * n;
        let mut y = vec![0.0; size];
        for k in 0..size {
            let mut acc = r[k];
            if k % n != 0 {
                acc += y[k - 1];
            }
            if k >= n {
                acc += y[k - n];
            }
            y[k] = acc / pivots[k];
        }
        for k in (0..size).rev() {
            let mut acc = 0.0;
            if (k + 1) % n != 0 {
                acc += y[k + 1];
            }
            if k + n < size {
                acc += y[k + n];
            }
            y[k] += acc / pivots[k];
        }
        y
    }
}

impl SpdOperator for DiscreteLaplacian {
    fn dim(&self) -> usize {
        self.size()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), v.len())?;
        match self.dimension {
            Dimension::One => self.line.matvec(v),
            Dimension::Two => Ok(self.apply_2d(v, 0.0)),
        }
    }

    fn shifted_solve(&self, eta: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), rhs.len())?;
        check_shift(eta)?;
        match self.dimension {
            Dimension::One => thomas_constant(-1.0, 2.0 + eta, -1.0, rhs),
            Dimension::Two => {
                let pivots = self.incomplete_cholesky_2d(eta);
                let (x, _) = conjugate_gradient(
                    |v| self.apply_2d(v, eta),
                    |r| self.apply_ic_2d(&pivots, r),
                    rhs,
                    CG_REL_TOL,
                    10 * self.n_side,
                )?;
                Ok(x)
            }
        }
    }

    fn spectral_bounds(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }
}

fn check_shift(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("shift must be positive, got {eta}")))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradient for an SPD operator.
///
/// Stops when ‖r‖ ≤ rel_tol ‖rhs‖. Returns the solution and the iteration count.
pub fn conjugate_gradient<A, P>(
    apply: A,
    precondition: P,
    rhs: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)>
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let target = rel_tol * bnorm;
    let mut r = rhs.to_vec();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for iter in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Breakdown {
                row: iter,
                pivot: pap,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rnorm = norm2(&r);
        if rnorm <= target {
            return Ok((x, iter));
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        let ratio = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + ratio * p[i];
        }
    }
    let residual = norm2(&r) / bnorm;
    Err(Error::NoConvergence {
        method: "preconditioned conjugate gradient",
        iterations: max_iter,
        residual,
    })
}

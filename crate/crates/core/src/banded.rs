//! Banded matrices in diagonal-major storage and a pivot-free banded LU.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// Square matrix whose nonzeros lie within `lower` subdiagonals and `upper`
/// superdiagonals. One vector per diagonal; diagonal d (entries (i, i + d))
/// has length n - |d| and is indexed by min(i, i + d).
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    diags: Vec<Vec<f64>>,
}

impl BandedMatrix {
    /// All-zero matrix; bandwidths are clamped to n - 1.
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let lower = lower.min(n.saturating_sub(1));
        let upper = upper.min(n.saturating_sub(1));
        let diags = (0..=lower + upper)
            .map(|slot| {
                let d = slot as isize - lower as isize;
                vec![0.0; n - d.unsigned_abs()]
            })
            .collect();
        Self {
            n,
            lower,
            upper,
            diags,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0);
        m.diags[0].fill(1.0);
        m
    }

    /// Constant-coefficient tridiagonal matrix tridiag(sub, diag, sup).
    pub fn tridiagonal(n: usize, sub: f64, diag: f64, sup: f64) -> Self {
        let mut m = Self::zeros(n, 1, 1);
        if n > 1 {
            m.diags[0].fill(sub);
            m.diags[2].fill(sup);
        }
        m.diags[m.lower].fill(diag);
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// (lower, upper) bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    /// Entries of diagonal `d`, or `None` outside the band.
    pub fn diagonal(&self, d: isize) -> Option<&[f64]> {
        self.slot(d).map(|s| self.diags[s].as_slice())
    }

    fn slot(&self, d: isize) -> Option<usize> {
        if d < -(self.lower as isize) || d > self.upper as isize {
            None
        } else {
            Some((d + self.lower as isize) as usize)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let d = j as isize - i as isize;
        match self.slot(d) {
            Some(s) => self.diags[s][i.min(j)],
            None => 0.0,
        }
    }

    /// Sets an entry inside the band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        let d = j as isize - i as isize;
        let s = self
            .slot(d)
            .ok_or_else(|| Error::Domain(format!("entry ({i}, {j}) lies outside the band")))?;
        self.diags[s][i.min(j)] = value;
        Ok(())
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, v.len())?;
        let mut out = vec![0.0; self.n];
        for (slot, diag) in self.diags.iter().enumerate() {
            let d = slot as isize - self.lower as isize;
            let (row0, col0) = if d >= 0 {
                (0, d as usize)
            } else {
                ((-d) as usize, 0)
            };
            for (t, &a) in diag.iter().enumerate() {
                out[row0 + t] += a * v[col0 + t];
            }
        }
        Ok(out)
    }

    /// Exact banded product; bandwidths add (clamped to n - 1).
    pub fn multiply(&self, other: &BandedMatrix) -> Result<BandedMatrix> {
        check_len(self.n, other.n)?;
        let n = self.n;
        let mut out = BandedMatrix::zeros(n, self.lower + other.lower, self.upper + other.upper);
        let nonzero: Vec<bool> = other
            .diags
            .iter()
            .map(|d| d.iter().any(|&x| x != 0.0))
            .collect();
        for (sa, da) in self.diags.iter().enumerate() {
            if !da.iter().any(|&x| x != 0.0) {
                continue;
            }
            let p = sa as isize - self.lower as isize;
            for (sb, db) in other.diags.iter().enumerate() {
                if !nonzero[sb] {
                    continue;
                }
                let q = sb as isize - other.lower as isize;
                // row i ranges over rows where (i, i+p) and (i+p, i+p+q) both exist
                let lo = 0isize.max(-p).max(-p - q);
                let hi = (n as isize).min(n as isize - p).min(n as isize - p - q);
                if lo >= hi {
                    continue;
                }
                let target = out
                    .slot(p + q)
                    .expect("product diagonal lies inside the summed band");
                for i in lo..hi {
                    let a = da[(i.min(i + p)) as usize];
                    let b = db[((i + p).min(i + p + q)) as usize];
                    out.diags[target][(i.min(i + p + q)) as usize] += a * b;
                }
            }
        }
        Ok(out)
    }

    /// self + scale * other.
    pub fn add_scaled(&self, other: &BandedMatrix, scale: f64) -> Result<BandedMatrix> {
        check_len(self.n, other.n)?;
        let mut out = BandedMatrix::zeros(
            self.n,
            self.lower.max(other.lower),
            self.upper.max(other.upper),
        );
        for src in [(self, 1.0), (other, scale)] {
            let (m, s) = src;
            for (slot, diag) in m.diags.iter().enumerate() {
                let d = slot as isize - m.lower as isize;
                let target = out.slot(d).expect("band covers both operands");
                for (o, &x) in out.diags[target].iter_mut().zip(diag) {
                    *o += s * x;
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> BandedMatrix {
        let mut out = self.clone();
        for diag in &mut out.diags {
            diag.iter_mut().for_each(|x| *x *= s);
        }
        out
    }

    /// self + eta I.
    pub fn shifted(&self, eta: f64) -> BandedMatrix {
        let mut out = self.clone();
        out.diags[self.lower].iter_mut().for_each(|x| *x += eta);
        out
    }

    /// self · diag(d).
    pub fn scale_columns(&self, d: &[f64]) -> Result<BandedMatrix> {
        check_len(self.n, d.len())?;
        let mut out = self.clone();
        for (slot, diag) in out.diags.iter_mut().enumerate() {
            let off = slot as isize - self.lower as isize;
            let col0 = if off >= 0 { off as usize } else { 0 };
            for (t, x) in diag.iter_mut().enumerate() {
                *x *= d[col0 + t];
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> BandedMatrix {
        let mut diags = self.diags.clone();
        diags.reverse();
        BandedMatrix {
            n: self.n,
            lower: self.upper,
            upper: self.lower,
            diags,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.transpose() == *self
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Pivot-free banded LU; intended for symmetric positive definite or
    /// diagonally dominant matrices.
    pub fn lu(&self) -> Result<BandedLu> {
        BandedLu::factor(self)
    }

    /// Matrix Market coordinate format with 17 significant digits.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut entries = Vec::new();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.lower);
            let hi = (i + self.upper).min(self.n - 1);
            for j in lo..=hi {
                let v = self.get(i, j);
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, entries.len())?;
        for (i, j, v) in entries {
            writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// LU factors of a banded matrix, stored row-major inside the band.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    // row i holds columns i - lower ..= i + upper
    rows: Vec<f64>,
}

impl BandedLu {
    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.lower - i)
    }

    fn factor(a: &BandedMatrix) -> Result<Self> {
        let (n, lower, upper) = (a.n, a.lower, a.upper);
        let mut lu = BandedLu {
            n,
            lower,
            upper,
            rows: vec![0.0; n * (lower + upper + 1)],
        };
        for i in 0..n {
            let lo = i.saturating_sub(lower);
            let hi = (i + upper).min(n - 1);
            for j in lo..=hi {
                let k = lu.idx(i, j);
                lu.rows[k] = a.get(i, j);
            }
        }
        let scale = lu.rows.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let w = lu.width();
        for k in 0..n {
            let pivot = lu.rows[lu.idx(k, k)];
            if !pivot.is_finite() || pivot.abs() <= f64::EPSILON * scale * 1e-3 {
                return Err(Error::Breakdown { row: k, pivot });
            }
            let ihi = (k + lower).min(n - 1);
            let jhi = (k + upper).min(n - 1);
            let krow = k * w;
            for i in k + 1..=ihi {
                let ik = lu.idx(i, k);
                let l = lu.rows[ik] / pivot;
                lu.rows[ik] = l;
                if l == 0.0 {
                    continue;
                }
                let irow = i * w;
                for j in k + 1..=jhi {
                    let kj = krow + (j + lower - k);
                    let ij = irow + (j + lower - i);
                    lu.rows[ij] -= l * lu.rows[kj];
                }
            }
        }
        Ok(lu)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, rhs.len())?;
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.lower);
            let mut acc = x[i];
            for (j, xj) in x.iter().enumerate().take(i).skip(lo) {
                acc -= self.rows[self.idx(i, j)] * xj;
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + self.upper).min(n - 1);
            let mut acc = x[i];
            for j in i + 1..=hi {
                acc -= self.rows[self.idx(i, j)] * x[j];
            }
            x[i] = acc / self.rows[self.idx(i, i)];
        }
    }
}

/// Pivot-free Thomas solve of tridiag(sub, diag, sup) x = rhs with constant
/// off-diagonals.
pub fn thomas_constant(sub: f64, diag: f64, sup: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut x = rhs.to_vec();
    let mut denom = diag;
    for i in 0..n {
        if i > 0 {
            denom = diag - sub * c[i - 1];
            x[i] -= sub * x[i - 1];
        }
        if !denom.is_finite() || denom == 0.0 {
            return Err(Error::Breakdown {
                row: i,
                pivot: denom,
            });
        }
        c[i] = sup / denom;
        x[i] /= denom;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

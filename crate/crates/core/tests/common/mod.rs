//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use fraclap::operators::DiscreteLaplacian;

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Moments ∫ t^n w(t) dt / ∫ w(t) dt, n = 0..count, for the weight
/// (1-t)^(beta-1)(1+t)^(-beta), in exact rational arithmetic on the double
/// value of beta.
///
/// Integrating the derivative of (1-t)^(a+1)(1+t)^(b+1) t^n over [-1, 1]
/// gives (n + a + b + 2) m_{n+1} = (b - a) m_n + n m_{n-1}.
pub fn normalized_moments(beta: f64, count: usize) -> Vec<BigRational> {
    let a = exact(beta) - BigRational::one();
    let b = -exact(beta);
    let two = BigRational::from_integer(BigInt::from(2));
    let mut m = vec![BigRational::one()];
    m.push((&b - &a) / (&a + &b + &two));
    for n in 1..count.saturating_sub(1) {
        let nr = BigRational::from_integer(BigInt::from(n));
        let next = ((&b - &a) * &m[n] + &nr * &m[n - 1]) / (&nr + &a + &b + &two);
        m.push(next);
    }
    m.truncate(count);
    m
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("representable")
}

/// Monic recurrence coefficients (alpha_i, beta_i), i = 0..k-1, from the
/// exact moments by the Chebyshev algorithm; beta_0 is normalized to 1.
pub fn chebyshev_recurrence(beta: f64, k: usize) -> Vec<(f64, f64)> {
    let m = normalized_moments(beta, 2 * k);
    let mut out = Vec::with_capacity(k);
    let mut prev2: Vec<BigRational> = vec![BigRational::zero(); 2 * k];
    let mut prev: Vec<BigRational> = m.clone();
    let mut alpha = &m[1] / &m[0];
    let mut b = m[0].clone();
    out.push((to_f64(&alpha), to_f64(&b)));
    for kk in 1..k {
        let mut cur = vec![BigRational::zero(); 2 * k];
        for l in kk..(2 * k - kk) {
            cur[l] = &prev[l + 1] - &alpha * &prev[l] - &b * &prev2[l];
        }
        let new_alpha = &cur[kk + 1] / &cur[kk] - &prev[kk] / &prev[kk - 1];
        let new_b = &cur[kk] / &prev[kk - 1];
        alpha = new_alpha;
        b = new_b;
        out.push((to_f64(&alpha), to_f64(&b)));
        prev2 = prev;
        prev = cur;
    }
    out
}

pub fn random_vector(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Dense copy of the operator's matrix.
pub fn dense(op: &DiscreteLaplacian) -> DMatrix<f64> {
    op.banded().to_dense()
}

/// Eigenvalues from a generic dense symmetric eigensolver, ascending.
pub fn dense_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Least-squares slope of log(y) against x.
pub fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y.ln() - my), b + (x - mx) * (x - mx))
    });
    num / den
}

mod common;

use common::{diff_norm, log_slope, norm, random_vector, rng};
use fraclap::operators::{DiscreteLaplacian, ScaledIdentity, SpdOperator};
use fraclap::oracle::dense_frac_power_matrix;
use fraclap::rational::{
    apply_rational, assemble_mk, build_coeffs, convergence_factor, error_bound, spectral_error,
    tau_opt, PowerForm, RationalCoeffs,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn operator(dim: usize, n: usize) -> DiscreteLaplacian {
    match dim {
        1 => DiscreteLaplacian::one_dimensional(n, 1.0).unwrap(),
        _ => DiscreteLaplacian::two_dimensional(n).unwrap(),
    }
}

fn coeffs_for(op: &DiscreteLaplacian, k: usize, beta: f64) -> RationalCoeffs {
    let (lmin, lmax) = op.spectral_bounds();
    build_coeffs(k, beta, tau_opt(lmin, lmax).unwrap()).unwrap()
}

/// Columns R_k(L) e_i via partial fractions.
fn dense_rational(r: &RationalCoeffs, op: &DiscreteLaplacian) -> DMatrix<f64> {
    let n = op.size();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = apply_rational(r, op, &e).unwrap();
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    m
}

/// Dense M⁻¹K, or the partial-fraction matrix when the band fills.
fn dense_mk(r: &RationalCoeffs, op: &DiscreteLaplacian) -> DMatrix<f64> {
    let p = assemble_mk(r, op).unwrap();
    match p.form() {
        PowerForm::Banded { mass, stiff, .. } => mass
            .to_dense()
            .lu()
            .solve(&stiff.to_dense())
            .expect("M invertible"),
        PowerForm::PartialFraction => dense_rational(r, op),
    }
}

#[test]
fn small_instance_matches_dense_oracle() {
    let mut g = rng(3);
    for (dim, n) in [(1, 10), (2, 6)] {
        let op = operator(dim, n);
        let r = coeffs_for(&op, 50, 0.9);
        let exact = dense_frac_power_matrix(&op, 0.9).unwrap();
        for _ in 0..20 {
            let v = random_vector(&mut g, op.size());
            let want = &exact * nalgebra::DVector::from_column_slice(&v);
            let got = apply_rational(&r, &op, &v).unwrap();
            let rel = diff_norm(&got, want.as_slice()) / want.norm();
            assert!(rel <= 1e-10, "dim {dim}: {rel:e}");
        }
    }
}

#[test]
fn spectral_error_is_the_matrix_two_norm() {
    for (dim, n, k, beta) in [(1, 40, 3, 0.6), (1, 25, 7, 0.9), (2, 6, 4, 0.75)] {
        let op = operator(dim, n);
        let r = coeffs_for(&op, k, beta);
        let diff = dense_rational(&r, &op) - dense_frac_power_matrix(&op, beta).unwrap();
        let two_norm = diff.singular_values().max();
        let scalar = spectral_error(&r, &op.eigenvalues());
        let scale = op.lambda_max().powf(beta);
        assert!(
            (two_norm - scalar).abs() <= 1e-12 * scale,
            "{two_norm:e} vs {scalar:e}"
        );
    }
}

/// Assembled M⁻¹K and partial fractions agree to 1e-10‖v‖ while M is well
/// conditioned; beyond that the gap follows cond(M)·eps, which is intrinsic
/// to forming the product of k shifted factors in double precision.
#[test]
fn factorization_matches_partial_fractions() {
    let mut g = rng(5);
    let mut strict_cases = 0;
    for n in [10usize, 50, 100, 200] {
        let op = operator(1, n);
        let (lmin, lmax) = op.spectral_bounds();
        for k in 1..=8 {
            for beta in [0.55, 0.9] {
                let r = coeffs_for(&op, k, beta);
                let cond: f64 = r.eta().iter().map(|e| (e + lmax) / (e + lmin)).product();
                let tol = 1e-10 + cond * f64::EPSILON;
                if cond * f64::EPSILON <= 1e-11 {
                    strict_cases += 1;
                }
                let p = assemble_mk(&r, &op).unwrap();
                for _ in 0..3 {
                    let v = random_vector(&mut g, n);
                    let a = p.apply(&v).unwrap();
                    let b = apply_rational(&r, &op, &v).unwrap();
                    assert!(
                        diff_norm(&a, &b) <= tol * norm(&v),
                        "N {n} k {k} beta {beta}: {:e} > {tol:e}",
                        diff_norm(&a, &b) / norm(&v)
                    );
                }
            }
        }
    }
    assert!(strict_cases >= 12);
}

#[test]
fn rational_form_keeps_spectrum_positive() {
    for (dim, n) in [(1, 6), (1, 9), (1, 12), (2, 3)] {
        let op = operator(dim, n);
        for k in 1..=8 {
            for beta in [0.55, 0.9] {
                let ev = dense_mk(&coeffs_for(&op, k, beta), &op).complex_eigenvalues();
                for z in ev.iter() {
                    assert!(z.re > 0.0, "dim {dim} N {n} k {k} beta {beta}: {z}");
                    assert!(z.im.abs() <= 1e-8 * z.re.max(1.0));
                }
            }
        }
    }
}

#[test]
fn geometric_decay_in_k() {
    let mut slopes = Vec::new();
    for (dim, n) in [(1, 200), (2, 20)] {
        let op = operator(dim, n);
        let ev = op.eigenvalues();
        let (lmin, lmax) = op.spectral_bounds();
        let log_factor = convergence_factor(lmax / lmin).ln();
        for alpha in [1.2, 1.5, 1.8] {
            let beta = alpha / 2.0;
            let errors: Vec<(f64, f64)> = (4..=16)
                .map(|k| (k as f64, spectral_error(&coeffs_for(&op, k, beta), &ev)))
                .collect();
            let slope = log_slope(&errors);
            assert!(
                slope <= 0.85 * log_factor,
                "dim {dim} alpha {alpha}: {slope} vs {log_factor}"
            );
            assert!(errors.windows(2).all(|w| w[1].1 < w[0].1));
            slopes.push((dim, slope));
        }
    }
    let worst_2d = slopes
        .iter()
        .filter(|s| s.0 == 2)
        .map(|s| s.1)
        .fold(f64::MIN, f64::max);
    let best_1d = slopes
        .iter()
        .filter(|s| s.0 == 1)
        .map(|s| s.1)
        .fold(f64::MAX, f64::min);
    assert!(worst_2d < best_1d);
}

#[test]
fn measured_error_stays_below_bound() {
    for (dim, n) in [(1, 50), (1, 200), (1, 400), (2, 10), (2, 20)] {
        let op = operator(dim, n);
        let ev = op.eigenvalues();
        let (lmin, lmax) = op.spectral_bounds();
        let tau = tau_opt(lmin, lmax).unwrap();
        for beta in [0.55, 0.6, 0.75, 0.9, 0.95] {
            for k in 3..=20 {
                let r = build_coeffs(k, beta, tau).unwrap();
                let measured = spectral_error(&r, &ev);
                let bound = error_bound(k, beta, lmax / lmin, lmax, tau).unwrap();
                assert!(
                    measured <= bound,
                    "dim {dim} N {n} beta {beta} k {k}: {measured:e} > {bound:e}"
                );
            }
        }
    }
}

#[test]
fn error_nearly_independent_of_exponent() {
    let op = operator(1, 200);
    let ev = op.eigenvalues();
    let errors: Vec<f64> = [1.2, 1.5, 1.8]
        .iter()
        .map(|a| spectral_error(&coeffs_for(&op, 10, a / 2.0), &ev) / op.lambda_max().powf(a / 2.0))
        .collect();
    let (lo, hi) = errors
        .iter()
        .fold((f64::MAX, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
    assert!(hi / lo < 10.0, "{errors:?}");
}

proptest! {
    #[test]
    fn identity_is_reproduced(k in 1usize..=40, beta in 0.01f64..0.99, seed in any::<u64>()) {
        let r = build_coeffs(k, beta, 1.0).unwrap();
        let op = ScaledIdentity { n: 16, value: 1.0 };
        let v = random_vector(&mut rng(seed), 16);
        let out = apply_rational(&r, &op, &v).unwrap();
        prop_assert!(diff_norm(&out, &v) <= 1e-14 * norm(&v));
    }

    #[test]
    fn scalar_approximation_is_increasing(k in 1usize..=20, beta in 0.05f64..0.95) {
        let r = build_coeffs(k, beta, 2.0).unwrap();
        let mut prev = 0.0;
        for i in 1..200 {
            let z = 0.05 * i as f64;
            let value = fraclap::rational::eval_scalar(&r, z);
            prop_assert!(value > prev);
            prev = value;
        }
    }
}

mod common;

use std::sync::Arc;

use common::{max_abs_diff, norm, rng};
use fraclap::integrator::{
    integrate, mass_norm, step, BandedSystem, DenseSystem, FactoredSystem, Forcing,
    SemiDiscreteOperator, SemiLinearSystem, StepperConfig,
};
use fraclap::operators::DiscreteLaplacian;
use fraclap::problems::{example1_with, example2, snapshot_times, Discretization, RationalForm};
use fraclap::rational::{assemble_mk, build_coeffs, eval_scalar, tau_opt};
use nalgebra::DMatrix;
use rand::Rng;

fn fixed(theta: f64, dt: f64) -> StepperConfig {
    StepperConfig {
        theta,
        dt: Some(dt),
        ..StepperConfig::default()
    }
}

fn scalar_decay(rate: f64) -> SemiLinearSystem {
    let op = DenseSystem::new(DMatrix::from_element(1, 1, rate)).unwrap();
    SemiLinearSystem::new(Arc::new(op), Forcing::Zero, vec![1.0], 0.0).unwrap()
}

fn observed_order(theta: f64) -> f64 {
    let system = scalar_decay(1.0);
    let exact = (-1.0f64).exp();
    let points: Vec<(f64, f64)> = (4..=10)
        .map(|j| {
            let dt = 0.5f64.powi(j);
            let traj = integrate(&system, 1.0, &fixed(theta, dt), &[]).unwrap();
            (dt.ln(), (traj.final_state().unwrap()[0] - exact).abs())
        })
        .collect();
    // slope of log(error) against log(dt)
    common::log_slope(&points)
}

#[test]
fn convergence_orders() {
    let trapezoid = observed_order(0.5);
    let euler = observed_order(1.0);
    assert!((trapezoid - 2.0).abs() <= 0.1, "theta 1/2: {trapezoid}");
    assert!((euler - 1.0).abs() <= 0.1, "theta 1: {euler}");
}

#[test]
fn unforced_steps_never_grow_in_mass_norm() {
    let op = DiscreteLaplacian::one_dimensional(24, 1.0).unwrap();
    let (lmin, lmax) = (op.lambda_min(), op.lambda_max());
    let r = build_coeffs(4, 0.8, tau_opt(lmin, lmax).unwrap()).unwrap();
    let banded = BandedSystem::from_power(&assemble_mk(&r, &op).unwrap(), 50.0).unwrap();
    let factored = FactoredSystem::new(r, op.clone(), 50.0).unwrap();
    let systems: Vec<Arc<dyn SemiDiscreteOperator>> = vec![Arc::new(banded), Arc::new(factored)];
    let mut g = rng(17);
    for operator in systems {
        let u0: Vec<f64> = (0..24).map(|_| g.gen_range(-1.0..1.0)).collect();
        let system =
            SemiLinearSystem::new(operator.clone(), Forcing::Zero, u0.clone(), 0.0).unwrap();
        for i in 0..1000 {
            let dt = 10f64.powf(g.gen_range(-6.0..3.0));
            let theta = if i % 2 == 0 {
                0.5
            } else {
                g.gen_range(0.5..=1.0)
            };
            let next = step(&system, &u0, 0.0, dt, &fixed(theta, dt))
                .unwrap()
                .state;
            let (before, after) = (
                mass_norm(operator.as_ref(), &u0).unwrap(),
                mass_norm(operator.as_ref(), &next).unwrap(),
            );
            assert!(
                after <= before * (1.0 + 1e-12),
                "dt {dt} theta {theta}: {after} > {before}"
            );
        }
    }
}

#[test]
fn high_order_rational_path_tracks_matrix_transfer() {
    let problem = example1_with(1.8, 0.25).unwrap();
    let disc = Discretization::new(&problem, 50).unwrap();
    let config = fixed(0.5, 1e-3);
    let times = snapshot_times(0.1, 5);
    let rational = integrate(
        &disc.rational_system(40, RationalForm::Factored).unwrap(),
        0.1,
        &config,
        &times,
    )
    .unwrap();
    let mt = integrate(
        &disc.matrix_transfer_system().unwrap(),
        0.1,
        &config,
        &times,
    )
    .unwrap();
    let diff = max_abs_diff(rational.final_state().unwrap(), mt.final_state().unwrap());
    assert!(diff <= 1e-8, "{diff:e}");
}

/// u0 = sin 4x is a grid eigenvector, so both paths only rescale it; the
/// trapezoidal factors differ by at most t·c·|λ^β - R_k(λ)| after time t.
#[test]
fn example2_difference_within_rational_error() {
    let problem = example2();
    let disc = Discretization::new(&problem, 500).unwrap();
    let config = fixed(0.5, 1e-3);
    let times = snapshot_times(0.3, 6);
    let rational = integrate(
        &disc.rational_system(3, RationalForm::Factored).unwrap(),
        0.3,
        &config,
        &times,
    )
    .unwrap();
    let mt = integrate(
        &disc.matrix_transfer_system().unwrap(),
        0.3,
        &config,
        &times,
    )
    .unwrap();
    let u0 = disc.initial_vector();
    let c = disc.stiffness_scale();
    let op = disc.operator();
    let r = disc.coeffs(3).unwrap();
    let lambda4 = fraclap::operators::line_eigenvalue(4, 500);
    let pointwise = (lambda4.powf(disc.beta()) - eval_scalar(&r, lambda4)).abs();
    let spectral = fraclap::rational::spectral_error(&r, &op.eigenvalues());
    let u0_max = u0.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for ((t, a), b) in rational.times.iter().zip(&rational.states).zip(&mt.states) {
        let diff = max_abs_diff(a, b);
        assert!(
            diff <= t * c * pointwise * u0_max * (1.0 + 1e-9) + 1e-13,
            "t {t}: {diff:e}"
        );
        assert!(diff <= t * c * spectral * norm(&u0));
    }
}

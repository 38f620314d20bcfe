mod common;

use nalgebra::DMatrix;
use replay_guard::estimator::{kalman_lmi_design, kalman_riccati, KalmanOptions, WatermarkTreatment};
use replay_guard::h2syn::{solve_h2, SynthesisOptions};
use replay_guard::linalg;
use replay_guard::model::{DynamicController, PlantModel, WatermarkSpec};

use common::random_plants::random_case;

fn scalar(a: f64) -> (PlantModel, DynamicController, WatermarkSpec) {
    let one = || DMatrix::from_element(1, 1, 1.0);
    let plant = PlantModel::new(DMatrix::from_element(1, 1, a), one(), one(), one(), one(), one()).unwrap();
    let ctrl = DynamicController::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, -0.5), one()).unwrap();
    (plant, ctrl, WatermarkSpec { u: DMatrix::zeros(1, 1) })
}

/// Stationary prediction variance of a scalar plant with c = W = V = 1:
/// the positive root of P² − a²P − 1 = 0.
fn scalar_oracle(a: f64) -> f64 {
    (a * a + (a.powi(4) + 4.0).sqrt()) / 2.0
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn scalar_variances_match_closed_form() {
    for a in [1.0, 0.9] {
        let (plant, ctrl, wm) = scalar(a);
        let expected = scalar_oracle(a);
        let ric = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
        assert!((ric.plant_covariance[(0, 0)] - expected).abs() < 1e-6, "Riccati, a = {a}");
        let lmi = kalman_lmi_design(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
        assert!(rel(lmi.plant_covariance[(0, 0)], expected) < 1e-3, "LMI, a = {a}");
    }
    // a = 1 gives the golden ratio
    assert!((scalar_oracle(1.0) - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
}

#[test]
fn lmi_matches_riccati_on_three_tank() {
    let plant = common::three_tank::plant();
    let wm = common::three_tank::watermark(0.1);
    let ctrl = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap().controller;
    for treatment in [WatermarkTreatment::Known, WatermarkTreatment::Unknown] {
        let opts = KalmanOptions { treatment, ..KalmanOptions::default() };
        let ric = kalman_riccati(&plant, &ctrl, &wm, &opts).unwrap();
        let lmi = kalman_lmi_design(&plant, &ctrl, &wm, &opts).unwrap();
        let r = rel(lmi.covariance.trace(), ric.covariance.trace());
        assert!(r < 0.01, "{treatment:?}: relative difference {r}");
    }
}

#[test]
fn lmi_matches_riccati_on_random_plants() {
    for seed in 0..5 {
        let (plant, ctrl, wm) = random_case(seed);
        let ric = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
        let lmi = kalman_lmi_design(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
        let r = rel(lmi.covariance.trace(), ric.covariance.trace());
        assert!(r < 0.01, "seed {seed}: relative difference {r}");
    }
}

#[test]
fn riccati_covariance_is_a_fixed_point() {
    // with a known watermark the plant block satisfies the plant-only
    // predictor Riccati equation, up to the O(ε) regularization
    let (plant, ctrl, wm) = random_case(7);
    let kd = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
    let p = &kd.plant_covariance;
    let (a, c) = (&plant.a, &plant.c);
    let q = &plant.d * &plant.w * plant.d.transpose();
    let s_inv = linalg::inv_pd(&(c * p * c.transpose() + &plant.v)).unwrap();
    let apc = a * p * c.transpose();
    let next = a * p * a.transpose() + q - &apc * s_inv * apc.transpose();
    let r = linalg::max_abs(&(next - p)) / linalg::max_abs(p);
    assert!(r < 1e-6, "residual {r}");
}

#[test]
fn epsilon_has_negligible_effect() {
    let plant = common::three_tank::plant();
    let wm = common::three_tank::watermark(0.1);
    let ctrl = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap().controller;
    let base = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions { epsilon: Some(1e-10), ..KalmanOptions::default() })
        .unwrap();
    for eps in [1e-9, 1e-8] {
        let kd = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions { epsilon: Some(eps), ..KalmanOptions::default() })
            .unwrap();
        let r = linalg::max_abs(&(&kd.innovation_cov - &base.innovation_cov)) / linalg::max_abs(&base.innovation_cov);
        assert!(r < 1e-3, "ε = {eps}: innovation covariance moved by {r}");
    }
}

#[test]
fn large_measurement_noise_switches_the_filter_off() {
    let (mut plant, ctrl, wm) = random_case(3);
    let small = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
    plant.v = &plant.v * 1e8;
    let big = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
    assert!(linalg::max_abs(&big.filter_gain) < 1e-4 * linalg::max_abs(&small.filter_gain));
}

#[test]
fn unknown_watermark_inflates_the_innovation() {
    let plant = common::three_tank::plant();
    let wm = common::three_tank::watermark(0.1);
    let ctrl = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap().controller;
    let known = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
    let unknown = kalman_riccati(
        &plant,
        &ctrl,
        &wm,
        &KalmanOptions { treatment: WatermarkTreatment::Unknown, ..KalmanOptions::default() },
    )
    .unwrap();
    let diff = &unknown.innovation_cov - &known.innovation_cov;
    assert!(linalg::min_eigenvalue(&diff) > 0.0);
}

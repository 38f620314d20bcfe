mod common;

use nalgebra::{DMatrix, DVector};
use replay_guard::detector::{
    chi2_sf, chi2_threshold, error_dynamics, g_statistic, metric_gradient, predict_replay_statistic, Detector,
    DetectorConfig,
};
use replay_guard::estimator::{kalman_riccati, KalmanDesign, KalmanOptions};
use replay_guard::h2syn::{solve_h2, SynthesisOptions};
use replay_guard::linalg;
use replay_guard::model::{PlantModel, WatermarkSpec};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn three_tank_design(scale: f64) -> (PlantModel, WatermarkSpec, KalmanDesign) {
    let plant = common::three_tank::plant();
    let wm = common::three_tank::watermark(scale);
    let ctrl = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap().controller;
    let kd = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
    (plant, wm, kd)
}

#[test]
fn thresholds_match_reference_quantiles() {
    for dof in [1usize, 2, 3, 15, 30, 75] {
        let reference = ChiSquared::new(dof as f64).unwrap();
        for alpha in [0.1, 0.05, 0.01, 1e-4] {
            let eta = chi2_threshold(dof, alpha).unwrap();
            let expected = reference.inverse_cdf(1.0 - alpha);
            assert!((eta - expected).abs() < 1e-3 * expected.max(1.0), "dof {dof}, α {alpha}: {eta} vs {expected}");
            let sf = chi2_sf(expected, dof);
            assert!((sf - alpha).abs() < 1e-6 * alpha.max(1e-3), "survival at dof {dof}");
        }
    }
}

#[test]
fn invalid_levels_are_rejected() {
    assert!(chi2_threshold(0, 0.05).is_err());
    assert!(chi2_threshold(3, 0.0).is_err());
    assert!(chi2_threshold(3, 1.0).is_err());
}

#[test]
fn windowed_statistic_sums_quadratic_forms() {
    let inv = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
    let residues: Vec<DVector<f64>> = (0..8).map(|k| DVector::from_vec(vec![k as f64, 1.0])).collect();
    let cfg = DetectorConfig { window: 3, alpha: 0.05 };
    let mut det = Detector::new(inv.clone(), &cfg).unwrap();
    for (i, r) in residues.iter().enumerate() {
        let k = i + 1;
        let d = det.push(r);
        let lo = k.saturating_sub(3);
        let expected: f64 = residues[lo..k].iter().map(|r| (r.transpose() * &inv * r)[(0, 0)]).sum();
        assert!((d.g - expected).abs() < 1e-12);
        assert!((g_statistic(&residues, &inv, i, 3) - expected).abs() < 1e-12);
        let dof = 2 * k.min(3);
        assert!((d.eta - chi2_threshold(dof, 0.05).unwrap()).abs() < 1e-12);
        assert_eq!(d.alarm, d.g > d.eta);
    }
}

/// 𝒰 = Σ_k 𝒜ᵏ BUBᵀ (𝒜ᵀ)ᵏ summed until the terms vanish.
fn series_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sum = q.clone();
    let mut term = q.clone();
    for _ in 0..10_000 {
        term = a * &term * a.transpose();
        sum += &term;
        if linalg::max_abs(&term) < 1e-16 * linalg::max_abs(&sum) {
            break;
        }
    }
    sum
}

#[test]
fn prediction_matches_series_oracle() {
    let (plant, wm, kd) = three_tank_design(0.1);
    let cfg = DetectorConfig::default();
    let pred = predict_replay_statistic(&plant, &kd, &wm, &cfg).unwrap();
    let acal = error_dynamics(&plant, &kd);
    let ucal = series_lyapunov(&acal, &(&plant.b * &wm.u * plant.b.transpose()));
    let metric = (plant.c.transpose() * &kd.innovation_cov_inv * &plant.c * &ucal).trace();
    assert!((pred.metric - metric).abs() < 1e-9 * metric);
    let (m, t) = (plant.n_y() as f64, cfg.window as f64);
    assert!((pred.eg_attack - (m * t + 2.0 * t * metric)).abs() < 1e-9 * pred.eg_attack);
    assert_eq!(pred.eg_noattack, m * t);
}

#[test]
fn zero_watermark_gives_zero_metric() {
    let plant = common::three_tank::plant();
    let syn = solve_h2(&plant, &common::three_tank::watermark(1e-12), &SynthesisOptions::default()).unwrap();
    let wm = common::three_tank::watermark(1e-12);
    let kd = kalman_riccati(&plant, &syn.controller, &wm, &KalmanOptions::default()).unwrap();
    let pred = predict_replay_statistic(&plant, &kd, &wm, &DetectorConfig::default()).unwrap();
    assert!(pred.metric < 1e-6, "metric {}", pred.metric);
}

#[test]
fn gradient_matches_central_differences() {
    let (plant, wm, kd) = three_tank_design(0.1);
    let cfg = DetectorConfig::default();
    let g = metric_gradient(&plant, &kd).unwrap();
    let ctrl = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap().controller;
    let metric_at = |u: &DMatrix<f64>| {
        let w = WatermarkSpec::new(u.clone()).unwrap();
        // the known-input detector design does not depend on U
        let kd = kalman_riccati(&plant, &ctrl, &w, &KalmanOptions::default()).unwrap();
        predict_replay_statistic(&plant, &kd, &w, &cfg).unwrap().metric
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in i..4 {
            let mut e = DMatrix::zeros(4, 4);
            e[(i, j)] = h;
            e[(j, i)] = h;
            let fd = (metric_at(&(&wm.u + &e)) - metric_at(&(&wm.u - &e))) / (2.0 * h);
            let analytic = if i == j { g[(i, i)] } else { g[(i, j)] + g[(j, i)] };
            let err = (fd - analytic).abs() / analytic.abs().max(1e-12 * linalg::max_abs(&g));
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-3, "max relative error {worst}");
}

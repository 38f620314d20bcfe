mod common;

use nalgebra::DMatrix;
use replay_guard::linalg;
use replay_guard::sim::{false_alarm_rate, monte_carlo_detection, simulate, ReplayAttack, Scenario};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn attack(record_start: i64, duration: usize, attack_start: usize) -> Option<ReplayAttack> {
    Some(ReplayAttack { record_start, duration, attack_start, malicious_input: None })
}

#[test]
fn runs_are_deterministic_and_thread_independent() {
    let scn = common::three_tank::scenario(0.1, 60, 20, attack(5, 20, 30));
    let a = simulate(&scn, 42).unwrap();
    let b = simulate(&scn, 42).unwrap();
    assert_eq!(a.g, b.g);
    assert_eq!(a.y, b.y);
    let r1 = monte_carlo_detection(&scn, 64, 9, 1).unwrap();
    let r4 = monte_carlo_detection(&scn, 64, 9, 4).unwrap();
    assert_eq!(r1.to_csv(), r4.to_csv());
    let other = simulate(&scn, 43).unwrap();
    assert_ne!(a.g, other.g);
}

#[test]
fn replay_delivers_recorded_outputs() {
    let scn = common::three_tank::scenario(0.1, 80, 0, attack(3, 25, 40));
    let tr = simulate(&scn, 7).unwrap();
    let c = &scn.plant.c;
    for k in 1..=80usize {
        let i = k - 1;
        if (40..65).contains(&k) {
            assert_eq!(tr.y_delivered[i], tr.y[k - 40 + 3 - 1], "step {k}");
        } else {
            assert_eq!(tr.y_delivered[i], tr.y[i], "step {k}");
        }
        let r = &tr.y_delivered[i] - c * &tr.x_hat[i];
        assert_eq!(tr.residues[i], r);
    }
}

#[test]
fn recording_may_start_in_the_warmup() {
    let scn = common::three_tank::scenario(0.1, 50, 200, ReplayAttack::immediate(11, 40).into());
    assert_eq!(scn.attack.as_ref().unwrap().record_start, -29);
    let tr = simulate(&scn, 1).unwrap();
    assert_eq!(tr.g.len(), 50);
    // the last recorded step (10) is replayed at step 50
    assert_eq!(tr.y_delivered[49], tr.y[9]);
}

#[test]
fn malicious_input_does_not_change_delivered_outputs() {
    let base = common::three_tank::scenario(0.1, 60, 0, attack(1, 25, 30));
    let mut hostile = base.clone();
    hostile.attack.as_mut().unwrap().malicious_input = Some(vec![1.0, -1.0, 0.5, 0.0]);
    let a = simulate(&base, 3).unwrap();
    let b = simulate(&hostile, 3).unwrap();
    // identical through the end of the replay window (step 54)
    assert_eq!(a.y_delivered[..54], b.y_delivered[..54]);
    assert_eq!(a.g[..54], b.g[..54]);
    assert_ne!(a.x[53], b.x[53]);
}

#[test]
fn invalid_attacks_are_rejected() {
    let mut scn = common::three_tank::scenario(0.1, 60, 0, attack(10, 25, 20));
    assert!(simulate(&scn, 1).is_err(), "overlapping windows");
    scn.attack = attack(1, 25, 50);
    assert!(simulate(&scn, 1).is_err(), "replay beyond the horizon");
    scn.attack = attack(-5, 10, 20);
    assert!(simulate(&scn, 1).is_err(), "recording before the warm-up");
    scn.attack =
        Some(ReplayAttack { record_start: 1, duration: 10, attack_start: 20, malicious_input: Some(vec![1.0]) });
    assert!(simulate(&scn, 1).is_err(), "malicious input dimension");
}

/// Post-transient g_k across independent attack-free runs follows χ²(mT).
#[test]
fn attack_free_statistic_is_chi_square() {
    let scn = Scenario { attack: None, ..common::three_tank::scenario(0.1, 20, 0, None) };
    let trials = 2000;
    let dof = (scn.plant.n_y() * scn.detector.window) as f64;
    let reference = ChiSquared::new(dof).unwrap();
    let bins = 10;
    let edges: Vec<f64> = (1..bins).map(|i| reference.inverse_cdf(i as f64 / bins as f64)).collect();
    let mut counts = vec![0usize; bins];
    for i in 0..trials {
        let tr = simulate(&scn, 1000 + i as u64).unwrap();
        let g = tr.g[19];
        counts[edges.iter().filter(|e| g > **e).count()] += 1;
    }
    let expected = trials as f64 / bins as f64;
    let pearson: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(pearson < critical, "goodness-of-fit statistic {pearson} ≥ {critical}");
}

#[test]
fn doubling_noise_scales_output_covariance_by_four() {
    let base = common::three_tank::scenario(0.1, 3000, 0, None);
    let mut scaled = base.clone();
    scaled.plant.w = &base.plant.w * 4.0;
    scaled.plant.v = &base.plant.v * 4.0;
    scaled.watermark.u = &base.watermark.u * 4.0;
    scaled.kalman = replay_guard::estimator::kalman_riccati(
        &scaled.plant,
        &scaled.controller,
        &scaled.watermark,
        &Default::default(),
    )
    .unwrap();
    let cov = |scn: &Scenario| {
        let tr = simulate(scn, 5).unwrap();
        let ys = &tr.y[100..];
        let n = ys.len() as f64;
        let mut acc = DMatrix::zeros(3, 3);
        for y in ys {
            acc += y * y.transpose();
        }
        acc / n
    };
    let (c1, c4) = (cov(&base), cov(&scaled));
    let err = linalg::max_abs(&(&c4 - &c1 * 4.0)) / linalg::max_abs(&(&c1 * 4.0));
    assert!(err < 0.05, "relative deviation {err}");
}

#[test]
fn zero_watermark_replay_is_undetectable() {
    let scn = common::three_tank::scenario(0.0, 50, 200, ReplayAttack::immediate(11, 40).into());
    let rep = monte_carlo_detection(&scn, 2000, 17, 4).unwrap();
    for k in 21..=50 {
        let i = k - 1;
        let se = (rep.beta_stderr[i].powi(2) + rep.alpha_stderr[i].powi(2)).sqrt();
        assert!(
            (rep.beta[i] - rep.alpha_hat[i]).abs() <= 3.0 * se.max(1e-3),
            "step {k}: β {} vs α {}",
            rep.beta[i],
            rep.alpha_hat[i]
        );
    }
}

#[test]
fn false_alarm_rate_is_calibrated() {
    let scn = Scenario { attack: None, ..common::three_tank::scenario(0.1, 100, 0, None) };
    let (rate, windows) = false_alarm_rate(&scn, 500, 3, 4).unwrap();
    assert_eq!(windows, 500 * 20);
    assert!((rate - 0.05).abs() < 0.2 * 0.05, "false-alarm rate {rate}");
}

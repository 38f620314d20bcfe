//! Compare the predicted mean of the χ² statistic under a long replay with
//! a Monte-Carlo estimate.
//!
//! Run with `cargo run --release --example replay_prediction`.

use replay_guard::detector::{predict_replay_statistic, DetectorConfig};
use replay_guard::estimator::{kalman_riccati, KalmanOptions};
use replay_guard::h2syn::{solve_h2, SynthesisOptions};
use replay_guard::model::{PlantModel, WatermarkSpec};
use replay_guard::sim::{mean_statistic, residue_covariance, ReplayAttack, Scenario};

fn main() -> replay_guard::Result<()> {
    let plant = PlantModel::three_tank();
    let wm = WatermarkSpec::scaled_identity(plant.n_u(), 0.1)?;
    let controller = solve_h2(&plant, &wm, &SynthesisOptions::default())?.controller;
    let kalman = kalman_riccati(&plant, &controller, &wm, &KalmanOptions::default())?;
    let detector = DetectorConfig::default();
    let pred = predict_replay_statistic(&plant, &kalman, &wm, &detector)?;

    // Replay steps 50..750 over 750..1450 and average the last 200 steps.
    let attack = ReplayAttack { record_start: 50, duration: 700, attack_start: 750, malicious_input: None };
    let scn = Scenario {
        plant,
        controller,
        watermark: wm,
        kalman,
        detector,
        horizon: 1450,
        warmup: 200,
        attack: Some(attack),
    };
    let (mean, se) = mean_statistic(&scn, 500, 1, 1250..1450, 0)?;
    println!("detection metric       {:.3}", pred.metric);
    println!("predicted E[g] (replay) {:.2}", pred.eg_attack);
    println!("simulated E[g] (replay) {mean:.2} ± {se:.2}");
    println!("E[g] without attack     {}", pred.eg_noattack);

    let cov = residue_covariance(&scn, 500, 1, 1250..1450, 0)?;
    let err = (&cov - &pred.residue_cov_attack).norm() / pred.residue_cov_attack.norm();
    println!("attacked residue covariance: relative Frobenius error {:.3}%", 100.0 * err);
    Ok(())
}

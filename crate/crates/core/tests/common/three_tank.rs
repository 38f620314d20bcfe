//! Three-tank benchmark fixtures.

use replay_guard::detector::DetectorConfig;
use replay_guard::estimator::{kalman_riccati, KalmanOptions};
use replay_guard::h2syn::{solve_h2, SynthesisOptions};
use replay_guard::model::{PlantModel, WatermarkSpec};
use replay_guard::sim::{ReplayAttack, Scenario};

pub fn plant() -> PlantModel {
    PlantModel::three_tank()
}

pub fn watermark(scale: f64) -> WatermarkSpec {
    WatermarkSpec::scaled_identity(4, scale).unwrap()
}

/// H2-optimal loop at watermark `scale · I` (synthesized at 1e-12 · I when
/// the watermark is zero) with the known-watermark detector.
#[allow(dead_code)]
pub fn scenario(scale: f64, horizon: usize, warmup: usize, attack: Option<ReplayAttack>) -> Scenario {
    let plant = plant();
    let wm = watermark(scale);
    let syn_wm = watermark(scale.max(1e-12));
    let ctrl = solve_h2(&plant, &syn_wm, &SynthesisOptions::default()).unwrap().controller;
    let kalman = kalman_riccati(&plant, &ctrl, &wm, &KalmanOptions::default()).unwrap();
    Scenario {
        plant,
        controller: ctrl,
        watermark: wm,
        kalman,
        detector: DetectorConfig::default(),
        horizon,
        warmup,
        attack,
    }
}

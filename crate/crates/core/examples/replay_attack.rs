//! Simulate a single replay attack and print the detector's trajectory.
//!
//! Run with `cargo run --release --example replay_attack`.

use replay_guard::detector::DetectorConfig;
use replay_guard::estimator::{kalman_riccati, KalmanOptions};
use replay_guard::h2syn::{solve_h2, SynthesisOptions};
use replay_guard::model::{PlantModel, WatermarkSpec};
use replay_guard::sim::{simulate, ReplayAttack, Scenario};

fn main() -> replay_guard::Result<()> {
    let plant = PlantModel::three_tank();
    let wm = WatermarkSpec::scaled_identity(plant.n_u(), 0.01)?;
    let controller = solve_h2(&plant, &wm, &SynthesisOptions::default())?.controller;
    let kalman = kalman_riccati(&plant, &controller, &wm, &KalmanOptions::default())?;
    // Record the 20 steps before step 11 and replay them while pushing the
    // plant with a constant malicious input.
    let mut attack = ReplayAttack::immediate(11, 20);
    attack.malicious_input = Some(vec![0.5, 0.0, 0.0, -0.5]);
    let scn = Scenario {
        plant,
        controller,
        watermark: wm,
        kalman,
        detector: DetectorConfig::default(),
        horizon: 40,
        warmup: 100,
        attack: Some(attack.clone()),
    };
    let tr = simulate(&scn, 2024)?;
    println!("step  replay  g_k           eta      alarm  |x|");
    for (i, g) in tr.g.iter().enumerate() {
        let k = i + 1;
        println!(
            "{k:>4}  {:<6}  {g:<12.3}  {:<7.3}  {:<5}  {:.4}",
            attack.is_replaying(k),
            tr.eta[i],
            tr.alarm[i],
            tr.x[i].norm()
        );
    }
    Ok(())
}

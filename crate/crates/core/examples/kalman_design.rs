//! Steady-state Kalman design by Riccati iteration and by LMI, with both
//! treatments of the watermark.
//!
//! Run with `cargo run --release --example kalman_design`.

use replay_guard::estimator::{kalman_lmi_design, kalman_riccati, KalmanOptions, WatermarkTreatment};
use replay_guard::h2syn::{solve_h2, SynthesisOptions};
use replay_guard::model::{PlantModel, WatermarkSpec};

fn main() -> replay_guard::Result<()> {
    let plant = PlantModel::three_tank();
    let wm = WatermarkSpec::scaled_identity(plant.n_u(), 0.1)?;
    let ctrl = solve_h2(&plant, &wm, &SynthesisOptions::default())?.controller;
    for treatment in [WatermarkTreatment::Known, WatermarkTreatment::Unknown] {
        let opts = KalmanOptions { treatment, ..KalmanOptions::default() };
        let ric = kalman_riccati(&plant, &ctrl, &wm, &opts)?;
        let lmi = kalman_lmi_design(&plant, &ctrl, &wm, &opts)?;
        println!("{treatment:?} watermark:");
        println!(
            "  trace of the error covariance: Riccati {:.6e}, LMI {:.6e}",
            ric.covariance.trace(),
            lmi.covariance.trace()
        );
        println!("  innovation covariance =\n{:.6e}", ric.innovation_cov);
        println!("  filter gain =\n{:.4}", ric.filter_gain);
    }
    Ok(())
}

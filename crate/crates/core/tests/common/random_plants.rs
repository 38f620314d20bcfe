//! Seeded random stable plants with a stable dynamic controller.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replay_guard::linalg;
use replay_guard::model::{DynamicController, PlantModel, WatermarkSpec};

pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let r = linalg::spectral_radius(&m);
    m * (radius / r)
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&m * m.transpose() + DMatrix::identity(n, n)) * scale
}

/// A 2- or 3-state plant (by seed parity) with two inputs and two outputs,
/// a stable controller and watermark 0.05·I.
pub fn random_case(seed: u64) -> (PlantModel, DynamicController, WatermarkSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 + (seed as usize % 2);
    let (nu, ny) = (2, 2);
    let a = random_stable(&mut rng, n, 0.9);
    let b = DMatrix::from_fn(n, nu, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(ny, n, |_, _| rng.random_range(-1.0..1.0));
    let d = DMatrix::identity(n, n);
    let w = random_spd(&mut rng, n, 0.1);
    let v = random_spd(&mut rng, ny, 0.05);
    let plant = PlantModel::new(a, b, c, d, w, v).unwrap();
    let ctrl = DynamicController::new(
        random_stable(&mut rng, n, 0.5),
        DMatrix::from_fn(n, ny, |_, _| rng.random_range(-0.3..0.3)),
        DMatrix::from_fn(nu, n, |_, _| rng.random_range(-0.3..0.3)),
    )
    .unwrap();
    let wm = WatermarkSpec::scaled_identity(nu, 0.05).unwrap();
    (plant, ctrl, wm)
}

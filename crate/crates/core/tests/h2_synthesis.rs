mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replay_guard::h2syn::{reconstruct_controller, solve_h2, SynthesisOptions, SynthesisVariables, YbarMode};
use replay_guard::linalg;
use replay_guard::model::{build_closed_loop, DynamicController, PlantModel};
use replay_guard::Error;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n);
    &m * m.transpose() + DMatrix::identity(n, n)
}

#[test]
fn three_tank_soundness() {
    let plant = common::three_tank::plant();
    let wm = common::three_tank::watermark(0.1);
    let t = Instant::now();
    let r = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap();
    let elapsed = t.elapsed();
    assert!(r.closed_loop_radius < 1.0);
    let excess = linalg::max_eigenvalue(&(&r.output_covariance - &r.ybar));
    assert!(excess <= 1e-4, "output covariance exceeds Ȳ by {excess}");
    assert!(r.reconstruction_residual < 1e-7);
    assert!(r.h2_cost <= r.h2_bound + 1e-4);
    assert!(elapsed.as_secs_f64() < 30.0, "synthesis took {elapsed:?}");
}

/// With `𝕋 = [[I, Y], [0, Sᵀ]]` and `𝕏 = [[X, Pᵀ], [P, −P Y S⁻ᵀ]]`, the
/// reconstructed controller must reproduce the transformed blocks exactly.
#[test]
fn reconstruction_satisfies_congruence_identities() {
    let plant = common::three_tank::plant();
    let (a, b, c) = (&plant.a, &plant.b, &plant.c);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let vars = SynthesisVariables {
            x: random_spd(&mut rng, 3),
            y: random_spd(&mut rng, 3),
            q: random_matrix(&mut rng, 3, 3),
            f: random_matrix(&mut rng, 3, 3),
            l: random_matrix(&mut rng, 4, 3),
        };
        let rec = reconstruct_controller(&plant, &vars, 1e12).unwrap();
        let (s, p) = (&rec.s, &rec.p);
        let ctrl = &rec.controller;
        let s_inv_t = linalg::inv(s).unwrap().transpose();
        let xc = -(p * &vars.y * &s_inv_t);
        let big_x = linalg::assemble(&[vec![vars.x.clone(), p.transpose()], vec![p.clone(), xc]]).unwrap();
        let tt = linalg::assemble(&[
            vec![DMatrix::identity(3, 3), vars.y.clone()],
            vec![DMatrix::zeros(3, 3), s.transpose()],
        ])
        .unwrap();
        let big_a = linalg::assemble(&[vec![a.clone(), b * &ctrl.c_c], vec![&ctrl.b_c * c, ctrl.a_c.clone()]]).unwrap();

        let lhs = tt.transpose() * &big_x * &tt;
        let rhs = linalg::assemble(&[
            vec![vars.x.clone(), DMatrix::identity(3, 3)],
            vec![DMatrix::identity(3, 3), vars.y.clone()],
        ])
        .unwrap();
        let scale = linalg::max_abs(&rhs).max(1.0);
        assert!(linalg::max_abs(&(&lhs - &rhs)) < 1e-9 * scale);

        let lhs = tt.transpose() * &big_a * &big_x * &tt;
        let rhs = linalg::assemble(&[
            vec![a * &vars.x + b * &vars.l, a.clone()],
            vec![vars.q.clone(), &vars.y * a + &vars.f * c],
        ])
        .unwrap();
        let scale = linalg::max_abs(&rhs).max(1.0);
        assert!(linalg::max_abs(&(&lhs - &rhs)) < 1e-9 * scale, "transformed 𝔸 block mismatch");
    }
}

#[test]
fn synthesized_controller_is_locally_optimal() {
    let plant = common::three_tank::plant();
    let wm = common::three_tank::watermark(0.1);
    let r = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let k = &r.controller;
        let pert = DynamicController::new(
            &k.a_c + random_matrix(&mut rng, 3, 3) * 1e-3 * linalg::max_abs(&k.a_c),
            &k.b_c + random_matrix(&mut rng, 3, 3) * 1e-3 * linalg::max_abs(&k.b_c),
            &k.c_c + random_matrix(&mut rng, 4, 3) * 1e-3 * linalg::max_abs(&k.c_c),
        )
        .unwrap();
        let cl = build_closed_loop(&plant, &pert, &wm).unwrap();
        if cl.spectral_radius() >= 1.0 {
            continue;
        }
        let cost = cl.h2_cost().unwrap();
        assert!(cost >= r.h2_cost * (1.0 - 1e-5), "perturbation lowered the cost: {cost} < {}", r.h2_cost);
    }
}

#[test]
fn cost_scales_with_noise() {
    let plant = common::three_tank::plant();
    let wm = common::three_tank::watermark(0.1);
    let base = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap();
    let scaled_plant = PlantModel { w: &plant.w * 4.0, v: &plant.v * 4.0, ..plant.clone() };
    let scaled_wm = common::three_tank::watermark(0.4);
    let scaled = solve_h2(&scaled_plant, &scaled_wm, &SynthesisOptions::default()).unwrap();
    let ratio = scaled.h2_cost / base.h2_cost;
    assert!((ratio - 4.0).abs() < 4e-5, "ratio {ratio}");
}

#[test]
fn watermark_raises_the_cost() {
    let plant = common::three_tank::plant();
    let low = solve_h2(&plant, &common::three_tank::watermark(1e-12), &SynthesisOptions::default()).unwrap();
    let high = solve_h2(&plant, &common::three_tank::watermark(0.1), &SynthesisOptions::default()).unwrap();
    assert!(low.closed_loop_radius < 1.0);
    assert!(low.h2_cost < high.h2_cost);
    assert!(low.h2_cost <= low.h2_bound + 1e-6);
}

#[test]
fn fixed_ybar_feasibility() {
    let plant = common::three_tank::plant();
    let wm = common::three_tank::watermark(0.1);
    let base = solve_h2(&plant, &wm, &SynthesisOptions::default()).unwrap();
    let loose = SynthesisOptions { ybar_mode: YbarMode::Fixed(&base.ybar * 1.05), ..SynthesisOptions::default() };
    let r = solve_h2(&plant, &wm, &loose).unwrap();
    assert!(r.h2_cost <= 1.05 * base.h2_bound);
    let tight = SynthesisOptions { ybar_mode: YbarMode::Fixed(&base.ybar * 0.5), ..SynthesisOptions::default() };
    assert!(matches!(solve_h2(&plant, &wm, &tight), Err(Error::Infeasible(_))));
}

//! Steady-state Kalman design for the augmented plant/controller state.
//!
//! The estimator tracks `z = [x; x_c]`. Because the controller consumes the
//! delivered measurement, its contribution is removed from the augmented
//! dynamics: `𝔸̃ = 𝔸 − 𝒦 ℂ = [[A, B C_c], [0, A_c]]` with `𝒦 = [0; B_c]`.
//! The process noise is `𝔹 𝕎̃ 𝔹ᵀ` with `𝕎̃ = Diag{U_eff, W, ε I}`, where the
//! watermark block is zero when the estimator is told the injected watermark
//! ([`WatermarkTreatment::Known`], the default) and `U` otherwise.
//!
//! Two design routes are provided: fixed-point iteration of the Riccati
//! recursion and an LMI whose maximal element is the inverse stationary
//! prediction covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{regularized_noise, DynamicController, PlantModel, WatermarkSpec};
use crate::sdp::{Affine, LmiProblem, SdpOptions, SdpStatus, Strictness};

/// Whether the residue generator knows the injected watermark samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatermarkTreatment {
    /// The watermark is a known input: the estimator propagates `B (u + Δu)`.
    #[default]
    Known,
    /// The watermark is modelled as unknown process noise of covariance U.
    Unknown,
}

#[derive(Clone, Debug)]
pub struct KalmanOptions {
    pub treatment: WatermarkTreatment,
    /// Regularizer ε; `None` uses the plant default.
    pub epsilon: Option<f64>,
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,
    pub sdp: SdpOptions,
}

impl Default for KalmanOptions {
    fn default() -> Self {
        KalmanOptions {
            treatment: WatermarkTreatment::Known,
            epsilon: None,
            riccati_tol: 1e-12,
            riccati_max_iter: 100_000,
            sdp: SdpOptions::default(),
        }
    }
}

/// Stationary Kalman design and derived detector quantities.
#[derive(Clone, Debug)]
pub struct KalmanDesign {
    pub treatment: WatermarkTreatment,
    pub epsilon: f64,
    /// Augmented prediction error covariance 𝕏̄ (2n×2n).
    pub covariance: DMatrix<f64>,
    /// Augmented one-step predictor gain 𝕃 (2n×n_y).
    pub predictor_gain: DMatrix<f64>,
    /// Plant block of 𝕏̄.
    pub plant_covariance: DMatrix<f64>,
    /// Plant filter gain `L = X_e Cᵀ 𝒳⁻¹` used by the residue generator.
    pub filter_gain: DMatrix<f64>,
    /// Innovation covariance `𝒳 = C X_e Cᵀ + V`.
    pub innovation_cov: DMatrix<f64>,
    pub innovation_cov_inv: DMatrix<f64>,
    /// LMI variables `𝕡 = 𝕏̄⁻¹` and `𝕐 = 𝕡 𝕃` (LMI route only).
    pub lmi_p: Option<DMatrix<f64>>,
    pub lmi_y: Option<DMatrix<f64>>,
    /// Riccati iterations or SDP Newton steps.
    pub iterations: usize,
}

struct Augmented {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    noise: DMatrix<f64>,
    v: DMatrix<f64>,
    eps: f64,
}

fn augmented(
    plant: &PlantModel,
    ctrl: &DynamicController,
    wm: &WatermarkSpec,
    opts: &KalmanOptions,
) -> Result<Augmented> {
    plant.validate()?;
    ctrl.check_against(plant)?;
    wm.check_against(plant)?;
    let (n, nu, ny, nw) = (plant.n_x(), plant.n_u(), plant.n_y(), plant.n_w());
    let eps = opts.epsilon.unwrap_or_else(|| plant.default_epsilon());
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("ε must be positive"));
    }
    let a =
        linalg::assemble(&[vec![plant.a.clone(), &plant.b * &ctrl.c_c], vec![DMatrix::zeros(n, n), ctrl.a_c.clone()]])?;
    let c = linalg::assemble(&[vec![plant.c.clone(), DMatrix::zeros(ny, n)]])?;
    let b = linalg::assemble(&[
        vec![plant.b.clone(), plant.d.clone(), DMatrix::zeros(n, ny)],
        vec![DMatrix::zeros(n, nu), DMatrix::zeros(n, nw), ctrl.b_c.clone()],
    ])?;
    let wm_eff = match opts.treatment {
        WatermarkTreatment::Known => WatermarkSpec { u: DMatrix::zeros(nu, nu) },
        WatermarkTreatment::Unknown => wm.clone(),
    };
    let w_tilde = regularized_noise(&wm_eff, plant, eps);
    let mut noise = linalg::symmetrize(&(&b * w_tilde * b.transpose()));
    // A rank-deficient loading (n_y < n_x, or a thin D) leaves directions
    // without process noise; regularize them with the same ε.
    let hi = linalg::max_eigenvalue(&noise);
    if linalg::min_eigenvalue(&noise) <= 1e-13 * hi.max(1e-300) {
        for i in 0..2 * n {
            noise[(i, i)] += eps;
        }
    }
    Ok(Augmented { a, c, noise, v: plant.v.clone(), eps })
}

fn finish(
    aug: &Augmented,
    n: usize,
    treatment: WatermarkTreatment,
    covariance: DMatrix<f64>,
    predictor_gain: DMatrix<f64>,
    lmi: Option<(DMatrix<f64>, DMatrix<f64>)>,
    iterations: usize,
) -> Result<KalmanDesign> {
    let plant_covariance = covariance.view((0, 0), (n, n)).into_owned();
    let c = aug.c.view((0, 0), (aug.c.nrows(), n)).into_owned();
    let innovation_cov = linalg::symmetrize(&(&c * &plant_covariance * c.transpose() + &aug.v));
    let innovation_cov_inv = linalg::inv_pd(&innovation_cov)?;
    let filter_gain = &plant_covariance * c.transpose() * &innovation_cov_inv;
    if predictor_gain.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("Kalman gain has non-finite entries"));
    }
    let (lmi_p, lmi_y) = match lmi {
        Some((p, y)) => (Some(p), Some(y)),
        None => (None, None),
    };
    Ok(KalmanDesign {
        treatment,
        epsilon: aug.eps,
        covariance,
        predictor_gain,
        plant_covariance,
        filter_gain,
        innovation_cov,
        innovation_cov_inv,
        lmi_p,
        lmi_y,
        iterations,
    })
}

/// Stationary design by fixed-point iteration of the predictor Riccati
/// recursion, stopped when the update is below `riccati_tol · max(1, ‖𝕏̄‖)`.
pub fn kalman_riccati(
    plant: &PlantModel,
    ctrl: &DynamicController,
    wm: &WatermarkSpec,
    opts: &KalmanOptions,
) -> Result<KalmanDesign> {
    let aug = augmented(plant, ctrl, wm, opts)?;
    let (a, c, q, v) = (&aug.a, &aug.c, &aug.noise, &aug.v);
    let mut p = q.clone();
    let mut iters = 0;
    loop {
        let s = c * &p * c.transpose() + v;
        let s_inv = linalg::inv_pd(&s)?;
        let apc = a * &p * c.transpose();
        let next = linalg::symmetrize(&(a * &p * a.transpose() + q - &apc * &s_inv * apc.transpose()));
        let delta = linalg::max_abs(&(&next - &p));
        p = next;
        iters += 1;
        if delta <= opts.riccati_tol * linalg::max_abs(&p).max(1.0) {
            break;
        }
        if iters >= opts.riccati_max_iter || !delta.is_finite() {
            return Err(Error::numerical(format!(
                "Riccati iteration did not converge after {iters} steps (last update {delta:.3e})"
            )));
        }
    }
    let s_inv = linalg::inv_pd(&(c * &p * c.transpose() + v))?;
    let gain = a * &p * c.transpose() * s_inv;
    finish(&aug, plant.n_x(), opts.treatment, p, gain, None, iters)
}

/// Stationary design from the LMI
/// `[[𝕡, 𝕡𝔸̃ − 𝕐ℂ, 𝕐, 𝕡𝔹], [·, 𝕡, 0, 0], [·, ·, V⁻¹, 0], [·, ·, ·, 𝕎̃⁻¹]] ≻ 0`,
/// maximizing the trace of 𝕡.
///
/// The LMI is posed after the congruence `x = T x'`, `y = R y'` with
/// `T Tᵀ = 𝔹𝕎̃𝔹ᵀ` and `R Rᵀ = V`, in which both noise channels become the
/// identity. The feasible set has a maximal element (the inverse Riccati
/// covariance), so maximizing trace(𝕡') selects the same point.
pub fn kalman_lmi_design(
    plant: &PlantModel,
    ctrl: &DynamicController,
    wm: &WatermarkSpec,
    opts: &KalmanOptions,
) -> Result<KalmanDesign> {
    let aug = augmented(plant, ctrl, wm, opts)?;
    let nz = aug.a.nrows();
    let ny = aug.c.nrows();
    let t = linalg::cholesky_lower(&aug.noise)
        .ok_or_else(|| Error::numerical("process-noise loading is not positive definite"))?;
    let r = linalg::cholesky_lower(&aug.v).ok_or_else(|| Error::numerical("V is not positive definite"))?;
    let t_inv = linalg::inv(&t)?;
    let r_inv = linalg::inv(&r)?;
    let a_n = &t_inv * &aug.a * &t;
    let c_n = &r_inv * &aug.c * &t;

    let mut prob = LmiProblem::new();
    let p = prob.symmetric("P", nz);
    let y = prob.full("Y", nz, ny);
    let z = |r, c| Affine::zeros(r, c);
    let blk = Affine::sym_block(&[
        vec![p.clone(), &(&p * &a_n) - &(&y * &c_n), y.clone(), p.clone()],
        vec![p.clone(), z(nz, ny), z(nz, nz)],
        vec![Affine::identity(ny), z(ny, nz)],
        vec![Affine::identity(nz)],
    ])?;
    prob.add_lmi("kalman", blk, Strictness::Strict)?;
    prob.maximize(p.trace())?;
    let sol = prob.solve(&opts.sdp)?;
    match sol.status {
        SdpStatus::Infeasible => {
            return Err(Error::Infeasible("Kalman LMI is infeasible (is the plant detectable?)".into()))
        }
        SdpStatus::Stalled => log::warn!("estimator: Kalman LMI stopped at the iteration cap"),
        SdpStatus::Optimal => {}
    }
    let p_n = sol.value("P").clone();
    let y_n = sol.value("Y").clone();
    let x_n = linalg::inv_pd(&p_n)?;
    let covariance = linalg::symmetrize(&(&t * &x_n * t.transpose()));
    let gain = &t * (&x_n * &y_n) * &r_inv;
    let p_full = linalg::symmetrize(&(t_inv.transpose() * &p_n * &t_inv));
    let y_full = &p_full * &gain;
    finish(&aug, plant.n_x(), opts.treatment, covariance, gain, Some((p_full, y_full)), sol.iterations)
}

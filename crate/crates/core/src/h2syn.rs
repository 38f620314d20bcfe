//! H2-optimal full-order dynamic controller synthesis via LMIs.
//!
//! The closed-loop covariance condition `𝕏 ≻ 𝔸𝕏𝔸ᵀ + 𝔹𝕎𝔹ᵀ` and the output
//! bound `ℂ𝕏ℂᵀ + 𝔻𝕎𝔻ᵀ ≺ Ȳ` are made jointly affine by the change of
//! variables `L = C_c P`, `F = S B_c`,
//! `Q = Y A X + Y B C_c P + S B_c C X + S A_c P`, where `X`, `P` are blocks of
//! 𝕏 and `Y`, `S` blocks of 𝕏⁻¹. Noise channels enter in square-root form so
//! that singular or tiny watermark covariances are admissible. The problem is
//! normalized by a scalar noise scale before solving; the controller is
//! invariant under that scaling.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{build_closed_loop, DynamicController, PlantModel, WatermarkSpec};
use crate::sdp::{Affine, LmiProblem, SdpOptions, SdpStatus, Strictness};

/// How the output-covariance bound Ȳ is treated.
#[derive(Clone, Debug, Default)]
pub enum YbarMode {
    /// Ȳ is a decision variable and trace(Ȳ) is minimized.
    #[default]
    Variable,
    /// Ȳ is given; the synthesis is a feasibility problem.
    Fixed(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct SynthesisOptions {
    pub ybar_mode: YbarMode,
    /// Optional cap trace(Ȳ) ≤ cap (original units).
    pub ybar_cap: Option<f64>,
    /// Optional input-covariance bound E[u uᵀ] ≺ Ū.
    pub input_bound: Option<DMatrix<f64>>,
    /// Largest admissible condition number of the factors S and P.
    pub max_condition: f64,
    pub sdp: SdpOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            ybar_mode: YbarMode::Variable,
            ybar_cap: None,
            input_bound: None,
            max_condition: 1e12,
            sdp: SdpOptions::default(),
        }
    }
}

/// Transformed synthesis variables (original units).
#[derive(Clone, Debug, Serialize)]
pub struct SynthesisVariables {
    #[serde(with = "crate::io::matrix")]
    pub x: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub y: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub f: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub l: DMatrix<f64>,
}

/// Controller recovered from the transformed variables.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub controller: DynamicController,
    pub s: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Relative residual of `Q = YAX + YBC_cP + SB_cCX + SA_cP`.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub controller: DynamicController,
    /// Output-covariance bound Ȳ (original units).
    pub ybar: DMatrix<f64>,
    /// trace(Ȳ): the certified H2 bound.
    pub h2_bound: f64,
    /// H2 cost of the closed loop evaluated by a Lyapunov solve.
    pub h2_cost: f64,
    /// Stationary output covariance of the closed loop.
    pub output_covariance: DMatrix<f64>,
    pub closed_loop_radius: f64,
    pub variables: SynthesisVariables,
    pub s: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub reconstruction_residual: f64,
    /// Scalar noise normalization used internally.
    pub noise_scale: f64,
    pub sdp_iterations: usize,
    pub sdp_gap: f64,
}

/// Scalar used to normalize noise covariances before solving.
pub fn noise_scale(plant: &PlantModel, u: &DMatrix<f64>) -> f64 {
    let proc = &plant.b * u * plant.b.transpose() + &plant.d * &plant.w * plant.d.transpose();
    let s = linalg::max_eigenvalue(&proc).max(linalg::max_eigenvalue(&plant.v));
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Synthesize the H2-optimal controller for watermark covariance `U`.
pub fn solve_h2(plant: &PlantModel, wm: &WatermarkSpec, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    plant.validate()?;
    wm.check_against(plant)?;
    let (n, nu, ny, nw) = (plant.n_x(), plant.n_u(), plant.n_y(), plant.n_w());
    let sigma2 = noise_scale(plant, &wm.u);

    let us = linalg::sqrt_psd(&(&wm.u / sigma2))?;
    let ws = linalg::sqrt_psd(&(&plant.w / sigma2))?;
    let vs = linalg::sqrt_psd(&(&plant.v / sigma2))?;
    let (a, b, c, d) = (&plant.a, &plant.b, &plant.c, &plant.d);

    let mut prob = LmiProblem::new();
    let x = prob.symmetric("X", n);
    let y = prob.symmetric("Y", n);
    let q = prob.full("Q", n, n);
    let f = prob.full("F", n, ny);
    let l = prob.full("L", nu, n);
    let ybar = match &opts.ybar_mode {
        YbarMode::Variable => prob.symmetric("Ybar", ny),
        YbarMode::Fixed(m) => {
            if m.nrows() != ny || m.ncols() != ny {
                return Err(Error::dim(format!("fixed Ȳ must be {ny}x{ny}")));
            }
            Affine::constant(m / sigma2)
        }
    };

    let id = Affine::identity(n);
    let z = |r, c| Affine::zeros(r, c);
    let nn = nu + nw + ny;
    let xx = Affine::sym_block(&[vec![x.clone(), id.clone()], vec![y.clone()]])?;
    let ax = Affine::block(&[vec![&(a * &x) + &(b * &l), Affine::from(a)], vec![q.clone(), &(&y * a) + &(&f * c)]])?;
    let bb = Affine::block(&[
        vec![Affine::from(b * &us), Affine::from(d * &ws), z(n, ny)],
        vec![&y * &(b * &us), &y * &(d * &ws), &f * &vs],
    ])?;
    let stability =
        Affine::sym_block(&[vec![xx.clone(), ax, bb], vec![xx.clone(), z(2 * n, nn)], vec![Affine::identity(nn)]])?;
    prob.add_lmi("covariance", stability, Strictness::Strict)?;

    let cx = Affine::hstack(&[c * &x, Affine::from(c)])?;
    let dd = Affine::hstack(&[z(ny, nu), z(ny, nw), Affine::from(&vs)])?;
    let output =
        Affine::sym_block(&[vec![ybar.clone(), cx, dd], vec![xx.clone(), z(2 * n, nn)], vec![Affine::identity(nn)]])?;
    prob.add_lmi("output", output, Strictness::Strict)?;

    if let Some(ubar) = &opts.input_bound {
        if ubar.nrows() != nu || ubar.ncols() != nu {
            return Err(Error::dim(format!("input bound must be {nu}x{nu}")));
        }
        let blk = Affine::sym_block(&[
            vec![Affine::from(ubar / sigma2), l.clone(), z(nu, n)],
            vec![x.clone(), id.clone()],
            vec![y.clone()],
        ])?;
        prob.add_lmi("input", blk, Strictness::Strict)?;
    }
    if let Some(cap) = opts.ybar_cap {
        prob.add_lmi("trace_cap", &Affine::scalar(cap / sigma2) - &ybar.trace(), Strictness::NonStrict)?;
    }
    if matches!(opts.ybar_mode, YbarMode::Variable) {
        prob.minimize(ybar.trace())?;
    }

    let sol = prob.solve(&opts.sdp)?;
    match sol.status {
        SdpStatus::Infeasible => {
            return Err(Error::Infeasible(format!(
                "H2 synthesis LMIs are infeasible (phase-I value {:.3e})",
                sol.phase1_value
            )))
        }
        SdpStatus::Stalled => log::warn!("h2syn: SDP stopped at the iteration cap (gap {:.3e})", sol.gap),
        SdpStatus::Optimal => {}
    }

    let xn = sol.value("X").clone();
    let yn = sol.value("Y").clone();
    let normalized = SynthesisVariables {
        x: xn.clone(),
        y: yn.clone(),
        q: sol.value("Q").clone(),
        f: sol.value("F").clone(),
        l: sol.value("L").clone(),
    };
    let rec = reconstruct_controller(plant, &normalized, opts.max_condition)?;
    let ybar_val = match &opts.ybar_mode {
        YbarMode::Variable => sol.value("Ybar") * sigma2,
        YbarMode::Fixed(m) => m.clone(),
    };

    let cl = build_closed_loop(plant, &rec.controller, wm)?;
    let radius = cl.spectral_radius();
    if radius >= 1.0 {
        return Err(Error::numerical(format!(
            "reconstructed controller does not stabilize the plant (spectral radius {radius:.6})"
        )));
    }
    let cov = cl.output_covariance()?;
    let excess = linalg::max_eigenvalue(&(&cov - &ybar_val));
    let allowed = 1e-5 * linalg::max_abs(&ybar_val).max(1.0);
    if excess > allowed {
        return Err(Error::numerical(format!("closed-loop output covariance exceeds Ȳ by {excess:.3e}")));
    }

    Ok(SynthesisResult {
        controller: rec.controller,
        h2_bound: ybar_val.trace(),
        ybar: ybar_val,
        h2_cost: cov.trace(),
        output_covariance: cov,
        closed_loop_radius: radius,
        variables: SynthesisVariables {
            x: xn * sigma2,
            y: yn / sigma2,
            q: normalized.q,
            f: normalized.f / sigma2,
            l: normalized.l * sigma2,
        },
        s: rec.s / sigma2,
        p: rec.p * sigma2,
        reconstruction_residual: rec.residual,
        noise_scale: sigma2,
        sdp_iterations: sol.iterations,
        sdp_gap: sol.gap,
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let hi = sv.iter().cloned().fold(0.0_f64, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Recover `(A_c, B_c, C_c)` from transformed variables.
///
/// `S` and `P` come from a partially pivoted LU factorization of `I − Y X`
/// (`S` the row-permuted unit-lower factor, `P` the upper factor). Any other
/// factorization gives a similar controller realization.
pub fn reconstruct_controller(
    plant: &PlantModel,
    vars: &SynthesisVariables,
    max_condition: f64,
) -> Result<Reconstruction> {
    let n = plant.n_x();
    let (a, b, c) = (&plant.a, &plant.b, &plant.c);
    let m = DMatrix::identity(n, n) - &vars.y * &vars.x;
    let lu = m.clone().lu();
    let (perm, mut s, p) = lu.unpack();
    perm.inv_permute_rows(&mut s);
    let pivot = (0..n).map(|i| p[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if pivot < 1e-12 * linalg::max_abs(&m).max(1e-300) {
        return Err(Error::numerical("I − YX is singular; controller cannot be reconstructed"));
    }
    let cond = condition_number(&s).max(condition_number(&p));
    if cond > max_condition {
        return Err(Error::numerical(format!(
            "S/P factors are ill-conditioned (condition {cond:.3e} > {max_condition:.1e})"
        )));
    }
    let p_inv = linalg::inv(&p)?;
    let s_lu = s.clone().lu();
    let s_solve = |rhs: &DMatrix<f64>| s_lu.solve(rhs).ok_or_else(|| Error::numerical("S is singular"));
    let c_c = &vars.l * &p_inv;
    let b_c = s_solve(&vars.f)?;
    let inner = &vars.q - &vars.y * a * &vars.x - &vars.y * b * &vars.l - &vars.f * c * &vars.x;
    let a_c = s_solve(&inner)? * &p_inv;

    let q_re = &vars.y * a * &vars.x + &vars.y * b * &c_c * &p + &s * &b_c * c * &vars.x + &s * &a_c * &p;
    let residual = linalg::max_abs(&(&q_re - &vars.q)) / linalg::max_abs(&vars.q).max(1.0);

    Ok(Reconstruction { controller: DynamicController::new(a_c, b_c, c_c)?, s, p, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_factors_multiply_back() {
        let plant = PlantModel::three_tank();
        let vars = SynthesisVariables {
            x: DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.5, 0.2, 0.0, 0.2, 1.0]),
            y: DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.4, 0.0, 2.0, 0.0, 0.4, 0.0, 4.0]),
            q: DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.1),
            f: DMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.2),
            l: DMatrix::from_fn(4, 3, |i, j| (i * j) as f64 * 0.05),
        };
        let rec = reconstruct_controller(&plant, &vars, 1e12).unwrap();
        let m = DMatrix::identity(3, 3) - &vars.y * &vars.x;
        assert!(linalg::max_abs(&(&rec.s * &rec.p - m)) < 1e-12);
        assert!(rec.residual < 1e-12);
    }
}

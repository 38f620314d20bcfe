//! Watermark optimization and watermark/controller co-design.
//!
//! * Problem A: fixed watermark `U_R`, H2-optimal controller. Its certified
//!   H2 bound is the reference budget `J_ref`.
//! * Problem B: fixed controller, maximize the detection metric over U
//!   subject to the closed-loop H2 cost staying within `J_ref`.
//! * Problem C: alternate H2 re-synthesis at the current U with a Problem-B
//!   pass at the new controller.
//!
//! Problem B is solved by sequential convex programming in Γ = U⁻¹. The
//! covariance and output LMIs are affine in Γ for a fixed controller. The
//! metric `trace(G U)` is convex in Γ, so its linearization at Γ_t,
//! `metric_t − trace(U_t G U_t (Γ − Γ_t))`, is a global minorizer and every
//! accepted step increases the metric. A trust region
//! `max |Γ_ij − Γ_t,ij| ≤ ρ` limits each step.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detector::{metric_gradient, predict_replay_statistic, DetectorConfig};
use crate::error::{Error, Result};
use crate::estimator::{kalman_riccati, KalmanDesign, KalmanOptions, WatermarkTreatment};
use crate::h2syn::{noise_scale, solve_h2, SynthesisOptions};
use crate::linalg;
use crate::model::{build_closed_loop, DynamicController, PlantModel, WatermarkSpec};
use crate::sdp::{Affine, LmiProblem, SdpOptions, SdpStatus, Strictness};

/// Which entries of Γ = U⁻¹ are optimized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatermarkStructure {
    #[default]
    Diagonal,
    Full,
}

#[derive(Clone, Debug)]
pub struct CodesignConfig {
    /// Initial (and Problem-A reference) watermark covariance.
    pub u0: WatermarkSpec,
    pub structure: WatermarkStructure,
    /// Initial trust radius in Γ units; `None` uses 0.25 · max |Γ_0|.
    pub trust_radius: Option<f64>,
    pub shrink: f64,
    pub expand: f64,
    /// Stop when an accepted step improves the metric by less than this
    /// relative amount.
    pub tol: f64,
    /// Stop when the accepted Γ step is below this (relative to max |Γ|).
    pub tol_step: f64,
    /// Stall when the trust radius falls below this (relative to max |Γ_0|).
    pub min_radius: f64,
    /// Cap on SCP iterations per Problem-B pass.
    pub max_iter: usize,
    /// Cap on outer alternations of Problem C.
    pub max_outer: usize,
    pub kalman: KalmanOptions,
    pub synthesis: SynthesisOptions,
    pub sdp: SdpOptions,
    pub detector: DetectorConfig,
}

impl CodesignConfig {
    pub fn new(u0: WatermarkSpec) -> Self {
        CodesignConfig {
            u0,
            structure: WatermarkStructure::Diagonal,
            trust_radius: None,
            shrink: 0.5,
            expand: 2.0,
            tol: 1e-5,
            tol_step: 1e-10,
            min_radius: 1e-12,
            max_iter: 200,
            max_outer: 10,
            kalman: KalmanOptions::default(),
            synthesis: SynthesisOptions::default(),
            sdp: SdpOptions::default(),
            detector: DetectorConfig::default(),
        }
    }

    fn validate(&self, plant: &PlantModel) -> Result<()> {
        self.u0.check_against(plant)?;
        if !(self.tol > 0.0 && self.tol_step > 0.0 && self.min_radius > 0.0) {
            return Err(Error::Config("co-design tolerances must be positive".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("trust-region shrink factor must lie in (0, 1)".into()));
        }
        if self.expand < 1.0 {
            return Err(Error::Config("trust-region expansion factor must be at least 1".into()));
        }
        if let Some(r) = self.trust_radius {
            if r.is_nan() || r <= 0.0 {
                return Err(Error::Config("trust radius must be positive".into()));
            }
        }
        if self.kalman.treatment != WatermarkTreatment::Known {
            return Err(Error::Config("watermark optimization uses the known-watermark detector design".into()));
        }
        self.detector.validate()
    }
}

/// One SCP iteration.
#[derive(Clone, Debug, Serialize)]
pub struct CodesignIterate {
    pub iter: usize,
    /// Outer alternation index (0 for Problem B).
    pub outer: usize,
    /// Metric at the iterate kept after this step.
    pub metric: f64,
    /// Certified H2 bound trace(Ȳ) of the subproblem (NaN if it failed).
    pub trace_ybar: f64,
    pub rho: f64,
    pub accepted: bool,
}

/// Outcome of Problem A, B or C.
#[derive(Clone, Debug)]
pub struct CodesignResult {
    pub problem: &'static str,
    pub watermark: WatermarkSpec,
    pub controller: DynamicController,
    pub kalman: KalmanDesign,
    /// Detection metric trace(Cᵀ𝒳⁻¹C𝒰) with the known-watermark detector.
    pub metric: f64,
    /// Same quantity with the watermark modelled as unknown noise.
    pub literal_metric: f64,
    /// Closed-loop H2 cost by Lyapunov solve.
    pub h2_cost: f64,
    /// Certified bound trace(Ȳ) for the returned pair.
    pub h2_bound: f64,
    pub j_ref: f64,
    pub iterations: Vec<CodesignIterate>,
    pub converged: bool,
    pub note: Option<String>,
}

impl CodesignResult {
    /// Iteration log as CSV (`iter,metric,trace_Ybar,rho,accepted`).
    pub fn iterations_csv(&self) -> String {
        let mut s = String::from("iter,metric,trace_Ybar,rho,accepted\n");
        for it in &self.iterations {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.6e},{}\n",
                it.iter,
                it.metric,
                it.trace_ybar,
                it.rho,
                u8::from(it.accepted)
            ));
        }
        s
    }
}

/// Detection metric and the metric with the watermark treated as unknown
/// noise, for a given controller and watermark.
pub fn detection_metrics(
    plant: &PlantModel,
    ctrl: &DynamicController,
    wm: &WatermarkSpec,
    cfg: &CodesignConfig,
) -> Result<(KalmanDesign, f64, f64)> {
    let kd = kalman_riccati(plant, ctrl, wm, &cfg.kalman)?;
    let metric = predict_replay_statistic(plant, &kd, wm, &cfg.detector)?.metric;
    let lit_opts = KalmanOptions { treatment: WatermarkTreatment::Unknown, ..cfg.kalman.clone() };
    let kd_lit = kalman_riccati(plant, ctrl, wm, &lit_opts)?;
    let literal = predict_replay_statistic(plant, &kd_lit, wm, &cfg.detector)?.metric;
    Ok((kd, metric, literal))
}

/// Problem A: H2-optimal controller at the reference watermark `cfg.u0`.
/// Its certified bound trace(Ȳ) is the budget `J_ref` for Problems B and C.
pub fn problem_a(plant: &PlantModel, cfg: &CodesignConfig) -> Result<CodesignResult> {
    cfg.validate(plant)?;
    let syn = solve_h2(plant, &cfg.u0, &cfg.synthesis)?;
    let (kd, metric, literal) = detection_metrics(plant, &syn.controller, &cfg.u0, cfg)?;
    log::info!("problem A: H2 bound {:.6}, cost {:.6}, metric {:.6}", syn.h2_bound, syn.h2_cost, metric);
    Ok(CodesignResult {
        problem: "A",
        watermark: cfg.u0.clone(),
        controller: syn.controller,
        kalman: kd,
        metric,
        literal_metric: literal,
        h2_cost: syn.h2_cost,
        h2_bound: syn.h2_bound,
        j_ref: syn.h2_bound,
        iterations: Vec::new(),
        converged: true,
        note: None,
    })
}

struct Subproblem {
    gamma: DMatrix<f64>,
    trace_ybar: f64,
}

/// Trust-region subproblem at Γ_t for a fixed controller.
#[allow(clippy::too_many_arguments)]
fn scp_step(
    plant: &PlantModel,
    ctrl: &DynamicController,
    g: &DMatrix<f64>,
    u_t: &DMatrix<f64>,
    gamma_t: &DMatrix<f64>,
    rho: f64,
    j_ref: f64,
    sigma2: f64,
    structure: WatermarkStructure,
    sdp: &SdpOptions,
) -> Result<Option<Subproblem>> {
    let (n, nu, ny) = (plant.n_x(), plant.n_u(), plant.n_y());
    let zero_wm = WatermarkSpec { u: DMatrix::zeros(nu, nu) };
    let cl = build_closed_loop(plant, ctrl, &zero_wm)?;
    let nw = plant.n_w();
    let bu = cl.b.columns(0, nu).into_owned();
    let bw = cl.b.columns(nu, nw).into_owned();
    let bv = cl.b.columns(nu + nw, ny).into_owned();
    let u_half = linalg::sqrt_psd(u_t)?;
    let u_ihalf = linalg::inv_sqrt_pd(u_t)?;
    let un_half = &u_half / sigma2.sqrt();
    let w_half = linalg::sqrt_psd(&(&plant.w / sigma2))?;
    let v_half = linalg::sqrt_psd(&(&plant.v / sigma2))?;

    let mut prob = LmiProblem::new();
    let xx = prob.symmetric("X", 2 * n);
    let ybar = prob.symmetric("Ybar", ny);
    let gt = match structure {
        WatermarkStructure::Diagonal => prob.diagonal("Gt", nu),
        WatermarkStructure::Full => prob.symmetric("Gt", nu),
    };
    let z = |r, c| Affine::zeros(r, c);
    let nn = nu + nw + ny;
    let bfac =
        Affine::hstack(&[Affine::from(&bu * &un_half), Affine::from(&bw * &w_half), Affine::from(&bv * &v_half)])?;
    let noise_blk = Affine::block_diag(&[gt.clone(), Affine::identity(nw + ny)])?;
    let cov =
        Affine::sym_block(&[vec![xx.clone(), &cl.a * &xx, bfac], vec![xx.clone(), z(2 * n, nn)], vec![noise_blk]])?;
    prob.add_lmi("covariance", cov, Strictness::Strict)?;
    let out = Affine::sym_block(&[
        vec![ybar.clone(), &cl.c * &xx, Affine::from(&v_half)],
        vec![xx.clone(), z(2 * n, ny)],
        vec![Affine::identity(ny)],
    ])?;
    prob.add_lmi("output", out, Strictness::Strict)?;
    prob.add_lmi("budget", &Affine::scalar(j_ref / sigma2) - &ybar.trace(), Strictness::NonStrict)?;

    // Γ = U_t^{-1/2} Γ̃ U_t^{-1/2}
    let gamma = (&u_ihalf * &gt).right_mul(&u_ihalf);
    let mut bounds = Vec::new();
    for j in 0..nu {
        for i in 0..=j {
            if structure == WatermarkStructure::Diagonal && i != j {
                continue;
            }
            let mut e = DMatrix::zeros(nu, 1);
            e[(i, 0)] = 1.0;
            let mut f = DMatrix::zeros(nu, 1);
            f[(j, 0)] = 1.0;
            let entry = (&e.transpose() * &gamma).right_mul(&f);
            let dev = &entry - &Affine::scalar(gamma_t[(i, j)]);
            bounds.push(&Affine::scalar(rho) - &dev);
            bounds.push(&Affine::scalar(rho) + &dev);
        }
    }
    prob.add_lmi("trust_region", Affine::block_diag(&bounds)?, Strictness::NonStrict)?;

    let metric_t = (g * u_t).trace();
    let weight = &u_half * g * &u_half / metric_t.max(1e-300);
    prob.minimize((&gt * &weight).trace())?;

    let sol = prob.solve(sdp)?;
    // accepted iterates must satisfy every LMI to within 1e-7
    if sol.status == SdpStatus::Infeasible || sol.min_eigenvalue < -1e-7 {
        return Ok(None);
    }
    let gt_val = sol.value("Gt");
    let gamma_new = linalg::symmetrize(&(&u_ihalf * gt_val * &u_ihalf));
    Ok(Some(Subproblem { gamma: gamma_new, trace_ybar: sol.value("Ybar").trace() * sigma2 }))
}

struct ScpOutcome {
    u: DMatrix<f64>,
    metric: f64,
    trace_ybar: f64,
    log: Vec<CodesignIterate>,
    converged: bool,
}

/// One Problem-B pass from `u_start` at a fixed controller.
#[allow(clippy::too_many_arguments)]
fn scp(
    plant: &PlantModel,
    ctrl: &DynamicController,
    g: &DMatrix<f64>,
    u_start: &DMatrix<f64>,
    j_ref: f64,
    cfg: &CodesignConfig,
    outer: usize,
    first_iter: usize,
) -> Result<ScpOutcome> {
    let sigma2 = noise_scale(plant, u_start);
    let mut u = linalg::symmetrize(u_start);
    let mut gamma = linalg::inv_pd(&u)
        .map_err(|_| Error::invalid("watermark optimization needs a positive definite starting U"))?;
    let mut metric = (g * &u).trace();
    let mut trace_ybar = f64::NAN;
    let mut rho = cfg.trust_radius.unwrap_or(0.25 * linalg::max_abs(&gamma));
    let rho_floor = cfg.min_radius * linalg::max_abs(&gamma);
    let mut log = Vec::new();
    let mut converged = false;

    for it in 0..cfg.max_iter {
        let step = scp_step(plant, ctrl, g, &u, &gamma, rho, j_ref, sigma2, cfg.structure, &cfg.sdp)?;
        let mut accepted = false;
        let mut ybar_here = f64::NAN;
        if let Some(sub) = step {
            ybar_here = sub.trace_ybar;
            if let Ok(u_new) = linalg::inv_pd(&sub.gamma) {
                let metric_new = (g * &u_new).trace();
                if metric_new > metric {
                    let dmax = linalg::max_abs(&(&sub.gamma - &gamma));
                    let gain = (metric_new - metric) / metric.abs().max(1e-300);
                    accepted = true;
                    u = linalg::symmetrize(&u_new);
                    gamma = sub.gamma;
                    metric = metric_new;
                    trace_ybar = sub.trace_ybar;
                    converged = gain < cfg.tol || dmax < cfg.tol_step * linalg::max_abs(&gamma);
                    if dmax >= 0.99 * rho {
                        rho *= cfg.expand;
                    }
                }
            }
        }
        if !accepted {
            rho *= cfg.shrink;
        }
        log::debug!("scp {it}: metric {metric:.10e}, trace Ȳ {ybar_here:.6}, ρ {rho:.3e}, accepted {accepted}");
        log.push(CodesignIterate { iter: first_iter + it, outer, metric, trace_ybar: ybar_here, rho, accepted });
        if converged {
            break;
        }
        if rho < rho_floor {
            log::warn!("watermark SCP stalled: trust radius {rho:.3e} below {rho_floor:.3e}");
            break;
        }
    }
    Ok(ScpOutcome { u, metric, trace_ybar, log, converged })
}

#[allow(clippy::too_many_arguments)]
fn finish_result(
    problem: &'static str,
    plant: &PlantModel,
    ctrl: DynamicController,
    u: DMatrix<f64>,
    h2_bound: f64,
    j_ref: f64,
    iterations: Vec<CodesignIterate>,
    converged: bool,
    note: Option<String>,
    cfg: &CodesignConfig,
) -> Result<CodesignResult> {
    let wm = WatermarkSpec::new(u)?;
    let (kd, metric, literal) = detection_metrics(plant, &ctrl, &wm, cfg)?;
    let h2_cost = build_closed_loop(plant, &ctrl, &wm)?.h2_cost()?;
    Ok(CodesignResult {
        problem,
        watermark: wm,
        controller: ctrl,
        kalman: kd,
        metric,
        literal_metric: literal,
        h2_cost,
        h2_bound,
        j_ref,
        iterations,
        converged,
        note,
    })
}

fn check_budget(plant: &PlantModel, ctrl: &DynamicController, u: &DMatrix<f64>, j_ref: f64) -> Result<()> {
    if j_ref.is_nan() || j_ref <= 0.0 {
        return Err(Error::Config("J_ref must be positive".into()));
    }
    let wm = WatermarkSpec::new(u.clone())?;
    let cl = build_closed_loop(plant, ctrl, &wm)?;
    if cl.spectral_radius() >= 1.0 {
        return Err(Error::invalid("the fixed controller does not stabilize the plant"));
    }
    let cost = cl.h2_cost()?;
    if cost > j_ref {
        return Err(Error::Infeasible(format!(
            "starting watermark already exceeds the budget (H2 cost {cost:.6e} > J_ref {j_ref:.6e})"
        )));
    }
    Ok(())
}

/// Problem B: best watermark for a fixed controller within the H2 budget,
/// starting from `cfg.u0`.
pub fn problem_b(
    plant: &PlantModel,
    ctrl: &DynamicController,
    j_ref: f64,
    cfg: &CodesignConfig,
) -> Result<CodesignResult> {
    cfg.validate(plant)?;
    ctrl.check_against(plant)?;
    check_budget(plant, ctrl, &cfg.u0.u, j_ref)?;
    let kd = kalman_riccati(plant, ctrl, &cfg.u0, &cfg.kalman)?;
    let g = metric_gradient(plant, &kd)?;
    let out = scp(plant, ctrl, &g, &cfg.u0.u, j_ref, cfg, 0, 1)?;
    let bound = if out.trace_ybar.is_nan() { j_ref } else { out.trace_ybar };
    log::info!("problem B: metric {:.6} after {} iterations", out.metric, out.log.len());
    finish_result("B", plant, ctrl.clone(), out.u, bound, j_ref, out.log, out.converged, None, cfg)
}

/// Problem C: alternate H2 re-synthesis under the budget (C-I) with a
/// Problem-B pass at the new controller (C-II), starting from `cfg.u0` and
/// keeping the best budget-feasible iterate. With `max_outer == 0` this is
/// Problem A.
pub fn problem_c(plant: &PlantModel, j_ref: f64, cfg: &CodesignConfig) -> Result<CodesignResult> {
    cfg.validate(plant)?;
    if cfg.max_outer == 0 {
        let mut out = problem_a(plant, cfg)?;
        out.problem = "C";
        return Ok(out);
    }
    if j_ref.is_nan() || j_ref <= 0.0 {
        return Err(Error::Config("J_ref must be positive".into()));
    }
    let mut best: Option<(f64, DMatrix<f64>, DynamicController, f64)> = None;
    let mut u = cfg.u0.u.clone();
    let mut log_all = Vec::new();
    let mut prev_metric: Option<f64> = None;
    let mut converged = false;
    let mut note = None;
    let mut next_iter = 1;

    for outer in 1..=cfg.max_outer {
        // C-I: re-synthesize at the current watermark within the budget
        let syn_opts = SynthesisOptions { ybar_cap: Some(j_ref), ..cfg.synthesis.clone() };
        let wm = WatermarkSpec::new(u.clone())?;
        let syn = match solve_h2(plant, &wm, &syn_opts) {
            Ok(s) => s,
            Err(Error::Infeasible(msg)) if best.is_some() => {
                note = Some(format!("outer iteration {outer}: re-synthesis infeasible within J_ref ({msg})"));
                log::info!("problem C stops early: {msg}");
                break;
            }
            Err(e) => return Err(e),
        };
        // C-II: watermark pass at the new controller
        let kd = kalman_riccati(plant, &syn.controller, &wm, &cfg.kalman)?;
        let g = metric_gradient(plant, &kd)?;
        let out = scp(plant, &syn.controller, &g, &u, j_ref, cfg, outer, next_iter)?;
        next_iter += out.log.len();
        log_all.extend(out.log);
        let bound = if out.trace_ybar.is_nan() { syn.h2_bound } else { out.trace_ybar };
        if best.as_ref().is_none_or(|b| out.metric > b.0) {
            best = Some((out.metric, out.u.clone(), syn.controller.clone(), bound));
        }
        log::info!("problem C outer {outer}: metric {:.6}", out.metric);
        if let Some(prev) = prev_metric {
            let change = (out.metric - prev).abs() / prev.abs().max(1e-300);
            converged = change < cfg.tol;
        }
        prev_metric = Some(out.metric);
        u = out.u;
        if converged {
            break;
        }
    }
    let (_, best_u, best_ctrl, best_bound) = best.expect("at least one outer iteration ran");
    finish_result("C", plant, best_ctrl, best_u, best_bound, j_ref, log_all, converged, note, cfg)
}

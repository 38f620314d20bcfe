//! Windowed χ² detector and closed-form detection predictions.
//!
//! The residue `r_k = y'_k − C x̂_{k|k−1}` is whitened by the innovation
//! covariance 𝒳 and summed over a sliding window of `T` steps:
//! `g_k = Σ_{i=k−T+1}^{k} r_iᵀ 𝒳⁻¹ r_i`. Without attack `g_k ~ χ²(mT)`; the
//! alarm fires when `g_k > η` with `P(χ²(mT) > η) = α`.
//!
//! Under replay the estimator's own watermark no longer matches the one
//! embedded in the recorded measurements. The mismatch propagates through
//! `𝒜 = A (I − L C)` and, asymptotically,
//! `E[g_k] = mT + 2T · trace(Cᵀ 𝒳⁻¹ C 𝒰)` with `𝒰 = 𝒜 𝒰 𝒜ᵀ + B U Bᵀ`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::KalmanDesign;
use crate::linalg;
use crate::model::{PlantModel, WatermarkSpec};

pub use crate::linalg::dlyap;

/// Window length and false-alarm level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub window: usize,
    pub alpha: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { window: 5, alpha: 0.05 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("detector window must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("α must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Thresholds for windows holding 1..=T residues of dimension `m`.
    pub fn thresholds(&self, m: usize) -> Result<Vec<f64>> {
        self.validate()?;
        (1..=self.window).map(|k| chi2_threshold(m * k, self.alpha)).collect()
    }
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma Q(a, x) = Γ(a, x)/Γ(a).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let lead = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // series for P(a, x)
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..10_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * lead.exp()
    } else {
        // Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        lead.exp() * h
    }
}

/// Survival function of χ²(dof).
pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    gamma_q(dof as f64 / 2.0, x / 2.0)
}

/// η with P(χ²(dof) > η) = α, by bisection on the survival function.
pub fn chi2_threshold(dof: usize, alpha: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::invalid("χ² threshold needs at least one degree of freedom"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("α must lie in (0, 1), got {alpha}")));
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0 * (dof as f64).sqrt() + 10.0;
    while chi2_sf(hi, dof) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_sf(mid, dof) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sliding-window χ² detector.
#[derive(Clone, Debug)]
pub struct Detector {
    weight: DMatrix<f64>,
    window: usize,
    thresholds: Vec<f64>,
    terms: VecDeque<f64>,
}

/// One detector update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub g: f64,
    pub eta: f64,
    pub alarm: bool,
}

impl Detector {
    pub fn new(innovation_cov_inv: DMatrix<f64>, cfg: &DetectorConfig) -> Result<Self> {
        let thresholds = cfg.thresholds(innovation_cov_inv.nrows())?;
        Ok(Detector {
            weight: innovation_cov_inv,
            window: cfg.window,
            thresholds,
            terms: VecDeque::with_capacity(cfg.window),
        })
    }

    pub fn from_design(kd: &KalmanDesign, cfg: &DetectorConfig) -> Result<Self> {
        Self::new(kd.innovation_cov_inv.clone(), cfg)
    }

    /// Feed the next residue. Before the window fills, the sum covers the
    /// residues seen so far and the threshold uses m·k degrees of freedom.
    pub fn push(&mut self, residue: &DVector<f64>) -> Decision {
        let q = residue.dot(&(&self.weight * residue));
        if self.terms.len() == self.window {
            self.terms.pop_front();
        }
        self.terms.push_back(q);
        let g: f64 = self.terms.iter().sum();
        let eta = self.thresholds[self.terms.len() - 1];
        Decision { g, eta, alarm: g > eta }
    }

    pub fn reset(&mut self) {
        self.terms.clear();
    }
}

/// Windowed statistic at step `k` (0-based) over a stored residue sequence.
pub fn g_statistic(residues: &[DVector<f64>], innovation_cov_inv: &DMatrix<f64>, k: usize, window: usize) -> f64 {
    let start = (k + 1).saturating_sub(window);
    residues[start..=k].iter().map(|r| r.dot(&(innovation_cov_inv * r))).sum()
}

/// Closed-form asymptotic detector statistics.
#[derive(Clone, Debug)]
pub struct ReplayPrediction {
    /// trace(Cᵀ 𝒳⁻¹ C 𝒰).
    pub metric: f64,
    /// Asymptotic E[g_k] under replay.
    pub eg_attack: f64,
    /// E[g_k] without attack (= mT).
    pub eg_noattack: f64,
    /// Residue covariance under replay, 𝒳 + 2 C 𝒰 Cᵀ.
    pub residue_cov_attack: DMatrix<f64>,
    /// 𝒜 = A (I − L C).
    pub error_dynamics: DMatrix<f64>,
    /// 𝒰 = 𝒜 𝒰 𝒜ᵀ + B U Bᵀ.
    pub replay_cov: DMatrix<f64>,
}

/// `𝒜 = A (I − L C)` for the design's filter gain.
pub fn error_dynamics(plant: &PlantModel, kd: &KalmanDesign) -> DMatrix<f64> {
    let n = plant.n_x();
    &plant.a * (DMatrix::identity(n, n) - &kd.filter_gain * &plant.c)
}

pub fn predict_replay_statistic(
    plant: &PlantModel,
    kd: &KalmanDesign,
    wm: &WatermarkSpec,
    cfg: &DetectorConfig,
) -> Result<ReplayPrediction> {
    cfg.validate()?;
    wm.check_against(plant)?;
    let acal = error_dynamics(plant, kd);
    let bub = linalg::symmetrize(&(&plant.b * &wm.u * plant.b.transpose()));
    let ucal = linalg::dlyap(&acal, &bub)?;
    let weight = plant.c.transpose() * &kd.innovation_cov_inv * &plant.c;
    let metric = (&weight * &ucal).trace();
    let m = plant.n_y() as f64;
    let t = cfg.window as f64;
    let residue_cov_attack = &kd.innovation_cov + (&plant.c * &ucal * plant.c.transpose()) * 2.0;
    Ok(ReplayPrediction {
        metric,
        eg_attack: m * t + 2.0 * t * metric,
        eg_noattack: m * t,
        residue_cov_attack,
        error_dynamics: acal,
        replay_cov: ucal,
    })
}

/// Gradient of the detection metric with respect to U:
/// `metric(U) = trace(G U)` with `G = Bᵀ Z B`, `Z = 𝒜ᵀ Z 𝒜 + Cᵀ 𝒳⁻¹ C`.
/// Exact when the detector design does not depend on U (known watermark).
pub fn metric_gradient(plant: &PlantModel, kd: &KalmanDesign) -> Result<DMatrix<f64>> {
    let acal = error_dynamics(plant, kd);
    let weight = linalg::symmetrize(&(plant.c.transpose() * &kd.innovation_cov_inv * &plant.c));
    let z = linalg::dlyap(&acal.transpose(), &weight)?;
    Ok(linalg::symmetrize(&(plant.b.transpose() * z * &plant.b)))
}

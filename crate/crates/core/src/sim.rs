//! Seeded closed-loop simulation with replay attacks and Monte-Carlo
//! estimation of detection rates.
//!
//! Randomness is counter based: a trial with seed `s` and `w` warm-up steps
//! draws the noise of step `k` from `ChaCha8Rng::seed_from_u64(s)` on stream
//! `k + w`, so every sample is a pure function of `(s, w, k)`. Attacked and
//! attack-free runs of the same trial therefore see identical noise, and
//! results do not depend on the number of worker threads.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{predict_replay_statistic, Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::estimator::{KalmanDesign, WatermarkTreatment};
use crate::linalg;
use crate::model::{DynamicController, PlantModel, WatermarkSpec};

/// Record-and-replay attack on the measurement channel.
///
/// Measurements of steps `record_start .. record_start + duration` are
/// recorded and delivered again, once, during
/// `attack_start .. attack_start + duration`. Reported steps are numbered
/// from 1; recording may start in the warm-up (steps ≤ 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayAttack {
    pub record_start: i64,
    pub duration: usize,
    pub attack_start: usize,
    /// Constant malicious input added through B during the replay window.
    #[serde(default)]
    pub malicious_input: Option<Vec<f64>>,
}

impl ReplayAttack {
    /// Replay of the `duration` steps immediately preceding `attack_start`.
    pub fn immediate(attack_start: usize, duration: usize) -> Self {
        ReplayAttack {
            record_start: attack_start as i64 - duration as i64,
            duration,
            attack_start,
            malicious_input: None,
        }
    }

    pub fn is_replaying(&self, k: usize) -> bool {
        k >= self.attack_start && k < self.attack_start + self.duration
    }

    fn is_recording(&self, k: i64) -> bool {
        k >= self.record_start && k < self.record_start + self.duration as i64
    }

    /// Check the windows against the horizon and the warm-up length.
    pub fn validate(&self, horizon: usize, warmup: usize, n_u: usize) -> Result<()> {
        if self.duration == 0 {
            return Err(Error::invalid("replay duration must be positive"));
        }
        if self.attack_start == 0 {
            return Err(Error::invalid("reported steps are numbered from 1"));
        }
        if self.record_start < 1 - warmup as i64 {
            return Err(Error::invalid(format!(
                "recording starts at step {} before the warm-up (first step {})",
                self.record_start,
                1 - warmup as i64
            )));
        }
        if self.record_start + self.duration as i64 > self.attack_start as i64 {
            return Err(Error::invalid(format!(
                "recording window [{}, {}) must end before the replay starts at {}",
                self.record_start,
                self.record_start + self.duration as i64,
                self.attack_start
            )));
        }
        if self.attack_start + self.duration - 1 > horizon {
            return Err(Error::invalid(format!(
                "replay window ends at step {} beyond the horizon {horizon}",
                self.attack_start + self.duration - 1
            )));
        }
        if let Some(ua) = &self.malicious_input {
            if ua.len() != n_u {
                return Err(Error::dim(format!("malicious input has {} entries, plant has {n_u} inputs", ua.len())));
            }
        }
        Ok(())
    }
}

/// Everything needed to simulate one closed loop with its detector.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub plant: PlantModel,
    pub controller: DynamicController,
    pub watermark: WatermarkSpec,
    pub kalman: KalmanDesign,
    pub detector: DetectorConfig,
    pub horizon: usize,
    /// Unreported steps simulated before step 1.
    pub warmup: usize,
    pub attack: Option<ReplayAttack>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.controller.check_against(&self.plant)?;
        self.watermark.check_against(&self.plant)?;
        self.detector.validate()?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if self.kalman.filter_gain.nrows() != self.plant.n_x() || self.kalman.filter_gain.ncols() != self.plant.n_y() {
            return Err(Error::dim("Kalman design does not match the plant"));
        }
        if let Some(att) = &self.attack {
            att.validate(self.horizon, self.warmup, self.plant.n_u())?;
        }
        Ok(())
    }
}

/// Per-step record of one simulated run. Index `i` is step `i + 1`.
#[derive(Clone, Debug, Default)]
pub struct SimulationTrace {
    pub x: Vec<DVector<f64>>,
    pub x_c: Vec<DVector<f64>>,
    /// One-step predictions x̂_{k|k−1}.
    pub x_hat: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// Measurements delivered to controller and estimator.
    pub y_delivered: Vec<DVector<f64>>,
    pub residues: Vec<DVector<f64>>,
    pub g: Vec<f64>,
    pub eta: Vec<f64>,
    pub alarm: Vec<bool>,
}

struct Prepared {
    u_sqrt: DMatrix<f64>,
    w_sqrt: DMatrix<f64>,
    v_sqrt: DMatrix<f64>,
    e0_sqrt: DMatrix<f64>,
    malicious: Option<DVector<f64>>,
    feed_watermark: bool,
}

fn prepare(scn: &Scenario) -> Result<Prepared> {
    scn.validate()?;
    Ok(Prepared {
        u_sqrt: linalg::sqrt_psd(&scn.watermark.u)?,
        w_sqrt: linalg::sqrt_psd(&scn.plant.w)?,
        v_sqrt: linalg::sqrt_psd(&scn.plant.v)?,
        e0_sqrt: linalg::sqrt_psd(&scn.kalman.plant_covariance)?,
        malicious: scn.attack.as_ref().and_then(|a| a.malicious_input.as_ref()).map(|v| DVector::from_column_slice(v)),
        feed_watermark: scn.kalman.treatment == WatermarkTreatment::Known,
    })
}

fn gaussian(rng: &mut ChaCha8Rng, sqrt_cov: &DMatrix<f64>) -> DVector<f64> {
    let xi = DVector::from_fn(sqrt_cov.ncols(), |_, _| StandardNormal.sample(rng));
    sqrt_cov * xi
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct TrialOutput {
    g: Vec<f64>,
    alarm: Vec<bool>,
    trace: Option<SimulationTrace>,
}

fn run_trial(scn: &Scenario, prep: &Prepared, seed: u64, attacked: bool, full: bool) -> Result<TrialOutput> {
    let plant = &scn.plant;
    let ctrl = &scn.controller;
    let n = plant.n_x();
    let attack = if attacked { scn.attack.as_ref() } else { None };
    let mut det = Detector::from_design(&scn.kalman, &scn.detector)?;
    let first = 1 - scn.warmup as i64;

    let mut rng0 = step_rng(seed, 0);
    let mut x = gaussian(&mut rng0, &prep.e0_sqrt);
    let mut x_hat = DVector::zeros(n);
    let mut x_c = DVector::zeros(n);
    let mut buffer: Vec<DVector<f64>> = Vec::new();

    let mut g = Vec::with_capacity(scn.horizon);
    let mut alarm = Vec::with_capacity(scn.horizon);
    let mut trace = if full { Some(SimulationTrace::default()) } else { None };

    for k in first..=scn.horizon as i64 {
        // stream 0 holds the initial error; warm-up steps come first
        let mut rng = step_rng(seed, (k - first + 1) as u64);
        let v = gaussian(&mut rng, &prep.v_sqrt);
        let du = gaussian(&mut rng, &prep.u_sqrt);
        let w = gaussian(&mut rng, &prep.w_sqrt);

        let y = &plant.c * &x + v;
        let mut replaying = false;
        let y_del = match attack {
            Some(att) => {
                if att.is_recording(k) {
                    buffer.push(y.clone());
                }
                if k >= 1 && att.is_replaying(k as usize) {
                    replaying = true;
                    buffer[k as usize - att.attack_start].clone()
                } else {
                    y.clone()
                }
            }
            None => y.clone(),
        };

        let r = &y_del - &plant.c * &x_hat;
        let reported = k >= 1;
        if k == 1 {
            det.reset();
        }
        let d = det.push(&r);
        if reported {
            g.push(d.g);
            alarm.push(d.alarm);
        }

        let u = &ctrl.c_c * &x_c;
        let mut u_plant = &u + &du;
        if replaying {
            if let Some(ua) = &prep.malicious {
                u_plant += ua;
            }
        }
        let x_filt = &x_hat + &scn.kalman.filter_gain * &r;
        let u_est = if prep.feed_watermark { &u + &du } else { u.clone() };
        let x_hat_next = &plant.a * x_filt + &plant.b * u_est;
        let x_c_next = &ctrl.a_c * &x_c + &ctrl.b_c * &y_del;
        let x_next = &plant.a * &x + &plant.b * u_plant + &plant.d * w;

        if let Some(tr) = trace.as_mut().filter(|_| reported) {
            tr.x.push(x.clone());
            tr.x_c.push(x_c.clone());
            tr.x_hat.push(x_hat.clone());
            tr.y.push(y);
            tr.y_delivered.push(y_del);
            tr.residues.push(r);
            tr.g.push(d.g);
            tr.eta.push(d.eta);
            tr.alarm.push(d.alarm);
        }
        x = x_next;
        x_hat = x_hat_next;
        x_c = x_c_next;
    }
    Ok(TrialOutput { g, alarm, trace })
}

/// Simulate one run (attacked if the scenario has an attack).
pub fn simulate(scn: &Scenario, seed: u64) -> Result<SimulationTrace> {
    let prep = prepare(scn)?;
    let out = run_trial(scn, &prep, seed, true, true)?;
    Ok(out.trace.expect("full trace requested"))
}

/// Per-step Monte-Carlo detection statistics.
#[derive(Clone, Debug, Serialize)]
pub struct DetectionReport {
    pub trials: usize,
    pub seed: u64,
    pub window: usize,
    pub alpha: f64,
    pub attack_start: Option<usize>,
    pub step: Vec<usize>,
    pub eta: Vec<f64>,
    /// Mean statistic over attacked runs.
    pub mean_g: Vec<f64>,
    /// Mean statistic over attack-free runs.
    pub mean_g_noattack: Vec<f64>,
    /// Alarm frequency over attacked runs.
    pub beta: Vec<f64>,
    pub beta_stderr: Vec<f64>,
    /// Alarm frequency over attack-free runs.
    pub alpha_hat: Vec<f64>,
    pub alpha_stderr: Vec<f64>,
    /// E[g_k] from the closed-form asymptotic prediction.
    pub theoretical_eg: Vec<f64>,
    pub metric: f64,
}

impl DetectionReport {
    /// CSV with one row per step.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "step,g_k,eta,alarm_flag,empirical_beta,theoretical_Eg,beta_stderr,empirical_alpha,alpha_stderr,g_k_noattack\n",
        );
        for i in 0..self.step.len() {
            s.push_str(&format!(
                "{},{:.10e},{:.10e},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                self.step[i],
                self.mean_g[i],
                self.eta[i],
                u8::from(self.beta[i] > 0.5),
                self.beta[i],
                self.theoretical_eg[i],
                self.beta_stderr[i],
                self.alpha_hat[i],
                self.alpha_stderr[i],
                self.mean_g_noattack[i]
            ));
        }
        s
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Run `trials` attacked and attack-free runs (trial `i` uses seed
/// `seed + i`) and aggregate per-step alarm rates.
pub fn monte_carlo_detection(scn: &Scenario, trials: usize, seed: u64, jobs: usize) -> Result<DetectionReport> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    let prep = prepare(scn)?;
    let runs: Vec<Result<(TrialOutput, TrialOutput)>> = pool(jobs)?.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let s = seed.wrapping_add(i as u64);
                let att = run_trial(scn, &prep, s, true, false)?;
                let clean = run_trial(scn, &prep, s, false, false)?;
                Ok((att, clean))
            })
            .collect()
    });
    let h = scn.horizon;
    let mut sum_g = vec![0.0; h];
    let mut sum_g0 = vec![0.0; h];
    let mut hits = vec![0usize; h];
    let mut hits0 = vec![0usize; h];
    for run in runs {
        let (att, clean) = run?;
        for k in 0..h {
            sum_g[k] += att.g[k];
            sum_g0[k] += clean.g[k];
            hits[k] += usize::from(att.alarm[k]);
            hits0[k] += usize::from(clean.alarm[k]);
        }
    }
    let nt = trials as f64;
    let rate = |c: usize| c as f64 / nt;
    let se = |p: f64| (p * (1.0 - p) / nt).sqrt();
    let pred = predict_replay_statistic(&scn.plant, &scn.kalman, &scn.watermark, &scn.detector)?;
    let m = scn.plant.n_y() as f64;
    let t = scn.detector.window;
    let per_step = |k: usize| match &scn.attack {
        Some(a) if a.is_replaying(k) => m + 2.0 * pred.metric,
        _ => m,
    };
    let thresholds = scn.detector.thresholds(scn.plant.n_y())?;
    let beta: Vec<f64> = hits.iter().map(|c| rate(*c)).collect();
    let alpha_hat: Vec<f64> = hits0.iter().map(|c| rate(*c)).collect();
    Ok(DetectionReport {
        trials,
        seed,
        window: t,
        alpha: scn.detector.alpha,
        attack_start: scn.attack.as_ref().map(|a| a.attack_start),
        step: (1..=h).collect(),
        eta: (1..=h).map(|k| thresholds[k.min(t) - 1]).collect(),
        mean_g: sum_g.iter().map(|s| s / nt).collect(),
        mean_g_noattack: sum_g0.iter().map(|s| s / nt).collect(),
        beta_stderr: beta.iter().map(|p| se(*p)).collect(),
        alpha_stderr: alpha_hat.iter().map(|p| se(*p)).collect(),
        beta,
        alpha_hat,
        theoretical_eg: (1..=h).map(|k| ((k + 1).saturating_sub(t).max(1)..=k).map(per_step).sum()).collect(),
        metric: pred.metric,
    })
}

/// Mean and standard error (across trials) of g_k averaged over `steps`
/// (1-based, half-open) in attacked runs.
pub fn mean_statistic(
    scn: &Scenario,
    trials: usize,
    seed: u64,
    steps: Range<usize>,
    jobs: usize,
) -> Result<(f64, f64)> {
    if trials < 2 {
        return Err(Error::invalid("need at least two trials for a standard error"));
    }
    if steps.start == 0 || steps.end > scn.horizon + 1 || steps.is_empty() {
        return Err(Error::invalid("step range must lie within 1..=horizon"));
    }
    let prep = prepare(scn)?;
    let means: Vec<Result<f64>> = pool(jobs)?.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let out = run_trial(scn, &prep, seed.wrapping_add(i as u64), true, false)?;
                let sel = &out.g[steps.start - 1..steps.end - 1];
                Ok(sel.iter().sum::<f64>() / sel.len() as f64)
            })
            .collect()
    });
    let means: Vec<f64> = means.into_iter().collect::<Result<_>>()?;
    let nt = means.len() as f64;
    let mean = means.iter().sum::<f64>() / nt;
    let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nt - 1.0);
    Ok((mean, (var / nt).sqrt()))
}

/// Sample covariance of the residues over `steps` (1-based, half-open)
/// pooled across attacked runs.
pub fn residue_covariance(
    scn: &Scenario,
    trials: usize,
    seed: u64,
    steps: Range<usize>,
    jobs: usize,
) -> Result<DMatrix<f64>> {
    if steps.start == 0 || steps.end > scn.horizon + 1 || steps.is_empty() {
        return Err(Error::invalid("step range must lie within 1..=horizon"));
    }
    let count = trials * steps.len();
    if count < 2 {
        return Err(Error::invalid("need at least two samples for a covariance"));
    }
    let prep = prepare(scn)?;
    let m = scn.plant.n_y();
    let moments: Vec<Result<(DVector<f64>, DMatrix<f64>)>> = pool(jobs)?.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let out = run_trial(scn, &prep, seed.wrapping_add(i as u64), true, true)?;
                let tr = out.trace.expect("full trace requested");
                let mut sum = DVector::zeros(m);
                let mut outer = DMatrix::zeros(m, m);
                for r in &tr.residues[steps.start - 1..steps.end - 1] {
                    sum += r;
                    outer += r * r.transpose();
                }
                Ok((sum, outer))
            })
            .collect()
    });
    let mut sum = DVector::zeros(m);
    let mut outer = DMatrix::zeros(m, m);
    for mo in moments {
        let (s, o) = mo?;
        sum += s;
        outer += o;
    }
    let n = count as f64;
    let mean = sum / n;
    Ok((outer - &mean * mean.transpose() * n) / (n - 1.0))
}

/// Fraction of alarms over disjoint full windows of attack-free runs.
pub fn false_alarm_rate(scn: &Scenario, trials: usize, seed: u64, jobs: usize) -> Result<(f64, usize)> {
    let prep = prepare(scn)?;
    let t = scn.detector.window;
    let counts: Vec<Result<(usize, usize)>> = pool(jobs)?.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let out = run_trial(scn, &prep, seed.wrapping_add(i as u64), false, false)?;
                let mut hits = 0;
                let mut windows = 0;
                let mut k = t;
                while k <= scn.horizon {
                    hits += usize::from(out.alarm[k - 1]);
                    windows += 1;
                    k += t;
                }
                Ok((hits, windows))
            })
            .collect()
    });
    let mut hits = 0;
    let mut windows = 0;
    for c in counts {
        let (h, w) = c?;
        hits += h;
        windows += w;
    }
    Ok((hits as f64 / windows as f64, windows))
}

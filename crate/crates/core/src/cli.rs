//! Command-line front end: `replay-guard <mode> --config <file> --out <dir>`.
//!
//! A JSON [`RunConfig`] selects the plant, watermark, detector and attack.
//! Every mode writes a JSON result, CSV data where applicable and a plain
//! text `summary.txt` table (watermark diagonal, H2 cost, detection metric).
//! Files are written atomically, and reruns with the same configuration and
//! seed produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::estimator::{kalman_riccati, KalmanOptions, WatermarkTreatment};
use crate::h2syn::{solve_h2, SynthesisOptions};
use crate::io::{self, write_atomic, write_json};
use crate::linalg;
use crate::model::{DynamicController, PlantModel, WatermarkSpec};
use crate::sim::{monte_carlo_detection, simulate, DetectionReport, ReplayAttack, Scenario};
use crate::watermark_opt::{problem_a, problem_b, problem_c, CodesignConfig, CodesignResult, WatermarkStructure};

/// Watermarks below this eigenvalue are lifted for controller synthesis.
const SYNTHESIS_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[value(name = "problem_a")]
    ProblemA,
    #[value(name = "problem_b")]
    ProblemB,
    #[value(name = "problem_c")]
    ProblemC,
    #[value(name = "simulate")]
    Simulate,
    #[value(name = "detect_curve")]
    DetectCurve,
}

#[derive(Debug, Parser)]
#[command(name = "replay-guard", version, about = "Watermark and controller co-design for replay-attack detection")]
pub struct Cli {
    #[arg(value_enum)]
    pub mode: Mode,
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Worker threads for Monte-Carlo trials (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Plant given by name (`"three_tank"`) or inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSource {
    Builtin(String),
    Inline(Box<PlantModel>),
}

impl Default for PlantSource {
    fn default() -> Self {
        PlantSource::Builtin("three_tank".into())
    }
}

impl PlantSource {
    pub fn resolve(&self) -> Result<PlantModel> {
        match self {
            PlantSource::Builtin(name) if name == "three_tank" => Ok(builtin_three_tank()),
            PlantSource::Builtin(name) => Err(Error::Config(format!("unknown built-in plant `{name}`"))),
            PlantSource::Inline(p) => {
                p.validate()?;
                Ok((**p).clone())
            }
        }
    }
}

/// Watermark covariance as `scale · I`, a diagonal, or a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WatermarkInput {
    Scale(f64),
    Diagonal { diag: Vec<f64> },
    Matrix(WatermarkSpec),
}

impl WatermarkInput {
    pub fn resolve(&self, plant: &PlantModel) -> Result<WatermarkSpec> {
        let wm = match self {
            WatermarkInput::Scale(s) => WatermarkSpec::scaled_identity(plant.n_u(), *s)?,
            WatermarkInput::Diagonal { diag } => WatermarkSpec::diagonal(diag)?,
            WatermarkInput::Matrix(spec) => WatermarkSpec::new(spec.u.clone())?,
        };
        wm.check_against(plant)?;
        Ok(wm)
    }
}

/// Co-design settings; unset fields take library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodesignSettings {
    /// H2 budget; defaults to the Problem-A bound at the configured watermark.
    #[serde(default)]
    pub j_ref: Option<f64>,
    #[serde(default)]
    pub structure: WatermarkStructure,
    #[serde(default)]
    pub trust_radius: Option<f64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub max_outer: Option<usize>,
}

fn default_horizon() -> usize {
    50
}
fn default_warmup() -> usize {
    200
}
fn default_trials() -> usize {
    2000
}
fn default_watermark() -> WatermarkInput {
    WatermarkInput::Scale(0.1)
}
fn default_sweep() -> Vec<WatermarkInput> {
    vec![WatermarkInput::Scale(0.01), WatermarkInput::Scale(0.05), WatermarkInput::Scale(0.1)]
}

/// Contents of the `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional; must agree with the command-line mode when present.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub plant: PlantSource,
    #[serde(default = "default_watermark")]
    pub watermark: WatermarkInput,
    /// Watermarks swept by `detect_curve`.
    #[serde(default = "default_sweep")]
    pub watermarks: Vec<WatermarkInput>,
    /// Fixed controller; synthesized by H2 design at the watermark if absent.
    #[serde(default)]
    pub controller: Option<DynamicController>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub treatment: WatermarkTreatment,
    /// Replay attack; defaults to replaying the 40 steps before step 11.
    #[serde(default)]
    pub attack: Option<ReplayAttack>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Write the full trace of the first attacked trial as `trace.csv`.
    #[serde(default)]
    pub dump_trace: bool,
    #[serde(default)]
    pub codesign: CodesignSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn attack(&self) -> ReplayAttack {
        self.attack.clone().unwrap_or_else(|| ReplayAttack::immediate(11, self.horizon.saturating_sub(10).max(1)))
    }
}

/// The three-tank benchmark plant.
pub fn builtin_three_tank() -> PlantModel {
    PlantModel::three_tank()
}

/// Resolved settings shared by every mode.
struct Context {
    mode: Mode,
    cfg: RunConfig,
    plant: PlantModel,
    out: PathBuf,
    jobs: usize,
}

/// Entry point used by the binary. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Execute one mode and write its artifacts under `cli.out`.
pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(m) = cfg.mode {
        if m != cli.mode {
            return Err(Error::Config(format!("config declares mode {m:?} but {:?} was requested", cli.mode)));
        }
    }
    cfg.mode = Some(cli.mode);
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let plant = cfg.plant.resolve()?;
    std::fs::create_dir_all(&cli.out)?;
    let ctx = Context { mode: cli.mode, cfg, plant, out: cli.out.clone(), jobs };
    match ctx.mode {
        Mode::ProblemA | Mode::ProblemB | Mode::ProblemC => run_codesign(&ctx),
        Mode::Simulate => run_simulate(&ctx),
        Mode::DetectCurve => run_detect_curve(&ctx),
    }
}

fn codesign_config(ctx: &Context) -> Result<CodesignConfig> {
    let s = &ctx.cfg.codesign;
    let mut c = CodesignConfig::new(ctx.cfg.watermark.resolve(&ctx.plant)?);
    c.structure = s.structure;
    c.trust_radius = s.trust_radius;
    if let Some(t) = s.tol {
        c.tol = t;
    }
    if let Some(m) = s.max_iter {
        c.max_iter = m;
    }
    if let Some(m) = s.max_outer {
        c.max_outer = m;
    }
    c.detector = ctx.cfg.detector;
    Ok(c)
}

/// Serializable view of a co-design result.
#[derive(Serialize)]
struct CodesignReport<'a> {
    problem: &'a str,
    #[serde(with = "io::matrix")]
    watermark: &'a DMatrix<f64>,
    watermark_diag: Vec<f64>,
    controller: &'a DynamicController,
    detection_metric: f64,
    detection_metric_unknown_watermark: f64,
    h2_cost: f64,
    trace_ybar: f64,
    j_ref: f64,
    converged: bool,
    note: Option<&'a str>,
    iterations: usize,
}

impl<'a> From<&'a CodesignResult> for CodesignReport<'a> {
    fn from(r: &'a CodesignResult) -> Self {
        CodesignReport {
            problem: r.problem,
            watermark: &r.watermark.u,
            watermark_diag: r.watermark.u.diagonal().iter().copied().collect(),
            controller: &r.controller,
            detection_metric: r.metric,
            detection_metric_unknown_watermark: r.literal_metric,
            h2_cost: r.h2_cost,
            trace_ybar: r.h2_bound,
            j_ref: r.j_ref,
            converged: r.converged,
            note: r.note.as_deref(),
            iterations: r.iterations.len(),
        }
    }
}

fn fmt_diag(m: &DMatrix<f64>) -> String {
    let parts: Vec<String> = m.diagonal().iter().map(|v| format!("{v:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Summary table with the columns of the benchmark comparison.
pub fn summary_table(rows: &[&CodesignResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:<48} {:>14} {:>14} {:>16} {:>24}",
        "problem", "watermark diag", "H2 cost", "trace(Ybar)", "detection metric", "metric (unknown U filter)"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:<48} {:>14.6} {:>14.6} {:>16.6} {:>24.6}",
            r.problem,
            fmt_diag(&r.watermark.u),
            r.h2_cost,
            r.h2_bound,
            r.metric,
            r.literal_metric
        );
    }
    s
}

fn run_codesign(ctx: &Context) -> Result<()> {
    let cc = codesign_config(ctx)?;
    let a = problem_a(&ctx.plant, &cc)?;
    let j_ref = ctx.cfg.codesign.j_ref.unwrap_or(a.j_ref);
    write_json(&ctx.out.join("result_a.json"), &CodesignReport::from(&a))?;
    let mut rows = vec![a.clone()];
    if matches!(ctx.mode, Mode::ProblemB | Mode::ProblemC) {
        let ctrl = ctx.cfg.controller.clone().unwrap_or_else(|| a.controller.clone());
        let b = problem_b(&ctx.plant, &ctrl, j_ref, &cc)?;
        write_json(&ctx.out.join("result_b.json"), &CodesignReport::from(&b))?;
        write_atomic(&ctx.out.join("iterations_b.csv"), b.iterations_csv().as_bytes())?;
        rows.push(b);
    }
    if ctx.mode == Mode::ProblemC {
        let c = problem_c(&ctx.plant, j_ref, &cc)?;
        write_json(&ctx.out.join("result_c.json"), &CodesignReport::from(&c))?;
        write_atomic(&ctx.out.join("iterations_c.csv"), c.iterations_csv().as_bytes())?;
        rows.push(c);
    }
    let refs: Vec<&CodesignResult> = rows.iter().collect();
    let mut table = summary_table(&refs);
    let _ = writeln!(table, "J_ref = {j_ref:.6}");
    write_atomic(&ctx.out.join("summary.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// Scenario for one watermark: configured controller, or the H2-optimal one.
fn build_scenario(ctx: &Context, wm: &WatermarkSpec) -> Result<Scenario> {
    let ctrl = match &ctx.cfg.controller {
        Some(c) => c.clone(),
        None => {
            let lifted = if linalg::min_eigenvalue(&wm.u) < SYNTHESIS_FLOOR {
                let n = wm.n_u();
                WatermarkSpec::new(&wm.u + DMatrix::identity(n, n) * SYNTHESIS_FLOOR)?
            } else {
                wm.clone()
            };
            solve_h2(&ctx.plant, &lifted, &SynthesisOptions::default())?.controller
        }
    };
    let kopts = KalmanOptions { treatment: ctx.cfg.treatment, ..KalmanOptions::default() };
    let kd = kalman_riccati(&ctx.plant, &ctrl, wm, &kopts)?;
    Ok(Scenario {
        plant: ctx.plant.clone(),
        controller: ctrl,
        watermark: wm.clone(),
        kalman: kd,
        detector: ctx.cfg.detector,
        horizon: ctx.cfg.horizon,
        warmup: ctx.cfg.warmup,
        attack: Some(ctx.cfg.attack()),
    })
}

fn require_seed(ctx: &Context) -> Result<u64> {
    ctx.cfg.seed.ok_or_else(|| Error::Config("simulation modes need a seed (config `seed` or --seed)".into()))
}

/// Curve statistics reported per watermark.
#[derive(Serialize)]
struct CurveSummary {
    watermark_diag: Vec<f64>,
    detection_metric: f64,
    pre_onset_beta: f64,
    asymptotic_beta: f64,
    mean_alpha: f64,
    csv: String,
}

fn curve_summary(rep: &DetectionReport, wm: &WatermarkSpec, attack: &ReplayAttack, csv: String) -> CurveSummary {
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let onset = attack.attack_start.min(rep.step.len() + 1);
    let end = (attack.attack_start + attack.duration - 1).min(rep.step.len());
    // second half of the replay window
    let tail_start = (onset + end).div_ceil(2).max(onset);
    CurveSummary {
        watermark_diag: wm.u.diagonal().iter().copied().collect(),
        detection_metric: rep.metric,
        pre_onset_beta: mean(&rep.beta[..onset - 1]),
        asymptotic_beta: if tail_start <= end { mean(&rep.beta[tail_start - 1..end]) } else { f64::NAN },
        mean_alpha: mean(&rep.alpha_hat),
        csv,
    }
}

fn trace_csv(scn: &Scenario, seed: u64) -> Result<String> {
    let tr = simulate(scn, seed)?;
    let mut s = String::from("step,g_k,eta,alarm");
    let ny = scn.plant.n_y();
    for i in 0..ny {
        let _ = write!(s, ",y{i},y_delivered{i},residue{i}");
    }
    s.push('\n');
    for k in 0..tr.g.len() {
        let _ = write!(s, "{},{:.10e},{:.10e},{}", k + 1, tr.g[k], tr.eta[k], u8::from(tr.alarm[k]));
        for i in 0..ny {
            let _ = write!(s, ",{:.10e},{:.10e},{:.10e}", tr.y[k][i], tr.y_delivered[k][i], tr.residues[k][i]);
        }
        s.push('\n');
    }
    Ok(s)
}

fn run_simulate(ctx: &Context) -> Result<()> {
    let seed = require_seed(ctx)?;
    let wm = ctx.cfg.watermark.resolve(&ctx.plant)?;
    let scn = build_scenario(ctx, &wm)?;
    let rep = monte_carlo_detection(&scn, ctx.cfg.trials, seed, ctx.jobs)?;
    let csv = rep.to_csv();
    write_atomic(&ctx.out.join("detection.csv"), csv.as_bytes())?;
    if ctx.cfg.dump_trace {
        write_atomic(&ctx.out.join("trace.csv"), trace_csv(&scn, seed)?.as_bytes())?;
    }
    let attack = ctx.cfg.attack();
    let summary = curve_summary(&rep, &wm, &attack, "detection.csv".into());
    write_json(&ctx.out.join("report.json"), &summary)?;
    let table = curve_table(&[summary], ctx.cfg.trials, seed);
    write_atomic(&ctx.out.join("summary.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn curve_table(rows: &[CurveSummary], trials: usize, seed: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "trials = {trials}, seed = {seed}");
    let _ = writeln!(
        s,
        "{:<48} {:>16} {:>14} {:>16} {:>12}  file",
        "watermark diag", "detection metric", "pre-onset rate", "asymptotic rate", "mean alpha"
    );
    for r in rows {
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&r.watermark_diag));
        let _ = writeln!(
            s,
            "{:<48} {:>16.6} {:>14.4} {:>16.4} {:>12.4}  {}",
            fmt_diag(&diag),
            r.detection_metric,
            r.pre_onset_beta,
            r.asymptotic_beta,
            r.mean_alpha,
            r.csv
        );
    }
    s
}

fn run_detect_curve(ctx: &Context) -> Result<()> {
    let seed = require_seed(ctx)?;
    if ctx.cfg.watermarks.is_empty() {
        return Err(Error::Config("detect_curve needs at least one watermark".into()));
    }
    let attack = ctx.cfg.attack();
    let mut rows = Vec::new();
    for (i, input) in ctx.cfg.watermarks.iter().enumerate() {
        let wm = input.resolve(&ctx.plant)?;
        let scn = build_scenario(ctx, &wm)?;
        let rep = monte_carlo_detection(&scn, ctx.cfg.trials, seed, ctx.jobs)?;
        let name = format!("detection_{i}.csv");
        write_atomic(&ctx.out.join(&name), rep.to_csv().as_bytes())?;
        rows.push(curve_summary(&rep, &wm, &attack, name));
    }
    write_json(&ctx.out.join("report.json"), &rows)?;
    let table = curve_table(&rows, ctx.cfg.trials, seed);
    write_atomic(&ctx.out.join("summary.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

//! Log-barrier interior-point method.
//!
//! Phase I minimizes `s` subject to `F_j(x) + s I ⪰ 0` from `x = 0`, stopping
//! at the first centered point with `s < 0`. Phase II follows the central
//! path of `t cᵀx − Σ_j log det F_j(x) − log(R² − ‖x‖²)` with damped Newton
//! steps, multiplying `t` by μ after each centering. The ball term keeps every
//! centering problem bounded; its weight vanishes along the path like the
//! others.

use nalgebra::{DMatrix, DVector};

use super::{LmiProblem, SdpError, SdpOptions, SdpStatus, Sense, Strictness};

pub(super) struct Outcome {
    pub status: SdpStatus,
    pub x: DVector<f64>,
    pub gap: f64,
    pub newton_decrement: f64,
    pub phase1_value: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

struct Block {
    size: usize,
    f0: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

struct Barrier {
    n: usize,
    blocks: Vec<Block>,
    radius_sq: f64,
    nu: f64,
}

struct Derivs {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

const CENTERING_TOL: f64 = 1e-10;
const MAX_INNER: usize = 200;

impl Barrier {
    fn from_problem(p: &LmiProblem, opts: &SdpOptions, phase1: bool) -> Self {
        let n = p.n_vars() + usize::from(phase1);
        let blocks: Vec<Block> = p
            .blocks()
            .iter()
            .map(|b| {
                let size = b.expr.rows();
                let d = if b.strictness == Strictness::Strict { opts.margin } else { 0.0 };
                let f0 = &b.expr.constant - DMatrix::identity(size, size) * d;
                let mut terms: Vec<(usize, DMatrix<f64>)> = b.expr.terms.iter().map(|(k, f)| (*k, f.clone())).collect();
                if phase1 {
                    terms.push((n - 1, DMatrix::identity(size, size)));
                }
                Block { size, f0, terms }
            })
            .collect();
        let nu = blocks.iter().map(|b| b.size as f64).sum::<f64>() + 1.0;
        Barrier { n, blocks, radius_sq: opts.radius * opts.radius, nu }
    }

    fn block_value(b: &Block, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = b.f0.clone();
        for (k, f) in &b.terms {
            let v = x[*k];
            if v != 0.0 {
                m += f * v;
            }
        }
        m
    }

    /// Squared norm restricted to the entries bounded by the ball. In Phase I
    /// the auxiliary `s` is excluded.
    fn ball_norm_sq(&self, x: &DVector<f64>, phase1: bool) -> f64 {
        let m = if phase1 { self.n - 1 } else { self.n };
        x.rows(0, m).norm_squared()
    }

    /// Barrier value `−Σ log det F_j − log(R² − ‖x‖²)`, or `None` outside the domain.
    fn value(&self, x: &DVector<f64>, phase1: bool) -> Option<f64> {
        let r = self.radius_sq - self.ball_norm_sq(x, phase1);
        if r <= 0.0 {
            return None;
        }
        let mut f = -r.ln();
        for b in &self.blocks {
            let chol = Self::block_value(b, x).cholesky()?;
            let l = chol.l_dirty();
            for i in 0..b.size {
                let d = l[(i, i)];
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                f -= 2.0 * d.ln();
            }
        }
        Some(f)
    }

    fn derivs(&self, x: &DVector<f64>, phase1: bool) -> Option<Derivs> {
        let mut grad = DVector::zeros(self.n);
        let mut hess = DMatrix::zeros(self.n, self.n);
        for b in &self.blocks {
            let chol = Self::block_value(b, x).cholesky()?;
            let l = chol.l();
            let ms: Vec<(usize, DMatrix<f64>)> = b
                .terms
                .iter()
                .map(|(k, f)| {
                    let z = l.solve_lower_triangular(f).expect("positive Cholesky diagonal");
                    let w = l.solve_lower_triangular(&z.transpose()).expect("positive Cholesky diagonal");
                    (*k, w)
                })
                .collect();
            for (a, (ka, ma)) in ms.iter().enumerate() {
                grad[*ka] -= ma.trace();
                for (kb, mb) in ms.iter().skip(a) {
                    let h = ma.dot(mb);
                    hess[(*ka, *kb)] += h;
                    if ka != kb {
                        hess[(*kb, *ka)] += h;
                    }
                }
            }
        }
        let m = if phase1 { self.n - 1 } else { self.n };
        let r = self.radius_sq - self.ball_norm_sq(x, phase1);
        if r <= 0.0 {
            return None;
        }
        for i in 0..m {
            grad[i] += 2.0 * x[i] / r;
            hess[(i, i)] += 2.0 / r;
            for j in 0..m {
                hess[(i, j)] += 4.0 * x[i] * x[j] / (r * r);
            }
        }
        Some(Derivs { grad, hess })
    }
}

/// Solve `H d = -g` with Jacobi scaling and an escalating ridge.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = hess[(i, i)];
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let hs = DMatrix::from_fn(n, n, |i, j| hess[(i, j)] * scale[i] * scale[j]);
    let gs = DVector::from_fn(n, |i, _| -grad[i] * scale[i]);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = hs.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let y = ch.solve(&gs);
            if y.iter().all(|v| v.is_finite()) {
                return Some(DVector::from_fn(n, |i, _| y[i] * scale[i]));
            }
        }
        ridge = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
    }
    None
}

struct Centering {
    x: DVector<f64>,
    decrement: f64,
    steps: usize,
}

/// Minimize `t cᵀx + φ(x)` by damped Newton from a strictly feasible `x`.
/// `early` lets Phase I stop as soon as the iterate satisfies its goal.
fn center(
    bar: &Barrier,
    c: &DVector<f64>,
    t: f64,
    mut x: DVector<f64>,
    phase1: bool,
    budget: usize,
) -> Result<Centering, SdpError> {
    let mut steps = 0;
    let mut decrement = f64::INFINITY;
    let mut fx =
        bar.value(&x, phase1).ok_or_else(|| SdpError::Numerical("centering started outside the domain".into()))?
            + t * c.dot(&x);
    while steps < budget.min(MAX_INNER) {
        let d = bar.derivs(&x, phase1).ok_or_else(|| SdpError::Numerical("lost positive definiteness".into()))?;
        let g = &d.grad + c * t;
        let dx = newton_direction(&d.hess, &g).ok_or_else(|| SdpError::Numerical("singular Newton system".into()))?;
        let slope = g.dot(&dx);
        decrement = (-slope).max(0.0).sqrt();
        if decrement * decrement / 2.0 <= CENTERING_TOL {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-14 {
            let cand = &x + &dx * alpha;
            if let Some(fb) = bar.value(&cand, phase1) {
                let fc = fb + t * c.dot(&cand);
                if fc <= fx + 0.25 * alpha * slope {
                    x = cand;
                    fx = fc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        steps += 1;
        if !accepted {
            // no further progress is representable at this t
            break;
        }
    }
    Ok(Centering { x, decrement, steps })
}

pub(super) fn solve(p: &LmiProblem, opts: &SdpOptions) -> Result<Outcome, SdpError> {
    let mut iterations = 0;

    // Phase I
    let bar1 = Barrier::from_problem(p, opts, true);
    let n = p.n_vars();
    let mut x1 = DVector::zeros(n + 1);
    let worst = bar1.blocks.iter().map(|b| crate::linalg::min_eigenvalue(&b.f0)).fold(f64::INFINITY, f64::min);
    let phase1_value;
    if worst > 0.0 {
        phase1_value = -worst;
    } else {
        x1[n] = -worst + 1.0_f64.max(0.1 * worst.abs());
        let mut c1 = DVector::zeros(n + 1);
        c1[n] = 1.0;
        let mut t = 1.0 / (1.0 + x1[n].abs());
        loop {
            let cen = center(&bar1, &c1, t, x1, true, opts.max_iter - iterations)?;
            iterations += cen.steps;
            x1 = cen.x;
            let s = x1[n];
            let gap = bar1.nu / t;
            if s < 0.0 {
                phase1_value = s;
                break;
            }
            let scale = 1.0 + bar1.blocks.iter().map(|b| crate::linalg::max_abs(&b.f0)).fold(0.0, f64::max);
            if s - gap > 0.0 || gap <= 1e-12 * scale || iterations >= opts.max_iter {
                log::debug!("sdp: phase I stopped at s = {s:.3e} (gap {gap:.3e}); infeasible");
                return Ok(Outcome {
                    status: SdpStatus::Infeasible,
                    x: x1.rows(0, n).into_owned(),
                    gap: f64::INFINITY,
                    newton_decrement: cen.decrement,
                    phase1_value: s,
                    iterations,
                    history: Vec::new(),
                });
            }
            t *= opts.mu;
        }
    }
    let mut x = x1.rows(0, n).into_owned();

    // Phase II
    let bar = Barrier::from_problem(p, opts, false);
    let (sign, c) = match &p.objective {
        Some((sense, e)) => {
            let sign = if *sense == Sense::Maximize { -1.0 } else { 1.0 };
            let mut c = DVector::zeros(n);
            for (k, f) in &e.terms {
                c[*k] = sign * f[(0, 0)];
            }
            (sign, c)
        }
        None => (1.0, DVector::zeros(n)),
    };
    let offset = p.objective.as_ref().map(|(_, e)| e.constant[(0, 0)]).unwrap_or(0.0);
    let user_obj = |x: &DVector<f64>| sign * c.dot(x) + offset;

    if c.iter().all(|v| *v == 0.0) {
        let cen = center(&bar, &c, 1.0, x, false, opts.max_iter.saturating_sub(iterations).max(1))?;
        iterations += cen.steps;
        return Ok(Outcome {
            status: SdpStatus::Optimal,
            x: cen.x,
            gap: 0.0,
            newton_decrement: cen.decrement,
            phase1_value,
            iterations,
            history: vec![offset],
        });
    }

    let mut t = bar.nu / user_obj(&x).abs().max(1.0);
    let mut history = Vec::new();
    loop {
        let remaining = opts.max_iter.saturating_sub(iterations);
        if remaining == 0 {
            return Ok(Outcome {
                status: SdpStatus::Stalled,
                x,
                gap: bar.nu / t,
                newton_decrement: f64::NAN,
                phase1_value,
                iterations,
                history,
            });
        }
        let cen = center(&bar, &c, t, x, false, remaining)?;
        iterations += cen.steps;
        x = cen.x;
        let obj = user_obj(&x);
        history.push(obj);
        let gap = bar.nu / t;
        if gap <= opts.tol * obj.abs().max(1.0) {
            return Ok(Outcome {
                status: SdpStatus::Optimal,
                x,
                gap,
                newton_decrement: cen.decrement,
                phase1_value,
                iterations,
                history,
            });
        }
        if !obj.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::Numerical("non-finite iterate".into()));
        }
        t *= opts.mu;
    }
}

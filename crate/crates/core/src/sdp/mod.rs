//! Small dense semidefinite programs over matrix-valued decision variables.
//!
//! Problems are posed as "minimize/maximize a linear scalar subject to a list
//! of affine symmetric blocks being positive (semi)definite" and solved with a
//! log-barrier interior-point method (see [`solver`]). Strict blocks are
//! enforced as `F(x) ⪰ δ I`.

mod affine;
mod solver;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use affine::Affine;

use crate::linalg;

/// Upper bound on the number of scalar decision variables.
pub const MAX_VARIABLES: usize = 5000;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("problem has {0} scalar variables, more than the supported {MAX_VARIABLES}")]
    TooLarge(usize),
    #[error("block `{0}` is not square")]
    NotSquare(String),
    #[error("block `{0}` is not symmetric (asymmetry {1:.3e})")]
    NotSymmetric(String, f64),
    #[error("objective must be a 1x1 expression")]
    BadObjective,
    #[error("problem has no constraint blocks")]
    NoBlocks,
    #[error("numerical breakdown: {0}")]
    Numerical(String),
}

impl From<SdpError> for crate::error::Error {
    fn from(e: SdpError) -> Self {
        match e {
            SdpError::Numerical(m) => crate::error::Error::Numerical(m),
            other => crate::error::Error::InvalidInput(other.to_string()),
        }
    }
}

/// Structure of a matrix decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    /// Symmetric `n×n`, packed as svec (off-diagonals scaled by √2).
    Symmetric,
    /// Unstructured `r×c`.
    Full,
    /// Diagonal `n×n`.
    Diagonal,
}

#[derive(Clone, Debug)]
pub struct MatrixVariable {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub structure: Structure,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strictness {
    /// `F(x) ⪰ δ I` with the solver margin δ.
    Strict,
    /// `F(x) ⪰ 0`.
    NonStrict,
}

#[derive(Clone, Debug)]
pub struct LmiBlock {
    pub name: String,
    pub expr: Affine,
    pub strictness: Strictness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug)]
pub struct SdpOptions {
    /// Relative duality-gap tolerance: stop when ν/t ≤ tol · max(1, |objective|).
    pub tol: f64,
    /// Cap on the total number of Newton steps (both phases).
    pub max_iter: usize,
    /// Barrier parameter growth factor.
    pub mu: f64,
    /// Margin δ for strict blocks.
    pub margin: f64,
    /// Radius of the Euclidean ball bounding the decision vector.
    pub radius: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { tol: 1e-7, max_iter: 500, mu: 10.0, margin: 1e-6, radius: 1e7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    /// Iteration cap reached from a strictly feasible point; the returned
    /// point is feasible but the gap target was not met.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Decision vector (svec packing).
    pub x: DVector<f64>,
    /// Objective in the user's sense (maximized value for `Maximize`).
    pub objective: f64,
    /// Barrier duality-gap bound ν/t at exit.
    pub gap: f64,
    /// Newton decrement at the final centering.
    pub newton_decrement: f64,
    /// Smallest eigenvalue over all blocks at `x` (before subtracting δ).
    pub min_eigenvalue: f64,
    /// Final Phase-I value: min s with F(x) + s I ⪰ δ I; positive means infeasible.
    pub phase1_value: f64,
    /// Total Newton steps.
    pub iterations: usize,
    /// Objective after each completed centering of Phase II.
    pub history: Vec<f64>,
    values: BTreeMap<String, DMatrix<f64>>,
}

impl SdpSolution {
    /// Value of a named decision variable.
    pub fn value(&self, name: &str) -> &DMatrix<f64> {
        self.values.get(name).unwrap_or_else(|| panic!("no decision variable named `{name}`"))
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

/// A semidefinite program under construction.
#[derive(Clone, Debug, Default)]
pub struct LmiProblem {
    variables: Vec<MatrixVariable>,
    n_vars: usize,
    blocks: Vec<LmiBlock>,
    objective: Option<(Sense, Affine)>,
}

static DUMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn variables(&self) -> &[MatrixVariable] {
        &self.variables
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    fn push_var(&mut self, name: &str, rows: usize, cols: usize, structure: Structure, len: usize) -> usize {
        assert!(self.variables.iter().all(|v| v.name != name), "duplicate decision variable `{name}`");
        let offset = self.n_vars;
        self.variables.push(MatrixVariable { name: name.to_string(), rows, cols, structure, offset, len });
        self.n_vars += len;
        offset
    }

    /// New symmetric `n×n` variable.
    pub fn symmetric(&mut self, name: &str, n: usize) -> Affine {
        let offset = self.push_var(name, n, n, Structure::Symmetric, n * (n + 1) / 2);
        let mut terms = BTreeMap::new();
        let mut k = offset;
        for j in 0..n {
            for i in 0..=j {
                let mut f = DMatrix::zeros(n, n);
                if i == j {
                    f[(i, i)] = 1.0;
                } else {
                    f[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                    f[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
                }
                terms.insert(k, f);
                k += 1;
            }
        }
        Affine::from_terms(n, n, terms)
    }

    /// New unstructured `rows×cols` variable.
    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> Affine {
        let offset = self.push_var(name, rows, cols, Structure::Full, rows * cols);
        let mut terms = BTreeMap::new();
        for j in 0..cols {
            for i in 0..rows {
                let mut f = DMatrix::zeros(rows, cols);
                f[(i, j)] = 1.0;
                terms.insert(offset + j * rows + i, f);
            }
        }
        Affine::from_terms(rows, cols, terms)
    }

    /// New diagonal `n×n` variable.
    pub fn diagonal(&mut self, name: &str, n: usize) -> Affine {
        let offset = self.push_var(name, n, n, Structure::Diagonal, n);
        let mut terms = BTreeMap::new();
        for i in 0..n {
            let mut f = DMatrix::zeros(n, n);
            f[(i, i)] = 1.0;
            terms.insert(offset + i, f);
        }
        Affine::from_terms(n, n, terms)
    }

    /// New scalar variable (a 1x1 expression).
    pub fn scalar(&mut self, name: &str) -> Affine {
        self.full(name, 1, 1)
    }

    /// Add the constraint `expr ⪰ 0` (or `⪰ δ I` when strict). The expression
    /// must be structurally symmetric.
    pub fn add_lmi(&mut self, name: &str, expr: Affine, strictness: Strictness) -> Result<(), SdpError> {
        if expr.rows() != expr.cols() {
            return Err(SdpError::NotSquare(name.to_string()));
        }
        let mut worst = relative_asymmetry(&expr.constant);
        for f in expr.terms.values() {
            worst = worst.max(relative_asymmetry(f));
        }
        if worst > 1e-10 {
            return Err(SdpError::NotSymmetric(name.to_string(), worst));
        }
        let expr = Affine {
            constant: linalg::symmetrize(&expr.constant),
            terms: expr
                .terms
                .into_iter()
                .map(|(k, f)| (k, linalg::symmetrize(&f)))
                .filter(|(_, f)| f.iter().any(|v| *v != 0.0))
                .collect(),
        };
        self.blocks.push(LmiBlock { name: name.to_string(), expr, strictness });
        Ok(())
    }

    pub fn minimize(&mut self, objective: Affine) -> Result<(), SdpError> {
        self.set_objective(Sense::Minimize, objective)
    }

    pub fn maximize(&mut self, objective: Affine) -> Result<(), SdpError> {
        self.set_objective(Sense::Maximize, objective)
    }

    fn set_objective(&mut self, sense: Sense, objective: Affine) -> Result<(), SdpError> {
        if objective.rows() != 1 || objective.cols() != 1 {
            return Err(SdpError::BadObjective);
        }
        self.objective = Some((sense, objective));
        Ok(())
    }

    /// Unpack the value of every decision variable from `x`.
    pub fn unpack(&self, x: &DVector<f64>) -> BTreeMap<String, DMatrix<f64>> {
        self.variables.iter().map(|v| (v.name.clone(), unpack_var(v, x))).collect()
    }

    /// Objective value at `x` in the user's sense (0 for feasibility problems).
    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective.as_ref().map(|(_, e)| e.eval_scalar(x)).unwrap_or(0.0)
    }

    /// Smallest eigenvalue over all constraint blocks at `x`.
    pub fn check_feasible(&self, x: &DVector<f64>) -> f64 {
        self.blocks.iter().map(|b| linalg::min_eigenvalue(&b.expr.eval(x))).fold(f64::INFINITY, f64::min)
    }

    /// Solve with the log-barrier interior-point method.
    pub fn solve(&self, opts: &SdpOptions) -> Result<SdpSolution, SdpError> {
        if self.n_vars > MAX_VARIABLES {
            return Err(SdpError::TooLarge(self.n_vars));
        }
        if self.blocks.is_empty() {
            return Err(SdpError::NoBlocks);
        }
        if log::log_enabled!(log::Level::Debug) {
            self.dump_debug(opts);
        }
        let out = solver::solve(self, opts)?;
        let values = self.unpack(&out.x);
        let objective = self.objective_value(&out.x);
        let min_eigenvalue = self.check_feasible(&out.x);
        log::debug!(
            "sdp: {} vars, {} blocks -> {:?}, objective {objective:.10e}, gap {:.3e}, {} Newton steps",
            self.n_vars,
            self.blocks.len(),
            out.status,
            out.gap,
            out.iterations
        );
        Ok(SdpSolution {
            status: out.status,
            x: out.x,
            objective,
            gap: out.gap,
            newton_decrement: out.newton_decrement,
            min_eigenvalue,
            phase1_value: out.phase1_value,
            iterations: out.iterations,
            history: out.history,
            values,
        })
    }

    /// SDPA sparse format (`.dat-s`). The SDPA primal is
    /// `min cᵀx s.t. Σ x_i F_i − F_0 ⪰ 0`, so `F_0 = −(constant − δ I)`.
    pub fn to_sdpa(&self, margin: f64) -> String {
        let mut s = String::new();
        let (sign, offset) = match &self.objective {
            Some((Sense::Maximize, e)) => (-1.0, -e.constant[(0, 0)]),
            Some((Sense::Minimize, e)) => (1.0, e.constant[(0, 0)]),
            None => (1.0, 0.0),
        };
        let _ = writeln!(s, "* objective constant offset {offset:.17e}");
        for v in &self.variables {
            let _ = writeln!(
                s,
                "* {} {}x{} {:?} entries {}..{}",
                v.name,
                v.rows,
                v.cols,
                v.structure,
                v.offset + 1,
                v.offset + v.len
            );
        }
        let _ = writeln!(s, "{}", self.n_vars);
        let _ = writeln!(s, "{}", self.blocks.len());
        let sizes: Vec<String> = self.blocks.iter().map(|b| b.expr.rows().to_string()).collect();
        let _ = writeln!(s, "{}", sizes.join(" "));
        let mut c = vec![0.0; self.n_vars];
        if let Some((_, e)) = &self.objective {
            for (k, f) in &e.terms {
                c[*k] = sign * f[(0, 0)];
            }
        }
        let cs: Vec<String> = c.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(s, "{}", cs.join(" "));
        for (bi, b) in self.blocks.iter().enumerate() {
            let d = if b.strictness == Strictness::Strict { margin } else { 0.0 };
            let f0 = -(&b.expr.constant - DMatrix::identity(b.expr.rows(), b.expr.rows()) * d);
            write_sdpa_matrix(&mut s, 0, bi + 1, &f0);
            for (k, f) in &b.expr.terms {
                write_sdpa_matrix(&mut s, k + 1, bi + 1, f);
            }
        }
        s
    }

    fn dump_debug(&self, opts: &SdpOptions) {
        let dir = std::env::var_os("REPLAY_GUARD_DUMP_DIR")
            .map(std::path::PathBuf::from)
            .unwrap_or_else(|| std::env::temp_dir().join("replay-guard-sdpa"));
        let idx = DUMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!("problem_{idx:05}.dat-s"));
        match crate::io::write_atomic(&path, self.to_sdpa(opts.margin).as_bytes()) {
            Ok(()) => log::debug!("sdp: wrote {}", path.display()),
            Err(e) => log::debug!("sdp: could not write {}: {e}", path.display()),
        }
    }
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    linalg::asymmetry(m) / linalg::max_abs(m).max(1.0)
}

fn write_sdpa_matrix(s: &mut String, mat: usize, block: usize, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            if m[(i, j)] != 0.0 {
                let _ = writeln!(s, "{mat} {block} {} {} {:.17e}", i + 1, j + 1, m[(i, j)]);
            }
        }
    }
}

fn unpack_var(v: &MatrixVariable, x: &DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(v.rows, v.cols);
    match v.structure {
        Structure::Symmetric => {
            let mut k = v.offset;
            for j in 0..v.cols {
                for i in 0..=j {
                    if i == j {
                        m[(i, i)] = x[k];
                    } else {
                        let val = x[k] * std::f64::consts::FRAC_1_SQRT_2;
                        m[(i, j)] = val;
                        m[(j, i)] = val;
                    }
                    k += 1;
                }
            }
        }
        Structure::Full => {
            for j in 0..v.cols {
                for i in 0..v.rows {
                    m[(i, j)] = x[v.offset + j * v.rows + i];
                }
            }
        }
        Structure::Diagonal => {
            for i in 0..v.rows {
                m[(i, i)] = x[v.offset + i];
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_packing_roundtrip() {
        let mut p = LmiProblem::new();
        let x = p.symmetric("X", 3);
        let xv = DVector::from_fn(6, |i, _| i as f64 + 1.0);
        let m = x.eval(&xv);
        assert_eq!(m, p.unpack(&xv)["X"]);
        assert!(linalg::asymmetry(&m) == 0.0);
        // Frobenius inner product equals the Euclidean one on svec coordinates
        let frob: f64 = m.iter().map(|v| v * v).sum();
        let eucl: f64 = xv.iter().map(|v| v * v).sum();
        assert!((frob - eucl).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_block() {
        let mut p = LmiProblem::new();
        let l = p.full("L", 2, 2);
        assert!(matches!(p.add_lmi("bad", l, Strictness::Strict), Err(SdpError::NotSymmetric(..))));
    }

    #[test]
    fn sdpa_dump_shape() {
        let mut p = LmiProblem::new();
        let t = p.scalar("t");
        p.add_lmi("lb", &t - &Affine::scalar(1.0), Strictness::NonStrict).unwrap();
        p.minimize(t).unwrap();
        let s = p.to_sdpa(1e-6);
        let lines: Vec<&str> = s.lines().filter(|l| !l.starts_with('*')).collect();
        assert_eq!(lines[0], "1");
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "1");
        assert!(lines.contains(&"0 1 1 1 1.00000000000000000e0"));
        assert!(lines.contains(&"1 1 1 1 1.00000000000000000e0"));
    }
}

//! Hand-built semidefinite programs with optima known from independent
//! computations (closed forms, eigen/SVD decompositions, series sums).

use nalgebra::{DMatrix, DVector};
use replay_guard::sdp::{Affine, LmiProblem, Strictness};

pub struct Case {
    pub name: &'static str,
    pub problem: LmiProblem,
    pub expected: f64,
}

fn sym3() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, -1.0, 3.0, 0.25, 0.5, 0.25, 1.5])
}

/// λ_max of a symmetric matrix by power iteration on M + shift·I.
fn power_lambda_max(m: &DMatrix<f64>) -> f64 {
    let shift = m.iter().map(|v| v.abs()).sum::<f64>();
    let ms = m + DMatrix::identity(m.nrows(), m.nrows()) * shift;
    let mut v = DVector::from_element(m.nrows(), 1.0);
    for _ in 0..20000 {
        let w = &ms * &v;
        v = &w / w.norm();
    }
    (v.transpose() * m * &v)[(0, 0)] / v.norm_squared()
}

/// Σ_k A^k Q (Aᵀ)^k truncated when terms fall below 1e-18.
fn lyap_series(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = q.clone();
    let mut term = q.clone();
    for _ in 0..10000 {
        term = a * term * a.transpose();
        x += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    x
}

pub fn cases() -> Vec<Case> {
    let mut out = Vec::new();

    // min t s.t. [[t,1],[1,t]] ⪰ 0  →  t = 1
    let mut p = LmiProblem::new();
    let t = p.scalar("t");
    let one = Affine::scalar(1.0);
    p.add_lmi("m", Affine::sym_block(&[vec![t.clone(), one.clone()], vec![t.clone()]]).unwrap(), Strictness::NonStrict)
        .unwrap();
    p.minimize(t).unwrap();
    out.push(Case { name: "two_by_two", problem: p, expected: 1.0 });

    // max γ s.t. 2 − γ ⪰ 0  →  2
    let mut p = LmiProblem::new();
    let g = p.scalar("gamma");
    p.add_lmi("ub", &Affine::scalar(2.0) - &g, Strictness::NonStrict).unwrap();
    p.maximize(g).unwrap();
    out.push(Case { name: "scalar_upper_bound", problem: p, expected: 2.0 });

    // min t s.t. t I − M ⪰ 0  →  λ_max(M)
    let m = sym3();
    let mut p = LmiProblem::new();
    let t = p.scalar("t");
    let ti = Affine::block_diag(&[t.clone(), t.clone(), t.clone()]).unwrap();
    p.add_lmi("lmax", &ti - &Affine::from(&m), Strictness::NonStrict).unwrap();
    p.minimize(t).unwrap();
    out.push(Case { name: "lambda_max", problem: p, expected: power_lambda_max(&m) });

    // max t s.t. M − t I ⪰ 0  →  λ_min(M) = −λ_max(−M)
    let mut p = LmiProblem::new();
    let t = p.scalar("t");
    let ti = Affine::block_diag(&[t.clone(), t.clone(), t.clone()]).unwrap();
    p.add_lmi("lmin", &Affine::from(&m) - &ti, Strictness::NonStrict).unwrap();
    p.maximize(t).unwrap();
    out.push(Case { name: "lambda_min", problem: p, expected: -power_lambda_max(&(-&m)) });

    // min trace X s.t. X − M ⪰ 0  →  trace M
    let mut p = LmiProblem::new();
    let x = p.symmetric("X", 3);
    p.add_lmi("dom", &x - &Affine::from(&m), Strictness::NonStrict).unwrap();
    p.minimize(x.trace()).unwrap();
    out.push(Case { name: "trace_dominance", problem: p, expected: m.trace() });

    // min trace P s.t. P − A P Aᵀ − Q ⪰ 0  →  trace of the Lyapunov solution
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, -0.2, 0.7]);
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
    let mut p = LmiProblem::new();
    let pv = p.symmetric("P", 2);
    let apa = (&a * &pv).right_mul(&a.transpose());
    p.add_lmi("lyap", &(&pv - &apa) - &Affine::from(&q), Strictness::NonStrict).unwrap();
    p.minimize(pv.trace()).unwrap();
    out.push(Case { name: "lyapunov", problem: p, expected: lyap_series(&a, &q).trace() });

    // min t s.t. [[t, bᵀ],[b, M]] ⪰ 0  →  bᵀ M⁻¹ b
    let b = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
    let mut p = LmiProblem::new();
    let t = p.scalar("t");
    p.add_lmi(
        "schur",
        Affine::sym_block(&[vec![t.clone(), Affine::from(b.transpose())], vec![Affine::from(&m)]]).unwrap(),
        Strictness::NonStrict,
    )
    .unwrap();
    p.minimize(t).unwrap();
    let sol = m.clone().lu().solve(&b).unwrap();
    out.push(Case { name: "schur_quadratic", problem: p, expected: (b.transpose() * sol)[(0, 0)] });

    // min x + y s.t. [[x,1],[1,y]] ⪰ 0  →  2
    let mut p = LmiProblem::new();
    let x = p.scalar("x");
    let y = p.scalar("y");
    p.add_lmi(
        "pair",
        Affine::sym_block(&[vec![x.clone(), one.clone()], vec![y.clone()]]).unwrap(),
        Strictness::NonStrict,
    )
    .unwrap();
    p.minimize(&x + &y).unwrap();
    out.push(Case { name: "coupled_pair", problem: p, expected: 2.0 });

    // min t s.t. [[t I, K],[Kᵀ, t I]] ⪰ 0  →  σ_max(K)
    let k = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
    let mut p = LmiProblem::new();
    let t = p.scalar("t");
    let t2 = Affine::block_diag(&[t.clone(), t.clone()]).unwrap();
    let t3 = Affine::block_diag(&[t.clone(), t.clone(), t.clone()]).unwrap();
    p.add_lmi("norm", Affine::sym_block(&[vec![t2, Affine::from(&k)], vec![t3]]).unwrap(), Strictness::NonStrict)
        .unwrap();
    p.minimize(t).unwrap();
    let kkt = &k * k.transpose();
    out.push(Case { name: "operator_norm", problem: p, expected: power_lambda_max(&kkt).sqrt() });

    // min t s.t. [[t, z − 3],[z − 3, 1]] ⪰ 0, z − 5 ⪰ 0  →  (5 − 3)² = 4
    let mut p = LmiProblem::new();
    let t = p.scalar("t");
    let z = p.full("z", 1, 1);
    let zm3 = &z - &Affine::scalar(3.0);
    p.add_lmi("sq", Affine::sym_block(&[vec![t.clone(), zm3], vec![one.clone()]]).unwrap(), Strictness::NonStrict)
        .unwrap();
    p.add_lmi("lb", &z - &Affine::scalar(5.0), Strictness::NonStrict).unwrap();
    p.minimize(t).unwrap();
    out.push(Case { name: "full_variable_bound", problem: p, expected: 4.0 });

    out
}

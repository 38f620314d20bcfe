//! Build and solve small semidefinite programs with the bundled solver.
//!
//! Run with `cargo run --example sdp_basics`.

use nalgebra::DMatrix;
use replay_guard::linalg;
use replay_guard::sdp::{Affine, LmiProblem, SdpOptions, Strictness};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Largest eigenvalue: min t s.t. t I − M ⪰ 0.
    let m = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, -1.0, 3.0, 0.25, 0.5, 0.25, 1.5]);
    let mut p = LmiProblem::new();
    let t = p.scalar("t");
    let ti = Affine::block_diag(&[t.clone(), t.clone(), t.clone()])?;
    p.add_lmi("lambda_max", &ti - &Affine::from(&m), Strictness::NonStrict)?;
    p.minimize(t)?;
    let sol = p.solve(&SdpOptions::default())?;
    println!(
        "λ_max: SDP {:.8}, eigen-decomposition {:.8} ({} Newton steps)",
        sol.objective,
        linalg::max_eigenvalue(&m),
        sol.iterations
    );

    // Lyapunov bound: min trace P s.t. P − A P Aᵀ − Q ≻ 0.
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.7]);
    let q = DMatrix::identity(2, 2);
    let mut p = LmiProblem::new();
    let x = p.symmetric("P", 2);
    let lyap = &(&x - &(&(&a * &x) * &a.transpose())) - &Affine::from(&q);
    p.add_lmi("lyapunov", lyap, Strictness::Strict)?;
    p.minimize(x.trace())?;
    let sol = p.solve(&SdpOptions::default())?;
    let exact = linalg::dlyap(&a, &q)?;
    println!("trace P: SDP {:.6}, Lyapunov solve {:.6}", sol.objective, exact.trace());
    println!("P =\n{:.6}", sol.value("P"));

    // The same problem in SDPA sparse format, for cross-checking elsewhere.
    println!("{}", p.to_sdpa(SdpOptions::default().margin));
    Ok(())
}

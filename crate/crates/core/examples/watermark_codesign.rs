//! Watermark optimization at a fixed controller and joint co-design under
//! the H2 budget of the baseline design.
//!
//! Run with `cargo run --release --example watermark_codesign`.

use replay_guard::model::{PlantModel, WatermarkSpec};
use replay_guard::watermark_opt::{problem_a, problem_b, problem_c, CodesignConfig, CodesignResult};

fn row(r: &CodesignResult) {
    let diag: Vec<String> = r.watermark.u.diagonal().iter().map(|v| format!("{v:.4}")).collect();
    println!(
        "{:<3} U diag [{}]  H2 cost {:.4}  metric {:.2}  ({} iterations)",
        r.problem,
        diag.join(", "),
        r.h2_cost,
        r.metric,
        r.iterations.len()
    );
}

fn main() -> replay_guard::Result<()> {
    let plant = PlantModel::three_tank();
    let cfg = CodesignConfig::new(WatermarkSpec::scaled_identity(plant.n_u(), 0.1)?);

    // Baseline: H2-optimal controller for the reference watermark; its cost
    // is the budget for the other problems.
    let a = problem_a(&plant, &cfg)?;
    let b = problem_b(&plant, &a.controller, a.j_ref, &cfg)?;
    let c = problem_c(&plant, a.j_ref, &cfg)?;
    println!("budget J_ref = {:.6}", a.j_ref);
    for r in [&a, &b, &c] {
        row(r);
    }
    if let Some(note) = &c.note {
        println!("note: {note}");
    }
    print!("\n{}", b.iterations_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!("\n...");
    Ok(())
}

//! Solves the OPF for a case file and prints per-bus marginal prices.
//!
//!     cargo run --release --example solve_case -- cases/ieee14.case

use std::time::Instant;

use lmp_core::grid::parse_case;
use lmp_core::opf::{solve_opf, IpmOptions, OpfProblem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "cases/ieee14.case".into());
    let case = parse_case(&std::fs::read_to_string(&path)?)?;
    let problem = OpfProblem::new(case)?;
    let start = Instant::now();
    let sol = solve_opf(&problem, &IpmOptions::default())?;
    let elapsed = start.elapsed();
    let d = &sol.diagnostics;
    println!(
        "{path}: objective {:.4} $/h, {} iterations, kkt {:.2e} ({:?})",
        sol.objective, d.iterations, d.kkt_residual, elapsed
    );
    println!("bus    |V|       angle(deg)   lambda($/MWh)");
    for (i, bus) in problem.case.buses.iter().enumerate() {
        println!(
            "{:>4}  {:.5}  {:>10.4}  {:>12.5}",
            bus.id,
            sol.v_mag[i],
            sol.v_ang[i].to_degrees(),
            sol.lambda[i]
        );
    }
    Ok(())
}

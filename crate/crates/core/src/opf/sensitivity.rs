use super::{solve_opf, IpmOptions, OpfError, OpfProblem, OpfSolution};

/// Solver settings for the re-solves: a tighter tolerance keeps the barrier
/// error in the objective well below the finite-difference signal.
pub fn perturbation_options() -> IpmOptions {
    IpmOptions {
        tol: 1e-10,
        max_iter: 300,
        ..IpmOptions::default()
    }
}

/// Central difference of the optimal cost with respect to the active load at
/// `bus`, `(f(P_L + ε) − f(P_L − ε)) / 2ε` in $/MWh.
///
/// The estimate equals the bus LMP only while the binding constraints stay
/// the same; a change between the two re-solves is reported as
/// `ActiveSetChanged` carrying the estimate anyway.
pub fn verify_lmp_by_perturbation(
    problem: &OpfProblem,
    solution: &OpfSolution,
    bus: u32,
    eps: f64,
) -> Result<f64, OpfError> {
    debug_assert_eq!(solution.lambda.len(), problem.layout.n_bus);
    let idx = problem.y.index_of(bus).ok_or(OpfError::UnknownBus(bus))?;
    let opts = perturbation_options();
    let resolve = |delta: f64| {
        let mut case = problem.case.clone();
        case.buses[idx].p_load += delta;
        let perturbed = OpfProblem::with_admittance(case, problem.y.clone());
        solve_opf(&perturbed, &opts).map_err(|e| OpfError::ResolveFailed(Box::new(e)))
    };
    let up = resolve(eps)?;
    let down = resolve(-eps)?;
    let estimate = (up.objective - down.objective) / (2.0 * eps);
    let changed = up
        .active
        .iter()
        .zip(&down.active)
        .filter(|(a, b)| a != b)
        .count();
    if changed > 0 {
        return Err(OpfError::ActiveSetChanged { changed, estimate });
    }
    Ok(estimate)
}

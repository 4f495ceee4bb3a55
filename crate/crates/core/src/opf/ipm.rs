//! Primal-dual log-barrier interior-point method.
//!
//! Solves `min f(x)  s.t.  g(x) = 0,  h(x) + s = 0,  s > 0` by Newton steps
//! on the perturbed KKT system
//!
//! ```text
//! ∇f − Jgᵀλ + Jhᵀz = 0,   g = 0,   h + s = 0,   s∘z = γ
//! ```
//!
//! with `γ = σ·sᵀz/m` reduced monotonically. Slacks and inequality
//! multipliers are eliminated, leaving the symmetric indefinite system
//!
//! ```text
//! [ W + Jhᵀ S⁻¹Z Jh   −Jgᵀ ] [Δx]   [ −∇L − Jhᵀ S⁻¹(γ + Z h) ]
//! [ −Jg                 0  ] [Δλ] = [  g                     ]
//! ```
//!
//! which is factored densely. The objective is divided by a cost scale so
//! residuals are comparable across cases; duals are rescaled on output.

use super::problem::{OperatingPoint, OpfProblem, VarBound};
use super::{OpfError, OpfSolution, SolveDiagnostics, SolveStatus};
use crate::linalg::{Lu, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    /// Bound on the ∞-norm of stationarity, feasibility and complementarity.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial inequality multiplier.
    pub mu0: f64,
    /// Barrier reduction factor.
    pub sigma: f64,
    /// Fraction-to-boundary factor.
    pub step_fraction: f64,
    /// Initial slack margin added to `−h(x₀)`.
    pub slack_margin: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol: 1e-6,
            max_iter: 200,
            mu0: 1.0,
            sigma: 0.2,
            step_fraction: 0.99995,
            slack_margin: 0.1,
        }
    }
}

struct Residuals {
    stationarity: f64,
    feasibility: f64,
    complementarity: f64,
}

impl Residuals {
    fn max(&self) -> f64 {
        self.stationarity
            .max(self.feasibility)
            .max(self.complementarity)
    }
}

struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    lambda: Vec<f64>,
    z: Vec<f64>,
}

/// Objective normalizer: the largest marginal cost magnitude at the bound
/// midpoints, in $/h per per-unit.
pub(crate) fn cost_scale(problem: &OpfProblem) -> f64 {
    let base = problem.base();
    let mid: Vec<f64> = problem
        .case
        .generators
        .iter()
        .map(|g| 0.5 * (g.p_min + g.p_max) / base)
        .collect();
    let scale = problem
        .cost_gradient(&mid)
        .into_iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale > 0.0 {
        scale
    } else {
        1.0
    }
}

fn flat_start(problem: &OpfProblem) -> OperatingPoint {
    let base = problem.base();
    let case = &problem.case;
    OperatingPoint {
        v_mag: case
            .buses
            .iter()
            .map(|b| {
                if (b.v_min..=b.v_max).contains(&1.0) {
                    1.0
                } else {
                    0.5 * (b.v_min + b.v_max)
                }
            })
            .collect(),
        v_ang: vec![0.0; case.n_buses()],
        p_gen: case
            .generators
            .iter()
            .map(|g| 0.5 * (g.p_min + g.p_max) / base)
            .collect(),
        q_gen: case
            .generators
            .iter()
            .map(|g| 0.5 * (g.q_min + g.q_max) / base)
            .collect(),
    }
}

struct Evaluation {
    pt: OperatingPoint,
    g: Vec<f64>,
    jg: Matrix,
    h: Vec<f64>,
    grad_l: Vec<f64>,
    residuals: Residuals,
}

fn evaluate(problem: &OpfProblem, bounds: &[VarBound], scale: f64, it: &Iterate) -> Evaluation {
    let lay = &problem.layout;
    let pt = problem.unpack(&it.x);
    let g = problem.balance(&pt);
    let jg = problem.balance_jacobian(&pt);
    let h: Vec<f64> = bounds.iter().map(|b| b.eval(&it.x)).collect();

    let mut grad_l = jg.tr_matvec(&it.lambda);
    grad_l.iter_mut().for_each(|v| *v = -*v);
    for (k, d) in problem.cost_gradient(&pt.p_gen).into_iter().enumerate() {
        grad_l[lay.pg(k)] += d / scale;
    }
    for (b, z) in bounds.iter().zip(&it.z) {
        grad_l[b.var] += b.sign() * z;
    }

    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0_f64, |m, x| m.max(x.abs()));
    let feas_g = inf(&mut g.iter().copied());
    let feas_h = inf(&mut h.iter().zip(&it.s).map(|(h, s)| h + s));
    let viol_h = h.iter().fold(0.0_f64, |m, &v| m.max(v));
    let residuals = Residuals {
        stationarity: inf(&mut grad_l.iter().copied()),
        feasibility: feas_g.max(feas_h).max(viol_h),
        complementarity: inf(&mut h.iter().zip(&it.z).map(|(h, z)| h * z)),
    };
    Evaluation {
        pt,
        g,
        jg,
        h,
        grad_l,
        residuals,
    }
}

fn max_step(v: &[f64], dv: &[f64], fraction: f64) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -fraction * v / d)
        .fold(1.0, f64::min)
}

/// Solves the AC OPF from a flat start.
///
/// Returns `Err(MaxIterations)` or `Err(Infeasible)` carrying the best
/// iterate when the method fails to reach `opts.tol`.
pub fn solve_opf(problem: &OpfProblem, opts: &IpmOptions) -> Result<OpfSolution, OpfError> {
    problem
        .case
        .check_generator_limits()
        .map_err(|e| OpfError::InfeasibleBounds(e.to_string()))?;
    if let Some(b) = problem.case.buses.iter().find(|b| b.v_min > b.v_max) {
        return Err(OpfError::InfeasibleBounds(format!(
            "bus {}: v_min {} > v_max {}",
            b.id, b.v_min, b.v_max
        )));
    }

    let lay = &problem.layout;
    let nx = lay.n_vars();
    let neq = problem.n_eq();
    let bounds = problem.bounds();
    let m = bounds.len();
    let scale = cost_scale(problem);
    let curvature: Vec<f64> = problem.cost_curvature().iter().map(|c| c / scale).collect();

    let x0 = problem.pack(&flat_start(problem));
    let s0 = bounds
        .iter()
        .map(|b| (-b.eval(&x0)).max(0.0) + opts.slack_margin)
        .collect();
    let mut it = Iterate {
        x: x0,
        s: s0,
        lambda: vec![0.0; neq],
        z: vec![opts.mu0; m],
    };

    let mut best: Option<(f64, usize, Iterate)> = None;
    let mut kkt = Matrix::zeros(nx + neq, nx + neq);

    for iter in 0..=opts.max_iter {
        let ev = evaluate(problem, &bounds, scale, &it);
        let res = ev.residuals.max();
        if !res.is_finite() {
            let (_, at, b) = best.unwrap_or((f64::INFINITY, iter, it));
            let sol = build_solution(problem, &bounds, scale, &b, at, SolveStatus::Infeasible);
            return Err(OpfError::Infeasible(Box::new(sol)));
        }
        if res <= opts.tol {
            return Ok(build_solution(
                problem,
                &bounds,
                scale,
                &it,
                iter,
                SolveStatus::Converged,
            ));
        }
        if best.as_ref().is_none_or(|(r, _, _)| res < *r) {
            best = Some((
                res,
                iter,
                Iterate {
                    x: it.x.clone(),
                    s: it.s.clone(),
                    lambda: it.lambda.clone(),
                    z: it.z.clone(),
                },
            ));
        }
        if iter == opts.max_iter {
            break;
        }

        let gap: f64 = it.s.iter().zip(&it.z).map(|(s, z)| s * z).sum();
        let gamma = if m > 0 {
            opts.sigma * gap / m as f64
        } else {
            0.0
        };

        // Assemble the reduced KKT matrix.
        kkt.fill(0.0);
        let n = lay.n_bus;
        let (lam, nu) = it.lambda.split_at(n);
        let mut hess = Matrix::zeros(nx, nx);
        problem.balance_lagrangian_hessian(&ev.pt, lam, nu, &mut hess);
        for (k, c) in curvature.iter().enumerate() {
            hess[(lay.pg(k), lay.pg(k))] += c;
        }
        let mut rhs = vec![0.0; nx + neq];
        for (r, v) in ev.grad_l.iter().enumerate() {
            rhs[r] = -v;
        }
        for (idx, b) in bounds.iter().enumerate() {
            let (s, z, h) = (it.s[idx], it.z[idx], ev.h[idx]);
            hess[(b.var, b.var)] += z / s;
            rhs[b.var] -= b.sign() * (gamma + z * h) / s;
        }
        rhs[nx..].copy_from_slice(&ev.g);
        for r in 0..nx {
            for c in 0..nx {
                kkt[(r, c)] = hess[(r, c)];
            }
        }
        for r in 0..neq {
            for c in 0..nx {
                let v = -ev.jg[(r, c)];
                kkt[(nx + r, c)] = v;
                kkt[(c, nx + r)] = v;
            }
        }

        let step = factor_with_regularization(&kkt, nx, neq)
            .ok_or(OpfError::SingularKktSystem { iteration: iter })?
            .solve(&rhs);
        let (dx, dlam) = step.split_at(nx);

        let mut ds = vec![0.0; m];
        let mut dz = vec![0.0; m];
        for (idx, b) in bounds.iter().enumerate() {
            let jdx = b.sign() * dx[b.var];
            ds[idx] = -(ev.h[idx] + it.s[idx]) - jdx;
            dz[idx] = (gamma + it.z[idx] * ev.h[idx] + it.z[idx] * jdx) / it.s[idx];
        }
        let alpha_p = max_step(&it.s, &ds, opts.step_fraction);
        let alpha_d = max_step(&it.z, &dz, opts.step_fraction);
        for (x, d) in it.x.iter_mut().zip(dx) {
            *x += alpha_p * d;
        }
        for (s, d) in it.s.iter_mut().zip(&ds) {
            *s += alpha_p * d;
        }
        for (l, d) in it.lambda.iter_mut().zip(dlam) {
            *l += alpha_d * d;
        }
        for (z, d) in it.z.iter_mut().zip(&dz) {
            *z += alpha_d * d;
        }
    }

    let (_, at, b) = best.expect("at least one iterate evaluated");
    let sol = build_solution(problem, &bounds, scale, &b, at, SolveStatus::MaxIter);
    Err(OpfError::MaxIterations(Box::new(sol)))
}

/// LU of the KKT matrix; on a singular pivot retries with growing primal and
/// dual diagonal regularization.
fn factor_with_regularization(kkt: &Matrix, nx: usize, neq: usize) -> Option<Lu> {
    if let Ok(lu) = Lu::factor(kkt.clone(), 0.0) {
        return Some(lu);
    }
    let mut delta = 1e-8;
    while delta <= 1e2 {
        let mut reg = kkt.clone();
        for i in 0..nx {
            reg[(i, i)] += delta;
        }
        for i in nx..nx + neq {
            reg[(i, i)] -= delta * 1e-2;
        }
        if let Ok(lu) = Lu::factor(reg, 0.0) {
            return Some(lu);
        }
        delta *= 100.0;
    }
    None
}

fn build_solution(
    problem: &OpfProblem,
    bounds: &[VarBound],
    scale: f64,
    it: &Iterate,
    iterations: usize,
    status: SolveStatus,
) -> OpfSolution {
    let ev = evaluate(problem, bounds, scale, it);
    let base = problem.base();
    let n = problem.layout.n_bus;
    let pt = ev.pt;
    let dual = scale / base;
    OpfSolution {
        v_mag: pt.v_mag,
        v_ang: pt.v_ang,
        p_gen: pt.p_gen.iter().map(|p| p * base).collect(),
        q_gen: pt.q_gen.iter().map(|q| q * base).collect(),
        lambda: it.lambda[..n].iter().map(|l| l * dual).collect(),
        nu: it.lambda[n..].iter().map(|l| l * dual).collect(),
        mu: bounds
            .iter()
            .zip(&it.z)
            .map(|(b, z)| z * scale / b.unit)
            .collect(),
        slack: bounds.iter().zip(&ev.h).map(|(b, h)| -h * b.unit).collect(),
        active: it.z.iter().zip(&it.s).map(|(z, s)| z > s).collect(),
        objective: problem.cost(&pt.p_gen),
        diagnostics: SolveDiagnostics {
            iterations,
            kkt_residual: ev.residuals.max(),
            stationarity: ev.residuals.stationarity,
            feasibility: ev.residuals.feasibility,
            complementarity: ev.residuals.complementarity,
            cost_scale: scale,
            status,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_case;

    fn one_bus(load: f64) -> OpfProblem {
        let text = format!(
            "BUS\n1, slack, {load}, 0, 0.95, 1.05, 0, 0\nGEN\n1, 0, 200, -100, 100, 0.01, 20, 0\n"
        );
        OpfProblem::new(parse_case(&text).unwrap()).unwrap()
    }

    #[test]
    fn single_bus_price_is_marginal_cost() {
        let sol = solve_opf(&one_bus(100.0), &IpmOptions::default()).unwrap();
        assert!(sol.converged());
        assert!((sol.p_gen[0] - 100.0).abs() < 1e-6);
        assert!((sol.lambda[0] - 22.0).abs() < 1e-6, "{}", sol.lambda[0]);
        assert!((sol.objective - (0.01 * 1e4 + 2000.0)).abs() < 1e-4);
    }

    #[test]
    fn capped_cheap_unit_sets_expensive_price() {
        let case = parse_case(
            "BUS\n1, slack, 100, 0, 0.95, 1.05, 0, 0\n\
             GEN\n1, 0, 50, -50, 50, 0, 10, 0\n1, 0, 200, -50, 50, 0, 30, 0\n",
        )
        .unwrap();
        let problem = OpfProblem::new(case).unwrap();
        // Barrier bias at the default tolerance is O(1e-5) $/MWh.
        for (opts, tol) in [
            (IpmOptions::default(), 1e-4),
            (crate::opf::perturbation_options(), 1e-6),
        ] {
            let sol = solve_opf(&problem, &opts).unwrap();
            assert!((sol.lambda[0] - 30.0).abs() < tol, "{}", sol.lambda[0]);
            // P_G upper bound of generator 0 sits at index n_gen + 0.
            assert!((sol.mu[2] - 20.0).abs() < tol, "{:?}", sol.mu);
            assert!(sol.active[2]);
            assert!((sol.p_gen[0] - 50.0).abs() < 1e-3);
            assert!((sol.p_gen[1] - 50.0).abs() < 1e-3);
        }
    }

    #[test]
    fn lossless_line_has_uniform_price() {
        let case = parse_case(
            "BUS\n1, slack, 0, 0, 0.9, 1.1, 0, 0\n2, pq, 80, 10, 0.9, 1.1, 0, 0\n\
             BRANCH\n1, 2, 0, 0.1, 0, 1\nGEN\n1, 0, 200, -100, 100, 0.02, 15, 0\n",
        )
        .unwrap();
        let sol = solve_opf(&OpfProblem::new(case).unwrap(), &IpmOptions::default()).unwrap();
        assert!(
            (sol.lambda[0] - sol.lambda[1]).abs() < 1e-6,
            "{:?}",
            sol.lambda
        );
        assert!((sol.lambda[0] - (2.0 * 0.02 * 80.0 + 15.0)).abs() < 1e-4);
    }

    #[test]
    fn price_is_monotone_in_load() {
        let mut last = f64::NEG_INFINITY;
        for load in [20.0, 60.0, 100.0, 140.0, 180.0] {
            let sol = solve_opf(&one_bus(load), &IpmOptions::default()).unwrap();
            assert!(sol.lambda[0] >= last);
            last = sol.lambda[0];
        }
    }

    #[test]
    fn inverted_generator_limits_fail_before_solving() {
        let mut problem = one_bus(100.0);
        problem.case.generators[0].p_min = 300.0;
        assert!(matches!(
            solve_opf(&problem, &IpmOptions::default()),
            Err(OpfError::InfeasibleBounds(_))
        ));
    }

    #[test]
    fn iteration_cap_returns_best_iterate() {
        let opts = IpmOptions {
            max_iter: 2,
            ..IpmOptions::default()
        };
        match solve_opf(&one_bus(100.0), &opts) {
            Err(OpfError::MaxIterations(sol)) => {
                assert_eq!(sol.diagnostics.status, SolveStatus::MaxIter);
                assert!(sol.diagnostics.iterations <= 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_beyond_capacity_does_not_converge() {
        let err = solve_opf(&one_bus(500.0), &IpmOptions::default()).unwrap_err();
        assert!(
            err.partial_solution().is_some() || matches!(err, OpfError::SingularKktSystem { .. })
        );
    }
}

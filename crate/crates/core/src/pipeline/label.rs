use rayon::prelude::*;

use super::dataset::{Dataset, DatasetMeta, Sample};
use super::{Mode, PipelineError, Scenario};
use crate::grid::{build_admittance, GridCase};
use crate::opf::{solve_opf, IpmOptions, OpfProblem, OpfSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOptions {
    pub ipm: IpmOptions,
    /// Largest tolerated share of failed solves.
    pub max_failure_rate: f64,
    /// Seed of the train/test shuffle (predict mode).
    pub split_seed: u64,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            ipm: IpmOptions::default(),
            max_failure_rate: 0.05,
            split_seed: 0,
        }
    }
}

/// Solve every scenario (in parallel; results keep input order) and build
/// the dataset. Scenarios whose solve fails are dropped; in forecast mode a
/// pair needs both its input step and the following step.
pub fn label_dataset(
    case: &GridCase,
    scenarios: &[Scenario],
    mode: Mode,
    opts: &LabelOptions,
) -> Result<Dataset, PipelineError> {
    let y = build_admittance(case)?;
    // Fail fast on static problems such as inverted limits.
    OpfProblem::new(case.clone())?;
    let solutions: Vec<Option<OpfSolution>> = scenarios
        .par_iter()
        .map(|s| {
            let problem = OpfProblem::with_admittance(s.apply(case), y.clone());
            solve_opf(&problem, &opts.ipm).ok()
        })
        .collect();
    let failed = solutions.iter().filter(|s| s.is_none()).count();
    let total = scenarios.len();
    if total == 0 {
        return Err(PipelineError::EmptyDataset);
    }
    if failed as f64 > opts.max_failure_rate * total as f64 {
        return Err(PipelineError::TooManyFailures { failed, total });
    }
    let sample = |s: &Scenario, sol: &OpfSolution, lambda: &[f64]| Sample {
        scenario: s.index,
        v_mag: sol.v_mag.clone(),
        v_ang: sol.v_ang.clone(),
        p_load: s.p_load.clone(),
        q_load: s.q_load.clone(),
        lambda: lambda.to_vec(),
    };
    let samples: Vec<Sample> = match mode {
        Mode::Predict => scenarios
            .iter()
            .zip(&solutions)
            .filter_map(|(s, sol)| sol.as_ref().map(|sol| sample(s, sol, &sol.lambda)))
            .collect(),
        Mode::Forecast => scenarios
            .iter()
            .zip(&solutions)
            .zip(solutions.iter().skip(1))
            .filter_map(|((s, now), next)| match (now, next) {
                (Some(now), Some(next)) => Some(sample(s, now, &next.lambda)),
                _ => None,
            })
            .collect(),
    };
    let meta = DatasetMeta {
        mode,
        bus_ids: case.bus_ids(),
        scenarios: total,
        failed,
        seed: opts.split_seed,
    };
    Dataset::new(meta, samples)
}

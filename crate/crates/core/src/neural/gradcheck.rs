use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NeuralError, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.rel_error))
    }
}

/// Compare tape gradients with central differences at `coords` parameter
/// coordinates drawn with `seed`. The relative error uses a floor of `1e-6`
/// in the denominator so coordinates with vanishing gradient do not divide
/// rounding noise by zero.
pub fn gradient_check<F>(
    params: &ParamStore,
    coords: usize,
    step: f64,
    seed: u64,
    mut loss: F,
) -> Result<GradCheck, NeuralError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, NeuralError>,
{
    let mut work = params.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, &work)?;
    tape.backward(l, &mut work)?;

    let total = work.numel();
    let ids: Vec<ParamId> = work.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(coords);
    let mut eval = |store: &ParamStore| -> Result<f64, NeuralError> {
        let mut tape = Tape::inference();
        let l = loss(&mut tape, store)?;
        Ok(tape.value(l).item().unwrap_or(f64::NAN))
    };
    for _ in 0..coords.min(total) {
        let mut flat = rng.random_range(0..total);
        let mut pid = ids[0];
        for &id in &ids {
            let n = work.get(id).numel();
            if flat < n {
                pid = id;
                break;
            }
            flat -= n;
        }
        let analytic = work.get(pid).grad().map_or(0.0, |g| g[flat]);
        let orig = work.get(pid).data()[flat];
        work.get_mut(pid).data_mut()[flat] = orig + step;
        let up = eval(&work)?;
        work.get_mut(pid).data_mut()[flat] = orig - step;
        let down = eval(&work)?;
        work.get_mut(pid).data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * step);
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        entries.push(GradCheckEntry {
            param: pid,
            index: flat,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheck { entries })
}

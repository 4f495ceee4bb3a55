use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Mode;
use crate::grid::GridCase;

/// Load variation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Predict mode: multipliers uniform in `[low, high]`.
    pub low: f64,
    pub high: f64,
    /// Forecast mode: `1 + amplitude·sin(2πt/period) + N(0, noise_std)`.
    pub amplitude: f64,
    pub period: f64,
    pub noise_std: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            low: 0.8,
            high: 1.2,
            amplitude: 0.15,
            period: 24.0,
            noise_std: 0.02,
        }
    }
}

/// One demand realisation: a multiplier per bus applied to both the active
/// and reactive base load.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub index: usize,
    pub multipliers: Vec<f64>,
    /// MW per bus.
    pub p_load: Vec<f64>,
    /// MVAr per bus.
    pub q_load: Vec<f64>,
    /// Time step in forecast mode.
    pub timestamp: Option<usize>,
}

impl Scenario {
    /// The case with this scenario's loads substituted.
    pub fn apply(&self, case: &GridCase) -> GridCase {
        let mut out = case.clone();
        for ((bus, p), q) in out.buses.iter_mut().zip(&self.p_load).zip(&self.q_load) {
            bus.p_load = *p;
            bus.q_load = *q;
        }
        out
    }
}

pub fn gen_scenarios(case: &GridCase, n: usize, mode: Mode, seed: u64) -> Vec<Scenario> {
    gen_scenarios_with(case, n, mode, seed, &ScenarioConfig::default())
}

pub fn gen_scenarios_with(
    case: &GridCase,
    n: usize,
    mode: Mode,
    seed: u64,
    cfg: &ScenarioConfig,
) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite noise level");
    let n_bus = case.buses.len();
    (0..n)
        .map(|t| {
            let multipliers: Vec<f64> = match mode {
                Mode::Predict => (0..n_bus)
                    .map(|_| rng.random_range(cfg.low..=cfg.high))
                    .collect(),
                Mode::Forecast => {
                    let shared = 1.0
                        + cfg.amplitude
                            * (2.0 * std::f64::consts::PI * t as f64 / cfg.period).sin();
                    (0..n_bus)
                        .map(|_| {
                            let jitter = if cfg.noise_std > 0.0 {
                                noise.sample(&mut rng)
                            } else {
                                0.0
                            };
                            (shared + jitter).max(0.0)
                        })
                        .collect()
                }
            };
            let p_load = case
                .buses
                .iter()
                .zip(&multipliers)
                .map(|(b, m)| b.p_load * m)
                .collect();
            let q_load = case
                .buses
                .iter()
                .zip(&multipliers)
                .map(|(b, m)| b.q_load * m)
                .collect();
            Scenario {
                index: t,
                multipliers,
                p_load,
                q_load,
                timestamp: (mode == Mode::Forecast).then_some(t),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_case;

    fn two_bus() -> GridCase {
        parse_case(
            "BUS\n1, slack, 50, 10, 0.9, 1.1, 0, 0\n2, pq, 80, 20, 0.9, 1.1, 0, 0\n\
             BRANCH\n1, 2, 0.01, 0.1, 0, 1\nGEN\n1, 0, 300, -100, 100, 0.01, 20, 0\n",
        )
        .unwrap()
    }

    #[test]
    fn predict_is_reproducible() {
        let a = gen_scenarios(&two_bus(), 1, Mode::Predict, 42);
        let b = gen_scenarios(&two_bus(), 1, Mode::Predict, 42);
        assert_eq!(a, b);
        let bits = |s: &[Scenario]| {
            s[0].multipliers
                .iter()
                .map(|m| m.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, gen_scenarios(&two_bus(), 1, Mode::Predict, 43));
        assert_eq!(a[0].timestamp, None);
    }

    #[test]
    fn noiseless_forecast_is_closed_form() {
        let cfg = ScenarioConfig {
            noise_std: 0.0,
            ..ScenarioConfig::default()
        };
        let s = gen_scenarios_with(&two_bus(), 48, Mode::Forecast, 1, &cfg);
        for sc in &s {
            let t = sc.timestamp.unwrap() as f64;
            let want = 1.0 + 0.15 * (2.0 * std::f64::consts::PI * t / 24.0).sin();
            assert!(sc.multipliers.iter().all(|m| *m == want));
            assert_eq!(sc.p_load[1], 80.0 * want);
            assert_eq!(sc.q_load[0], 10.0 * want);
        }
    }

    #[test]
    fn predict_multipliers_average_to_one() {
        let case =
            parse_case("BUS\n1, slack, 1, 0, 0.9, 1.1, 0, 0\nGEN\n1, 0, 9, -1, 1, 0, 1, 0\n")
                .unwrap();
        let s = gen_scenarios(&case, 100_000, Mode::Predict, 7);
        let mean = s.iter().map(|sc| sc.multipliers[0]).sum::<f64>() / s.len() as f64;
        // σ of a U[0.8, 1.2] mean over 1e5 draws is 0.4/√12/√1e5 ≈ 3.7e-4.
        assert!((mean - 1.0).abs() < 0.002, "{mean}");
        assert!(s.iter().all(|sc| (0.8..=1.2).contains(&sc.multipliers[0])));
    }

    #[test]
    fn apply_substitutes_loads() {
        let case = two_bus();
        let s = &gen_scenarios(&case, 1, Mode::Predict, 0)[0];
        let applied = s.apply(&case);
        assert_eq!(applied.buses[1].p_load, s.p_load[1]);
        assert_eq!(applied.branches, case.branches);
    }
}

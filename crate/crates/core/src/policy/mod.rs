//! Neural-network parameterisation of the withdrawal and allocation controls.

mod checkpoint;
mod net;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use net::{sigmoid, Net, NetSpec, Tape, MAX_WIDTH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paths::PathSet;
use crate::rng;
use crate::scenario::ScenarioConfig;

/// Reference strategy used to centre and scale the wealth input.
pub const REFERENCE_WITHDRAWAL: f64 = 40.0;
pub const REFERENCE_STOCK_FRACTION: f64 = 0.5;

/// Per-rebalance-time mean and standard deviation of pre-withdrawal wealth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl StandardizationStats {
    pub fn validate(&self, n_times: usize) -> Result<()> {
        if self.mean.len() != n_times || self.sd.len() != n_times {
            return Err(Error::Dimension(format!(
                "standardization stats must have {n_times} entries"
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) || self.sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("standardization stats need finite means and positive deviations"));
        }
        Ok(())
    }
}

pub fn standardize(w: f64, i: usize, stats: &StandardizationStats) -> Result<f64> {
    let (m, s) = match (stats.mean.get(i), stats.sd.get(i)) {
        (Some(m), Some(s)) => (*m, *s),
        _ => return Err(Error::Dimension(format!("rebalance index {i} outside stats"))),
    };
    if !(s > 0.0) {
        return Err(invalid(format!("standard deviation at index {i} is not positive")));
    }
    Ok((w - m) / s)
}

/// Wealth statistics under the constant 40-per-period, 50/50 reference strategy.
pub fn reference_stats(paths: &PathSet, scenario: &ScenarioConfig) -> Result<StandardizationStats> {
    scenario.validate()?;
    let m = scenario.n_rebalances;
    if paths.n_periods() != m {
        return Err(Error::Dimension(format!(
            "paths have {} periods, scenario has {m} rebalances",
            paths.n_periods()
        )));
    }
    let n = paths.n_paths();
    let wealth = |j: usize, out: &mut [f64]| {
        let mut w = scenario.initial_wealth;
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = w;
            if i == m {
                break;
            }
            let wp = w - REFERENCE_WITHDRAWAL;
            let (rs, rb) = paths.get(j, i);
            w = if wp > 0.0 {
                wp * (REFERENCE_STOCK_FRACTION * rs + (1.0 - REFERENCE_STOCK_FRACTION) * rb)
            } else {
                wp * rb
            };
        }
    };
    const CHUNK: usize = 4096;
    let chunk_sums = |centre: Option<&[f64]>| -> Vec<f64> {
        let parts: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; m + 1];
                let mut buf = vec![0.0; m + 1];
                for j in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    wealth(j, &mut buf);
                    for i in 0..=m {
                        acc[i] += match centre {
                            None => buf[i],
                            Some(mu) => (buf[i] - mu[i]) * (buf[i] - mu[i]),
                        };
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; m + 1];
        for p in parts {
            for i in 0..=m {
                total[i] += p[i];
            }
        }
        total
    };
    let mean: Vec<f64> = chunk_sums(None).into_iter().map(|s| s / n as f64).collect();
    let var = chunk_sums(Some(&mean));
    let sd = var
        .iter()
        .zip(&mean)
        .map(|(v, mu)| {
            let s = (v / n as f64).sqrt();
            s.max(1e-8 * mu.abs() + 1e-8)
        })
        .collect();
    Ok(StandardizationStats { mean, sd })
}

/// The two control networks together with the shortfall threshold `W*`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub q_net: Net,
    pub p_net: Net,
    pub stats: StandardizationStats,
    pub w_star: f64,
    pub scenario: ScenarioConfig,
}

impl PolicyPair {
    pub fn new(
        q_net: Net,
        p_net: Net,
        stats: StandardizationStats,
        w_star: f64,
        scenario: ScenarioConfig,
    ) -> Result<Self> {
        scenario.validate()?;
        stats.validate(scenario.n_events())?;
        if q_net.spec().n_inputs != 2 || q_net.spec().n_outputs != 1 {
            return Err(Error::Dimension("withdrawal network must map 2 inputs to 1 output".into()));
        }
        if p_net.spec().n_inputs != 2 || p_net.spec().n_outputs != 2 {
            return Err(Error::Dimension("allocation network must map 2 inputs to 2 outputs".into()));
        }
        if !w_star.is_finite() {
            return Err(invalid("w_star must be finite"));
        }
        Ok(Self { q_net, p_net, stats, w_star, scenario })
    }

    /// Randomly initialised networks with `W* = 0`.
    pub fn cold(
        scenario: ScenarioConfig,
        stats: StandardizationStats,
        q_spec: NetSpec,
        p_spec: NetSpec,
        seed: u64,
    ) -> Result<Self> {
        let q_net = Net::random(q_spec, &mut rng::stream(seed, rng::DOMAIN_INIT, 0))?;
        let p_net = Net::random(p_spec, &mut rng::stream(seed, rng::DOMAIN_INIT, 1))?;
        Self::new(q_net, p_net, stats, 0.0, scenario)
    }

    #[inline]
    pub(crate) fn inputs(&self, w: f64, i: usize) -> [f64; 2] {
        [(w - self.stats.mean[i]) / self.stats.sd[i], self.scenario.time(i)]
    }

    /// Width of the admissible withdrawal interval above `q_min`.
    #[inline]
    pub(crate) fn withdrawal_range(&self, w: f64) -> f64 {
        (self.scenario.q_max.min(w) - self.scenario.q_min).max(0.0)
    }

    /// `q = q_min + range(w) * sigmoid(z)` with `z` from the withdrawal network.
    pub fn withdrawal_forward(&self, w_minus: f64, i: usize) -> f64 {
        let mut z = [0.0];
        self.q_net.infer(&self.inputs(w_minus, i), &mut z);
        let range = self.withdrawal_range(w_minus);
        let q = self.scenario.q_min + range * sigmoid(z[0]);
        q.min(self.scenario.q_min + range)
    }

    /// Stock weight of the softmax over the allocation network's two logits.
    pub fn allocation_forward(&self, w_plus: f64, i: usize) -> f64 {
        let mut l = [0.0; 2];
        self.p_net.infer(&self.inputs(w_plus, i), &mut l);
        sigmoid(l[0] - l[1])
    }
}

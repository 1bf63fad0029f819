//! Policy rollout over sampled paths and the EW-ES objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::MarketParams;
use crate::paths::PathSet;
use crate::policy::PolicyPair;
use crate::scenario::{Kappa, ScenarioConfig};

/// A feedback control usable by [`rollout`].
pub trait Policy: Sync {
    /// Withdrawal at rebalance `i` given pre-withdrawal wealth.
    fn withdrawal(&self, w_minus: f64, i: usize) -> f64;
    /// Stock fraction at rebalance `i` given post-withdrawal wealth; only
    /// consulted when that wealth is positive and `i < M`.
    fn allocation(&self, w_plus: f64, i: usize) -> f64;
}

impl Policy for PolicyPair {
    fn withdrawal(&self, w_minus: f64, i: usize) -> f64 {
        self.withdrawal_forward(w_minus, i)
    }

    fn allocation(&self, w_plus: f64, i: usize) -> f64 {
        self.allocation_forward(w_plus, i)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn withdrawal(&self, w_minus: f64, i: usize) -> f64 {
        (**self).withdrawal(w_minus, i)
    }

    fn allocation(&self, w_plus: f64, i: usize) -> f64 {
        (**self).allocation(w_plus, i)
    }
}

/// Fixed withdrawal every period with a constant rebalanced stock fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BengenPolicy {
    pub withdrawal: f64,
    pub stock_fraction: f64,
}

pub fn bengen_policy(withdrawal: f64, stock_fraction: f64) -> Result<BengenPolicy> {
    if !(0.0..=1.0).contains(&stock_fraction) {
        return Err(invalid(format!("stock fraction must lie in [0, 1], got {stock_fraction}")));
    }
    if !(withdrawal.is_finite() && withdrawal >= 0.0) {
        return Err(invalid("withdrawal must be non-negative"));
    }
    Ok(BengenPolicy { withdrawal, stock_fraction })
}

impl Policy for BengenPolicy {
    fn withdrawal(&self, _w_minus: f64, _i: usize) -> f64 {
        self.withdrawal
    }

    fn allocation(&self, _w_plus: f64, _i: usize) -> f64 {
        self.stock_fraction
    }
}

/// Per-path pre-withdrawal wealth, withdrawal and stock fraction at each of the
/// `M + 1` rebalance times, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub n_times: usize,
    pub wealth: Vec<f64>,
    pub withdrawal: Vec<f64>,
    pub stock_fraction: Vec<f64>,
}

impl Traces {
    /// Values of one traced quantity across paths at time index `i`.
    pub fn column(values: &[f64], n_times: usize, i: usize) -> Vec<f64> {
        values.iter().skip(i).step_by(n_times).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub withdrawal_sums: Vec<f64>,
    pub terminal_wealth: Vec<f64>,
    pub traces: Option<Traces>,
}

impl RolloutResult {
    pub fn n_paths(&self) -> usize {
        self.terminal_wealth.len()
    }
}

fn check_dims(paths: &PathSet, scenario: &ScenarioConfig) -> Result<()> {
    scenario.validate()?;
    if paths.n_periods() != scenario.n_rebalances {
        return Err(Error::Dimension(format!(
            "paths have {} periods but the scenario has {} rebalances",
            paths.n_periods(),
            scenario.n_rebalances
        )));
    }
    Ok(())
}

/// Run one path; returns (sum of withdrawals, terminal wealth).
#[inline]
fn run_path<P: Policy + ?Sized>(
    policy: &P,
    paths: &PathSet,
    j: usize,
    sc: &ScenarioConfig,
    debt_growth: f64,
    mut trace: Option<(&mut [f64], &mut [f64], &mut [f64])>,
) -> (f64, f64) {
    let m = sc.n_rebalances;
    let mut w = sc.initial_wealth;
    let mut total = 0.0;
    for i in 0..=m {
        let q = policy.withdrawal(w, i);
        total += q;
        let wp = w - q;
        let p = if wp > 0.0 && i < m { policy.allocation(wp, i).clamp(0.0, 1.0) } else { 0.0 };
        if let Some((tw, tq, tp)) = trace.as_mut() {
            tw[i] = w;
            tq[i] = q;
            tp[i] = p;
        }
        if i == m {
            return (total, wp);
        }
        let (rs, rb) = paths.get(j, i);
        w = if wp > 0.0 { wp * (p * rs + (1.0 - p) * rb) } else { wp * rb * debt_growth };
    }
    unreachable!()
}

/// Roll `policy` forward along every path.
pub fn rollout<P: Policy + ?Sized>(
    policy: &P,
    paths: &PathSet,
    scenario: &ScenarioConfig,
    m: &MarketParams,
) -> Result<RolloutResult> {
    rollout_impl(policy, paths, scenario, m.borrow_spread, false)
}

/// As [`rollout`], also recording per-period wealth and controls.
pub fn rollout_with_traces<P: Policy + ?Sized>(
    policy: &P,
    paths: &PathSet,
    scenario: &ScenarioConfig,
    m: &MarketParams,
) -> Result<RolloutResult> {
    rollout_impl(policy, paths, scenario, m.borrow_spread, true)
}

fn rollout_impl<P: Policy + ?Sized>(
    policy: &P,
    paths: &PathSet,
    sc: &ScenarioConfig,
    borrow_spread: f64,
    keep_traces: bool,
) -> Result<RolloutResult> {
    check_dims(paths, sc)?;
    let n = paths.n_paths();
    let debt_growth = (borrow_spread * sc.dt()).exp();
    let mut sums = vec![0.0; n];
    let mut wt = vec![0.0; n];
    let traces = if keep_traces {
        let nt = sc.n_events();
        let mut tr = Traces {
            n_times: nt,
            wealth: vec![0.0; n * nt],
            withdrawal: vec![0.0; n * nt],
            stock_fraction: vec![0.0; n * nt],
        };
        sums.par_iter_mut()
            .zip(wt.par_iter_mut())
            .zip(tr.wealth.par_chunks_mut(nt))
            .zip(tr.withdrawal.par_chunks_mut(nt))
            .zip(tr.stock_fraction.par_chunks_mut(nt))
            .enumerate()
            .for_each(|(j, ((((s, w), tw), tq), tp))| {
                (*s, *w) = run_path(policy, paths, j, sc, debt_growth, Some((tw, tq, tp)));
            });
        Some(tr)
    } else {
        sums.par_iter_mut().zip(wt.par_iter_mut()).enumerate().with_min_len(256).for_each(|(j, (s, w))| {
            (*s, *w) = run_path(policy, paths, j, sc, debt_growth, None);
        });
        None
    };
    Ok(RolloutResult { withdrawal_sums: sums, terminal_wealth: wt, traces })
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_alpha(x: &[f64], alpha: f64) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Data("expected shortfall of an empty sample".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Number of tail samples `ceil(alpha N)`, guarding against `alpha N` landing a
/// rounding error above an integer.
pub fn tail_count(n: usize, alpha: f64) -> usize {
    let x = alpha * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (k as usize).clamp(1, n)
}

/// Mean of the `ceil(alpha N)` smallest values.
pub fn empirical_es(x: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(x, alpha)?;
    let k = tail_count(x.len(), alpha);
    let s = sorted(x);
    Ok(mean(&s[..k]))
}

/// The `ceil(alpha N)`-th smallest value.
pub fn empirical_var(x: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(x, alpha)?;
    let k = tail_count(x.len(), alpha);
    Ok(sorted(x)[k - 1])
}

/// Sample average of `w* + min(W_T - w*, 0) / alpha`.
pub fn rockafellar_es(x: &[f64], w_star: f64, alpha: f64) -> f64 {
    w_star + x.iter().map(|w| (w - w_star).min(0.0)).sum::<f64>() / (alpha * x.len() as f64)
}

/// Sampled objective at a fixed `w*`.
pub fn objective_value(result: &RolloutResult, scenario: &ScenarioConfig, w_star: f64) -> f64 {
    let k = scenario.kappa;
    k.reward_weight() * mean(&result.withdrawal_sums)
        + k.es_weight() * rockafellar_es(&result.terminal_wealth, w_star, scenario.alpha)
        + scenario.epsilon * mean(&result.terminal_wealth)
}

/// Nearest-rank percentile, `level` in percent.
pub fn percentile(x: &[f64], level: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Data("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&level) {
        return Err(invalid(format!("percentile level {level} outside [0, 100]")));
    }
    let s = sorted(x);
    let rank = ((level / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    Ok(s[rank.min(s.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub kappa: Kappa,
    pub ew_per_event: f64,
    pub es: f64,
    pub median_wt: f64,
    pub objective: f64,
    pub w_star: f64,
}

/// Summary statistics of a rollout. The reported objective uses the empirical
/// shortfall, i.e. the sampled objective maximised over `w*`.
pub fn frontier_point(result: &RolloutResult, scenario: &ScenarioConfig, w_star: f64) -> Result<FrontierPoint> {
    let es = empirical_es(&result.terminal_wealth, scenario.alpha)?;
    let k = scenario.kappa;
    let ew_total = mean(&result.withdrawal_sums);
    Ok(FrontierPoint {
        kappa: k,
        ew_per_event: ew_total / scenario.n_events() as f64,
        es,
        median_wt: percentile(&result.terminal_wealth, 50.0)?,
        objective: k.reward_weight() * ew_total
            + k.es_weight() * es
            + scenario.epsilon * mean(&result.terminal_wealth),
        w_star,
    })
}

/// Fraction of traced withdrawals strictly inside `(lo, hi)`.
pub fn interior_withdrawal_fraction(result: &RolloutResult, lo: f64, hi: f64) -> Result<f64> {
    let tr = result.traces.as_ref().ok_or_else(|| invalid("rollout was run without traces"))?;
    let inside = tr.withdrawal.iter().filter(|q| **q > lo && **q < hi).count();
    Ok(inside as f64 / tr.withdrawal.len() as f64)
}

/// Requested percentiles of one quantity at each rebalance time.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileTable {
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
    /// `values[i][k]` is percentile `levels[k]` at `times[i]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PercentileReport {
    pub wealth: PercentileTable,
    pub stock_fraction: PercentileTable,
    pub withdrawal: PercentileTable,
}

pub fn percentile_report(result: &RolloutResult, scenario: &ScenarioConfig, levels: &[f64]) -> Result<PercentileReport> {
    let tr = result.traces.as_ref().ok_or_else(|| invalid("percentile report needs rollout traces"))?;
    let times: Vec<f64> = (0..tr.n_times).map(|i| scenario.time(i)).collect();
    let table = |values: &[f64]| -> Result<PercentileTable> {
        let rows = (0..tr.n_times)
            .map(|i| {
                let col = Traces::column(values, tr.n_times, i);
                levels.iter().map(|l| percentile(&col, *l)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PercentileTable { times: times.clone(), levels: levels.to_vec(), values: rows })
    };
    Ok(PercentileReport {
        wealth: table(&tr.wealth)?,
        stock_fraction: table(&tr.stock_fraction)?,
        withdrawal: table(&tr.withdrawal)?,
    })
}

/// Controls evaluated pointwise on a (time, wealth) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub wealth: Vec<f64>,
    pub times: Vec<f64>,
    /// `[time][wealth]`, `(q - q_min) / (q_max - q_min)`.
    pub withdrawal: Vec<Vec<f64>>,
    /// `[time][wealth]`, stock fraction at that post-withdrawal wealth.
    pub allocation: Vec<Vec<f64>>,
}

/// Evaluate a policy on `wealth x time_indices`; withdrawals are normalised to [0, 1].
pub fn heatmap_report<P: Policy + ?Sized>(
    policy: &P,
    scenario: &ScenarioConfig,
    wealth: &[f64],
    time_indices: &[usize],
) -> Result<Heatmap> {
    scenario.validate()?;
    if wealth.is_empty() || time_indices.is_empty() {
        return Err(invalid("heat map grids must be nonempty"));
    }
    if let Some(i) = time_indices.iter().find(|i| **i > scenario.n_rebalances) {
        return Err(invalid(format!("time index {i} beyond the horizon")));
    }
    let span = scenario.q_max - scenario.q_min;
    let mut withdrawal = Vec::new();
    let mut allocation = Vec::new();
    for &i in time_indices {
        withdrawal.push(
            wealth
                .iter()
                .map(|w| {
                    let q = policy.withdrawal(*w, i);
                    if span > 0.0 { (q - scenario.q_min) / span } else { 0.0 }
                })
                .collect(),
        );
        allocation.push(
            wealth
                .iter()
                .map(|w| {
                    if *w > 0.0 && i < scenario.n_rebalances {
                        policy.allocation(*w, i).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
    }
    Ok(Heatmap {
        wealth: wealth.to_vec(),
        times: time_indices.iter().map(|i| scenario.time(*i)).collect(),
        withdrawal,
        allocation,
    })
}

//! Rollout identities and expected-shortfall properties.

use decumulate::objective::{
    bengen_policy, empirical_es, empirical_var, frontier_point, interior_withdrawal_fraction, objective_value,
    percentile, percentile_report, rockafellar_es, rollout, rollout_with_traces, Policy, Traces,
};
use decumulate::{Kappa, MarketParams, PathSet, ScenarioConfig};
use proptest::prelude::*;

fn brute_force_sup(x: &[f64], alpha: f64) -> f64 {
    x.iter().map(|w| rockafellar_es(x, *w, alpha)).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn es_of_small_integers() {
    let x: Vec<f64> = (1..=100).rev().map(f64::from).collect();
    assert_eq!(empirical_es(&x, 0.05).unwrap(), 3.0);
    assert_eq!(empirical_var(&x, 0.05).unwrap(), 5.0);
    assert_eq!(rockafellar_es(&x, 5.0, 0.05), 3.0);
    assert!((brute_force_sup(&x, 0.05) - 3.0).abs() < 1e-12);
}

#[test]
fn es_of_uniform_grid() {
    let x: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
    let es = empirical_es(&x, 0.05).unwrap();
    assert!((es - 0.025).abs() < 1e-12);
    assert!((brute_force_sup(&x, 0.05) - es).abs() < 1e-12);
}

/// Withdraws more when rich, holds more stock when rich.
struct Linear;

impl Policy for Linear {
    fn withdrawal(&self, w: f64, _i: usize) -> f64 {
        (35.0 + 0.02 * w.max(0.0)).clamp(35.0, 60.0_f64.min(w).max(35.0))
    }
    fn allocation(&self, w: f64, _i: usize) -> f64 {
        (w / 2000.0).clamp(0.0, 1.0)
    }
}

fn scenario(m: usize) -> ScenarioConfig {
    ScenarioConfig { horizon_years: m as f64, n_rebalances: m, ..ScenarioConfig::default() }
}

fn returns(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.85..1.35f64, 2 * m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn empirical_es_is_supremum(x in prop::collection::vec(-2000.0..3000.0f64, 20..400), k in 1usize..8) {
        let alpha = k as f64 / x.len() as f64;
        let es = empirical_es(&x, alpha).unwrap();
        let sup = brute_force_sup(&x, alpha);
        prop_assert!((es - sup).abs() <= 1e-9 * es.abs().max(1.0), "es {} sup {}", es, sup);
        let var = empirical_var(&x, alpha).unwrap();
        prop_assert!((rockafellar_es(&x, var, alpha) - es).abs() <= 1e-9 * es.abs().max(1.0));
    }

    #[test]
    fn es_translation_and_scaling(x in prop::collection::vec(-500.0..500.0f64, 40..200), c in -1e3..1e3f64, s in 0.1..10.0f64) {
        let alpha = 0.05;
        let es = empirical_es(&x, alpha).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
        prop_assert!((empirical_es(&shifted, alpha).unwrap() - es - c).abs() < 1e-9 * (1.0 + c.abs() + es.abs()));
        prop_assert!((empirical_es(&scaled, alpha).unwrap() - s * es).abs() < 1e-9 * (1.0 + (s * es).abs()));
    }

    #[test]
    fn traces_replay_the_wealth_recursion(r in returns(6), spread in 0.0..0.05f64) {
        let sc = scenario(6);
        let paths = PathSet::new(1, 6, r, "synthetic").unwrap();
        let market = MarketParams { borrow_spread: spread, ..MarketParams::crsp_calibrated() };
        let res = rollout_with_traces(&Linear, &paths, &sc, &market).unwrap();
        let tr: &Traces = res.traces.as_ref().unwrap();
        let (w, q, p) = (&tr.wealth, &tr.withdrawal, &tr.stock_fraction);
        prop_assert_eq!(w[0], 1000.0);
        let mut total = 0.0;
        for i in 0..=6 {
            total += q[i];
            let wp = w[i] - q[i];
            if i == 6 {
                prop_assert_eq!(res.terminal_wealth[0], wp);
                break;
            }
            let (rs, rb) = paths.get(0, i);
            let next = if wp > 0.0 { wp * (p[i] * rs + (1.0 - p[i]) * rb) } else { wp * rb * (spread * sc.dt()).exp() };
            prop_assert_eq!(w[i + 1], next);
        }
        prop_assert_eq!(p[6], 0.0);
        prop_assert_eq!(res.withdrawal_sums[0], total);
        let plain = rollout(&Linear, &paths, &sc, &market).unwrap();
        prop_assert_eq!(plain.terminal_wealth, res.terminal_wealth);
    }

    #[test]
    fn constant_controls_are_monotone_in_returns(r in returns(8), bump in prop::collection::vec(0.0..0.2f64, 16), p in 0.0..=1.0f64) {
        let sc = scenario(8);
        let pol = bengen_policy(40.0, p).unwrap();
        let up: Vec<f64> = r.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let m = MarketParams::crsp_calibrated();
        let base = rollout_with_traces(&pol, &PathSet::new(1, 8, r, "synthetic").unwrap(), &sc, &m).unwrap();
        let high = rollout(&pol, &PathSet::new(1, 8, up, "synthetic").unwrap(), &sc, &m).unwrap();
        let solvent = base.traces.unwrap().wealth.iter().all(|w| *w > 40.0);
        prop_assume!(solvent);
        prop_assert!(high.terminal_wealth[0] >= base.terminal_wealth[0]);
    }

    #[test]
    fn allocation_is_not_consulted_for_debt(r in returns(5)) {
        let sc = ScenarioConfig { initial_wealth: 10.0, ..scenario(5) };
        let pol = bengen_policy(60.0, 1.0).unwrap();
        let res = rollout_with_traces(&pol, &PathSet::new(1, 5, r, "synthetic").unwrap(), &sc, &MarketParams::crsp_calibrated()).unwrap();
        prop_assert!(res.traces.unwrap().stock_fraction.iter().all(|p| *p == 0.0));
    }
}

#[test]
fn zero_weight_objective_ignores_terminal_wealth() {
    let sc = ScenarioConfig { kappa: Kappa::Finite(0.0), epsilon: 0.0, ..scenario(3) };
    let m = MarketParams::crsp_calibrated();
    let pol = bengen_policy(40.0, 0.5).unwrap();
    let a = rollout(&pol, &PathSet::new(2, 3, vec![1.1; 12], "synthetic").unwrap(), &sc, &m).unwrap();
    let b = rollout(&pol, &PathSet::new(2, 3, vec![0.7; 12], "synthetic").unwrap(), &sc, &m).unwrap();
    assert_eq!(objective_value(&a, &sc, 0.0), objective_value(&b, &sc, 123.0));
    assert_eq!(objective_value(&a, &sc, 0.0), 160.0);
}

#[test]
fn flat_market_frontier_point() {
    let sc = ScenarioConfig::default();
    let paths = PathSet::new(40, 30, vec![1.0; 40 * 60], "synthetic").unwrap();
    let res = rollout_with_traces(&bengen_policy(35.0, 0.3).unwrap(), &paths, &sc, &MarketParams::crsp_calibrated()).unwrap();
    let pt = frontier_point(&res, &sc, 0.0).unwrap();
    assert_eq!(pt.ew_per_event, 35.0);
    assert_eq!(pt.es, 1000.0 - 31.0 * 35.0);
    assert_eq!(pt.median_wt, -85.0);
    assert_eq!(interior_withdrawal_fraction(&res, 35.0, 60.0).unwrap(), 0.0);
    let rep = percentile_report(&res, &sc, &[5.0, 50.0, 95.0]).unwrap();
    assert!(rep.wealth.values.iter().all(|row| row[0] == row[1] && row[1] == row[2]));
    assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0).unwrap(), 2.0);
}

#[test]
fn mismatched_dimensions_fail() {
    let paths = PathSet::new(1, 5, vec![1.0; 10], "synthetic").unwrap();
    let err = rollout(&bengen_policy(40.0, 0.5).unwrap(), &paths, &scenario(6), &MarketParams::crsp_calibrated());
    assert!(matches!(err, Err(decumulate::Error::Dimension(_))));
    assert!(bengen_policy(40.0, 1.5).is_err());
}

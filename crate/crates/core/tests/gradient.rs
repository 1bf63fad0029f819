//! Pathwise gradients of the sampled objective against finite differences.

use decumulate::market::simulate_paths;
use decumulate::objective::rollout_with_traces;
use decumulate::policy::{reference_stats, Net, NetSpec, PolicyPair};
use decumulate::rng;
use decumulate::trainer::batch_gradient;
use decumulate::{Kappa, MarketParams, PathSet, ScenarioConfig};
use rand::Rng;

const DELTA: f64 = 0.05;

/// True when no path sits within `DELTA` of a kink of the objective.
fn away_from_kinks(pair: &PolicyPair, paths: &PathSet, m: &MarketParams) -> bool {
    let r = rollout_with_traces(pair, paths, &pair.scenario, m).unwrap();
    let tr = r.traces.as_ref().unwrap();
    let sc = &pair.scenario;
    let wealth_ok = tr.wealth.iter().zip(&tr.withdrawal).all(|(w, q)| {
        (w - sc.q_min).abs() > DELTA && (w - sc.q_max).abs() > DELTA && (w - q).abs() > DELTA
    });
    wealth_ok && r.terminal_wealth.iter().all(|w| (w - pair.w_star).abs() > DELTA)
}

fn objective(pair: &PolicyPair, paths: &PathSet, idx: &[usize], m: &MarketParams) -> f64 {
    batch_gradient(pair, paths, idx, m).unwrap().objective
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

#[test]
fn bptt_matches_central_differences_on_50_nets() {
    let mut m = MarketParams::crsp_calibrated();
    m.borrow_spread = 0.01;
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 50 {
        seed += 1;
        let mut r = rng::stream(seed, 77, 0);
        let kappa = if seed.is_multiple_of(7) { Kappa::Infinite } else { Kappa::Finite(r.random_range(0.05..3.0)) };
        let sc = ScenarioConfig {
            n_rebalances: 6 + (seed % 5) as usize,
            horizon_years: 10.0,
            initial_wealth: r.random_range(150.0..400.0),
            kappa,
            epsilon: 1e-3,
            ..Default::default()
        };
        let paths = simulate_paths(&m, 12, sc.n_rebalances, sc.dt(), seed).unwrap();
        let stats = reference_stats(&paths, &sc).unwrap();
        let spec = |out| NetSpec {
            n_inputs: 2,
            hidden_layers: 1 + (seed % 3) as usize,
            nodes_per_layer: 3 + (seed % 6) as usize,
            n_outputs: out,
            biases: !seed.is_multiple_of(4),
        };
        let q_net = Net::random(spec(1), &mut rng::stream(seed, 78, 0)).unwrap();
        let p_net = Net::random(spec(2), &mut rng::stream(seed, 78, 1)).unwrap();
        let w_star = r.random_range(-200.0..200.0);
        let pair = PolicyPair::new(q_net, p_net, stats, w_star, sc).unwrap();
        if !away_from_kinks(&pair, &paths, &m) {
            continue;
        }
        let idx: Vec<usize> = (0..paths.n_paths()).collect();
        let g = batch_gradient(&pair, &paths, &idx, &m).unwrap();
        let h = 1e-6;
        let fd = |which: usize, k: usize| {
            let mut a = pair.clone();
            let mut b = pair.clone();
            match which {
                0 => {
                    a.q_net.params_mut()[k] += h;
                    b.q_net.params_mut()[k] -= h;
                }
                1 => {
                    a.p_net.params_mut()[k] += h;
                    b.p_net.params_mut()[k] -= h;
                }
                _ => {
                    a.w_star += h;
                    b.w_star -= h;
                }
            }
            (objective(&a, &paths, &idx, &m) - objective(&b, &paths, &idx, &m)) / (2.0 * h)
        };
        let fd_q: Vec<f64> = (0..g.q.len()).map(|k| fd(0, k)).collect();
        let fd_p: Vec<f64> = (0..g.p.len()).map(|k| fd(1, k)).collect();
        let fd_w = fd(2, 0);
        let eq = rel_err(&g.q, &fd_q);
        let ep = rel_err(&g.p, &fd_p);
        assert!(eq <= 1e-5, "seed {seed}: withdrawal-net gradient error {eq:.3e}");
        assert!(ep <= 1e-5, "seed {seed}: allocation-net gradient error {ep:.3e}");
        assert!((g.w_star - fd_w).abs() <= 1e-5 * fd_w.abs().max(1.0), "seed {seed}: w* {} vs {fd_w}", g.w_star);
        checked += 1;
    }
}

#[test]
fn epoch_average_of_batch_gradients_is_full_gradient() {
    let m = MarketParams::crsp_calibrated();
    let sc = ScenarioConfig::default();
    let paths = simulate_paths(&m, 96, 30, 1.0, 5).unwrap();
    let stats = reference_stats(&paths, &sc).unwrap();
    let mut pair = PolicyPair::cold(sc, stats, NetSpec::withdrawal(), NetSpec::allocation(), 9).unwrap();
    pair.w_star = 100.0;
    let all: Vec<usize> = (0..96).collect();
    let full = batch_gradient(&pair, &paths, &all, &m).unwrap();
    let mut avg_q = vec![0.0; full.q.len()];
    let mut avg_p = vec![0.0; full.p.len()];
    let mut avg_obj = 0.0;
    for batch in all.chunks(12) {
        let g = batch_gradient(&pair, &paths, batch, &m).unwrap();
        avg_obj += g.objective / 8.0;
        avg_q.iter_mut().zip(&g.q).for_each(|(a, b)| *a += b / 8.0);
        avg_p.iter_mut().zip(&g.p).for_each(|(a, b)| *a += b / 8.0);
    }
    assert!(rel_err(&avg_q, &full.q) <= 1e-10);
    assert!(rel_err(&avg_p, &full.p) <= 1e-10);
    assert!((avg_obj - full.objective).abs() <= 1e-10 * full.objective.abs());
}

#[test]
fn single_net_gradients_match_finite_differences() {
    for seed in 0..20u64 {
        let spec = NetSpec { n_inputs: 2, hidden_layers: 2, nodes_per_layer: 7, n_outputs: 2, biases: true };
        let net = Net::random(spec, &mut rng::stream(seed, 5, 0)).unwrap();
        let x = [0.3 * seed as f64 - 2.0, 1.5];
        let up = [0.7, -1.3];
        let (_, g, gi) = net.forward_backward(&x, &up).unwrap();
        let f = |n: &Net, x: &[f64]| {
            let mut o = [0.0; 2];
            n.infer(x, &mut o);
            up[0] * o[0] + up[1] * o[1]
        };
        let h = 1e-5;
        let fd: Vec<f64> = (0..g.len())
            .map(|k| {
                let mut a = net.clone();
                let mut b = net.clone();
                a.params_mut()[k] += h;
                b.params_mut()[k] -= h;
                (f(&a, &x) - f(&b, &x)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&g, &fd) <= 1e-5, "seed {seed}");
        let fdx: Vec<f64> = (0..2)
            .map(|k| {
                let (mut a, mut b) = (x, x);
                a[k] += h;
                b[k] -= h;
                (f(&net, &a) - f(&net, &b)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&gi, &fdx) <= 1e-5, "seed {seed}");
    }
}

//! Minibatch Adam training of the policy networks and `W*`.

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::MarketParams;
use crate::objective::{empirical_var, frontier_point, objective_value, rollout, FrontierPoint};
use crate::paths::PathSet;
use crate::policy::{sigmoid, NetSpec, PolicyPair, StandardizationStats, Tape};
use crate::rng;
use crate::scenario::{Kappa, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_iterations: usize,
    pub batch_size: usize,
    pub lr_params: f64,
    pub lr_wstar: f64,
    /// Fractions of `n_iterations` at which both learning rates are multiplied by `gamma`.
    pub milestones: Vec<f64>,
    pub gamma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Iterations between full-dataset evaluations for best-model tracking.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iterations: 50_000,
            batch_size: 1_000,
            lr_params: 0.05,
            lr_wstar: 0.04,
            milestones: vec![0.70, 0.97],
            gamma: 0.20,
            adam_beta1: 0.9,
            adam_beta2: 0.998,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            eval_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(invalid("iteration count, batch size and evaluation cadence must be positive"));
        }
        for (name, v) in [
            ("lr_params", self.lr_params),
            ("lr_wstar", self.lr_wstar),
            ("gamma", self.gamma),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay must be non-negative"));
        }
        if self.milestones.iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
            return Err(invalid("milestones must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Learning-rate multiplier in effect at iteration `iter` (0-based).
    pub fn lr_factor(&self, iter: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|m| iter >= (*m * self.n_iterations as f64).floor() as usize)
            .count();
        self.gamma.powi(passed as i32)
    }
}

/// First and second moment buffers of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam step descending `grads`; `weight_decay * params` is
/// added to the gradient first.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for k in 0..params.len() {
        let g = grads[k] + weight_decay * params[k];
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
        let mh = state.m[k] / c1;
        let vh = state.v[k] / c2;
        params[k] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Sums over a set of paths of the sampled objective and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub n: usize,
    pub objective: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub w_star: f64,
}

impl Gradient {
    fn zeros(pair: &PolicyPair) -> Self {
        Self {
            n: 0,
            objective: 0.0,
            q: vec![0.0; pair.q_net.params().len()],
            p: vec![0.0; pair.p_net.params().len()],
            w_star: 0.0,
        }
    }

    fn add(&mut self, other: &Gradient) {
        self.n += other.n;
        self.objective += other.objective;
        for (a, b) in self.q.iter_mut().zip(&other.q) {
            *a += b;
        }
        for (a, b) in self.p.iter_mut().zip(&other.p) {
            *a += b;
        }
        self.w_star += other.w_star;
    }

    /// Divide every accumulated sum by the path count.
    pub fn mean(mut self) -> Self {
        let s = 1.0 / self.n as f64;
        self.objective *= s;
        self.q.iter_mut().for_each(|g| *g *= s);
        self.p.iter_mut().for_each(|g| *g *= s);
        self.w_star *= s;
        self
    }
}

struct Scratch {
    tq: Vec<Tape>,
    tp: Vec<Tape>,
    w_minus: Vec<f64>,
    w_plus: Vec<f64>,
    sig: Vec<f64>,
    p: Vec<f64>,
}

impl Scratch {
    fn new(pair: &PolicyPair) -> Self {
        let m1 = pair.scenario.n_events();
        Self {
            tq: vec![Tape::new(pair.q_net.spec()); m1],
            tp: vec![Tape::new(pair.p_net.spec()); m1],
            w_minus: vec![0.0; m1],
            w_plus: vec![0.0; m1],
            sig: vec![0.0; m1],
            p: vec![0.0; m1],
        }
    }
}

/// Forward and reverse pass through the wealth recursion of one path.
fn path_gradient(pair: &PolicyPair, paths: &PathSet, j: usize, debt_growth: f64, s: &mut Scratch, g: &mut Gradient) {
    let sc = &pair.scenario;
    let m = sc.n_rebalances;
    let reward = sc.kappa.reward_weight();
    let esw = sc.kappa.es_weight();
    let (q_min, q_max) = (sc.q_min, sc.q_max);

    let mut w = sc.initial_wealth;
    let mut total = 0.0;
    for i in 0..=m {
        s.w_minus[i] = w;
        let x = pair.inputs(w, i);
        let z = pair.q_net.forward(&x, &mut s.tq[i])[0];
        let sg = sigmoid(z);
        s.sig[i] = sg;
        let range = pair.withdrawal_range(w);
        let q = (q_min + range * sg).min(q_min + range);
        total += q;
        let wp = w - q;
        s.w_plus[i] = wp;
        if i == m {
            break;
        }
        let (rs, rb) = paths.get(j, i);
        if wp > 0.0 {
            let l = pair.p_net.forward(&pair.inputs(wp, i), &mut s.tp[i]);
            let p = sigmoid(l[0] - l[1]);
            s.p[i] = p;
            w = wp * (p * rs + (1.0 - p) * rb);
        } else {
            s.p[i] = 0.0;
            w = wp * rb * debt_growth;
        }
    }
    let wt = s.w_plus[m];
    let ws = pair.w_star;
    let tail = wt <= ws;
    g.n += 1;
    g.objective += reward * total + esw * (ws + (wt - ws).min(0.0) / sc.alpha) + sc.epsilon * wt;
    g.w_star += esw * (1.0 - if tail { 1.0 / sc.alpha } else { 0.0 });

    let mut g_plus = if tail { esw / sc.alpha } else { 0.0 } + sc.epsilon;
    let mut ig = [0.0; 2];
    for i in (0..=m).rev() {
        let w = s.w_minus[i];
        let range = pair.withdrawal_range(w);
        let sg = s.sig[i];
        let dq = reward - g_plus;
        let mut g_minus = g_plus;
        if range > 0.0 {
            let up = dq * range * sg * (1.0 - sg);
            pair.q_net.backward(&s.tq[i], &[up], &mut g.q, &mut ig);
            g_minus += ig[0] / pair.stats.sd[i];
            if w < q_max {
                g_minus += dq * sg;
            }
        }
        if i == 0 {
            break;
        }
        let k = i - 1;
        let (rs, rb) = paths.get(j, k);
        let wp = s.w_plus[k];
        g_plus = if wp > 0.0 {
            let p = s.p[k];
            let dp = g_minus * wp * (rs - rb);
            let c = dp * p * (1.0 - p);
            pair.p_net.backward(&s.tp[k], &[c, -c], &mut g.p, &mut ig);
            g_minus * (p * rs + (1.0 - p) * rb) + ig[0] / pair.stats.sd[k]
        } else {
            g_minus * rb * debt_growth
        };
    }
}

const GRAD_CHUNK: usize = 64;

/// Gradient of the sampled objective (to be maximised) over the listed paths,
/// averaged over those paths.
pub fn batch_gradient(pair: &PolicyPair, paths: &PathSet, indices: &[usize], m: &MarketParams) -> Result<Gradient> {
    if paths.n_periods() != pair.scenario.n_rebalances {
        return Err(Error::Dimension("path horizon differs from the scenario".into()));
    }
    if indices.is_empty() {
        return Err(invalid("empty minibatch"));
    }
    let debt_growth = (m.borrow_spread * pair.scenario.dt()).exp();
    let parts: Vec<Gradient> = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut s = Scratch::new(pair);
            let mut g = Gradient::zeros(pair);
            for &j in chunk {
                path_gradient(pair, paths, j, debt_growth, &mut s, &mut g);
            }
            g
        })
        .collect();
    let mut total = Gradient::zeros(pair);
    for p in &parts {
        total.add(p);
    }
    Ok(total.mean())
}

/// Full-dataset sampled objective of a policy at its own `W*`.
pub fn dataset_objective(pair: &PolicyPair, paths: &PathSet, m: &MarketParams) -> Result<f64> {
    let r = rollout(pair, paths, &pair.scenario, m)?;
    let sc = &pair.scenario;
    let lo = sc.n_events() as f64 * sc.q_min;
    let hi = sc.n_events() as f64 * sc.q_max;
    if let Some(bad) = r.withdrawal_sums.iter().find(|s| !(**s >= lo - 1e-9 && **s <= hi + 1e-9)) {
        return Err(Error::Numerical(format!("inadmissible withdrawal total {bad}")));
    }
    Ok(objective_value(&r, sc, pair.w_star))
}

/// Set `W*` to the empirical alpha-quantile of terminal wealth under the current policy.
pub fn init_wstar_at_var(pair: &mut PolicyPair, paths: &PathSet, m: &MarketParams) -> Result<()> {
    let r = rollout(pair, paths, &pair.scenario, m)?;
    pair.w_star = empirical_var(&r.terminal_wealth, pair.scenario.alpha)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iter: usize,
    pub batch_obj: f64,
    pub full_obj: Option<f64>,
    pub lr: f64,
    pub w_star: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best policy seen at the full-dataset checkpoints.
    pub best: PolicyPair,
    pub best_objective: f64,
    pub best_iteration: usize,
    pub log: Vec<TrainLogRow>,
}

/// Maximise the sampled objective over network parameters and `W*`.
pub fn train(pair: PolicyPair, paths: &PathSet, m: &MarketParams, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    pair.scenario.validate()?;
    let n = paths.n_paths();
    if n == 0 {
        return Err(invalid("no training paths"));
    }
    let batch = if config.batch_size > n {
        warn!("batch size {} exceeds the {} training paths; using full batches", config.batch_size, n);
        n
    } else {
        config.batch_size
    };
    let per_epoch = n / batch;

    let mut pair = pair;
    let mut adam_q = AdamState::new(pair.q_net.params().len());
    let mut adam_p = AdamState::new(pair.p_net.params().len());
    let mut adam_w = AdamState::new(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch = usize::MAX;

    let mut best = pair.clone();
    let mut best_objective = dataset_objective(&pair, paths, m)?;
    let mut best_iteration = 0;
    let mut log = Vec::with_capacity(config.n_iterations);

    for iter in 0..config.n_iterations {
        let e = iter / per_epoch;
        if e != epoch {
            epoch = e;
            order.iter_mut().enumerate().for_each(|(k, v)| *v = k);
            order.shuffle(&mut rng::stream(config.seed, rng::DOMAIN_SHUFFLE, e as u64));
        }
        let b = iter % per_epoch;
        let g = batch_gradient(&pair, paths, &order[b * batch..(b + 1) * batch], m)?;
        if !g.objective.is_finite() || g.q.iter().chain(&g.p).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite objective or gradient at iteration {iter} (batch objective {}, w_star {})",
                g.objective, pair.w_star
            )));
        }
        let factor = config.lr_factor(iter);
        let lr = config.lr_params * factor;
        let neg_q: Vec<f64> = g.q.iter().map(|v| -v).collect();
        let neg_p: Vec<f64> = g.p.iter().map(|v| -v).collect();
        let (b1, b2, eps, wd) = (config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay);
        adam_step(pair.q_net.params_mut(), &neg_q, &mut adam_q, lr, b1, b2, eps, wd);
        adam_step(pair.p_net.params_mut(), &neg_p, &mut adam_p, lr, b1, b2, eps, wd);
        let mut ws = [pair.w_star];
        adam_step(&mut ws, &[-g.w_star], &mut adam_w, config.lr_wstar * factor, b1, b2, eps, 0.0);
        pair.w_star = ws[0];

        let evaluate = (iter + 1) % config.eval_every == 0 || iter + 1 == config.n_iterations;
        let full = if evaluate {
            let v = dataset_objective(&pair, paths, m)?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite full objective at iteration {iter}")));
            }
            if v > best_objective {
                best_objective = v;
                best = pair.clone();
                best_iteration = iter + 1;
            }
            info!("iter {} full objective {:.4} (best {:.4}) w* {:.3}", iter + 1, v, best_objective, pair.w_star);
            Some(v)
        } else {
            None
        };
        log.push(TrainLogRow { iter: iter + 1, batch_obj: g.objective, full_obj: full, lr, w_star: pair.w_star });
    }
    Ok(TrainOutcome { best, best_objective, best_iteration, log })
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub kappa: Kappa,
    pub outcome: TrainOutcome,
    /// Statistics of the best policy on the training paths.
    pub point: FrontierPoint,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub failures: Vec<(Kappa, String)>,
}

/// Train along an ascending list of `kappa` values, warm-starting each point
/// from the previous point's best policy.
#[allow(clippy::too_many_arguments)]
pub fn frontier_sweep(
    kappas: &[Kappa],
    paths: &PathSet,
    scenario: &ScenarioConfig,
    m: &MarketParams,
    config: &TrainConfig,
    stats: &StandardizationStats,
    specs: (NetSpec, NetSpec),
) -> Result<SweepResult> {
    if kappas.is_empty() {
        return Err(invalid("empty kappa list"));
    }
    if kappas.windows(2).any(|w| w[0].as_f64() >= w[1].as_f64()) {
        return Err(invalid("kappa values must be strictly ascending"));
    }
    let cold = |k: Kappa| -> Result<PolicyPair> {
        let mut pair = PolicyPair::cold(scenario.with_kappa(k), stats.clone(), specs.0, specs.1, config.seed)?;
        init_wstar_at_var(&mut pair, paths, m)?;
        Ok(pair)
    };
    let mut result = SweepResult::default();
    let mut previous: Option<PolicyPair> = None;
    for &k in kappas {
        let start = match previous.take() {
            Some(mut p) => {
                p.scenario = p.scenario.with_kappa(k);
                p
            }
            None => cold(k)?,
        };
        info!("training kappa = {k}");
        match train(start, paths, m, config) {
            Ok(outcome) => {
                let r = rollout(&outcome.best, paths, &outcome.best.scenario, m)?;
                let point = frontier_point(&r, &outcome.best.scenario, outcome.best.w_star)?;
                previous = Some(outcome.best.clone());
                result.points.push(SweepPoint { kappa: k, outcome, point });
            }
            Err(e) => {
                warn!("training failed at kappa = {k}: {e}; the next point starts cold");
                result.failures.push((k, e.to_string()));
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut x = [0.0];
        let mut st = AdamState::new(1);
        adam_step(&mut x, &[1.0], &mut st, 0.1, 0.9, 0.998, 1e-8, 0.0);
        let hand = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((x[0] - hand).abs() < 1e-12);
        assert!((x[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut x = [2.0];
        let mut st = AdamState::new(1);
        adam_step(&mut x, &[0.0], &mut st, 0.1, 0.9, 0.998, 1e-8, 0.0);
        assert_eq!(x[0], 2.0);
        adam_step(&mut x, &[0.0], &mut st, 0.1, 0.9, 0.998, 1e-8, 1e-4);
        assert!(x[0] < 2.0);
    }

    #[test]
    fn lr_schedule_milestones() {
        let c = TrainConfig { n_iterations: 100, ..Default::default() };
        assert_eq!(c.lr_factor(69), 1.0);
        assert!((c.lr_factor(70) - 0.2).abs() < 1e-15);
        assert!((c.lr_factor(97) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { milestones: vec![1.5], ..Default::default() }.validate().is_err());
    }
}

//! Backward induction over rebalancing dates.

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::controls::StoredControls;
use super::fourier::{Kernel1d, Kernel2d};
use super::grid::{Axis, GridSpec, WealthGrid};
use crate::error::{invalid, Error, Result};
use crate::market::MarketParams;
use crate::scenario::ScenarioConfig;

/// Value just after a rebalancing decision, as a function of the holdings.
pub trait Continuation: Sync {
    /// Value of holding `s` in stock and `b` in bond, `s + b > 0`.
    fn solvent(&self, s: f64, b: f64) -> f64;
    /// Value of holding wealth `w <= 0`.
    fn debt(&self, w: f64) -> f64;
}

/// Continuation that depends on total wealth only.
pub struct WealthContinuation<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> Continuation for WealthContinuation<F> {
    fn solvent(&self, s: f64, b: f64) -> f64 {
        (self.0)(s + b)
    }

    fn debt(&self, w: f64) -> f64 {
        (self.0)(w)
    }
}

/// Continuation stored on the solver's grids, interpolated linearly in log space.
pub struct GridContinuation<'a> {
    ax_s: &'a Axis,
    ax_b: &'a Axis,
    ax_d: &'a Axis,
    solvent: &'a [f64],
    debt: &'a [f64],
}

impl Continuation for GridContinuation<'_> {
    #[inline]
    fn solvent(&self, s: f64, b: f64) -> f64 {
        let (i, ti) = self.ax_s.locate(s.ln());
        let (j, tj) = self.ax_b.locate(b.ln());
        let nb = self.ax_b.n;
        let v = self.solvent;
        let r0 = v[i * nb + j] + tj * (v[i * nb + j + 1] - v[i * nb + j]);
        let r1 = v[(i + 1) * nb + j] + tj * (v[(i + 1) * nb + j + 1] - v[(i + 1) * nb + j]);
        r0 + ti * (r1 - r0)
    }

    #[inline]
    fn debt(&self, w: f64) -> f64 {
        let (k, t) = self.ax_d.locate((-w).ln());
        self.debt[k] + t * (self.debt[k + 1] - self.debt[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeControl {
    pub q: f64,
    pub p: f64,
    pub value: f64,
}

#[inline]
fn at_least(v: f64, best: f64) -> bool {
    v >= best - 1e-12 * best.abs().max(1.0)
}

#[inline]
fn strictly_above(v: f64, best: f64) -> bool {
    v > best + 1e-12 * best.abs().max(1.0)
}

/// Candidate withdrawals at wealth `w`: grid points inside the admissible
/// interval plus its upper end.
fn withdrawal_candidates(sc: &ScenarioConfig, q_grid: &[f64], w: f64, out: &mut Vec<f64>) {
    out.clear();
    let (lo, hi) = sc.withdrawal_bounds(w);
    out.extend(q_grid.iter().copied().filter(|q| *q >= lo && *q <= hi));
    if out.last().is_none_or(|q| *q < hi) {
        out.push(hi);
    }
}

/// Exhaustive search of withdrawal and allocation at one wealth level.
///
/// Ties prefer the largest withdrawal and then the smallest stock fraction.
/// With `final_step` the allocation is fixed at zero.
pub fn optimize_node<C: Continuation>(
    cont: &C,
    sc: &ScenarioConfig,
    w: f64,
    final_step: bool,
    q_grid: &[f64],
    p_grid: &[f64],
) -> NodeControl {
    let reward = sc.kappa.reward_weight();
    let mut qs = Vec::with_capacity(q_grid.len() + 1);
    withdrawal_candidates(sc, q_grid, w, &mut qs);
    let mut best = NodeControl { q: f64::NAN, p: 0.0, value: f64::NEG_INFINITY };
    for &q in &qs {
        let wp = w - q;
        let (p, cv) = if wp <= 0.0 {
            (0.0, cont.debt(wp))
        } else if final_step {
            (0.0, cont.solvent(0.0, wp))
        } else {
            let mut bp = (0.0, f64::NEG_INFINITY);
            for &p in p_grid {
                let v = cont.solvent(wp * p, wp * (1.0 - p));
                if bp.1 == f64::NEG_INFINITY || strictly_above(v, bp.1) {
                    bp = (p, v);
                }
            }
            bp
        };
        let value = reward * q + cv;
        if best.q.is_nan() || at_least(value, best.value) {
            best = NodeControl { q, p, value };
        }
    }
    best
}

/// Output of one rebalancing step on the wealth grid.
#[derive(Debug, Clone)]
pub struct Rebalanced {
    /// Pre-rebalance value at each wealth node.
    pub value: Vec<f64>,
    pub q: Vec<f64>,
    /// Optimal stock fraction when post-withdrawal wealth equals the node.
    pub p: Vec<f64>,
    /// Pre-rebalance value on the debt nodes.
    pub debt: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WstarSearch {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Asset-axis node count of the grid used for the coarse scan.
    pub coarse_nodes: usize,
    /// Width of the final golden-section bracket.
    pub tol: f64,
}

impl Default for WstarSearch {
    fn default() -> Self {
        Self { lo: -1000.0, hi: 1000.0, step: 25.0, coarse_nodes: 256, tol: 0.05 }
    }
}

/// Values and controls of a solve at fixed `W*`.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pub w_star: f64,
    /// Value at `t_0` before the first decision on the `(ln s, ln b)` grid, stock-major.
    pub solvent: Vec<f64>,
    /// Value at `t_0` before the first decision on the debt grid.
    pub debt: Vec<f64>,
    pub controls: StoredControls,
}

#[derive(Debug, Clone)]
pub struct FixedSolve {
    /// Value at the initial state `(s, b) = (0, W0)`.
    pub value: f64,
    pub grid: ValueGrid,
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub value: f64,
    pub w_star: f64,
    pub grid: ValueGrid,
    /// `(W*, value)` pairs of the coarse scan.
    pub coarse_profile: Vec<(f64, f64)>,
}

pub struct HjbSolver {
    pub market: MarketParams,
    pub scenario: ScenarioConfig,
    pub spec: GridSpec,
    ax_s: Axis,
    ax_b: Axis,
    ax_d: Axis,
    kernel: Kernel2d,
    debt_kernel: Kernel1d,
    wealth: WealthGrid,
    s_nodes: Vec<f64>,
    b_nodes: Vec<f64>,
    d_nodes: Vec<f64>,
    q_grid: Vec<f64>,
    p_grid: Vec<f64>,
}

impl HjbSolver {
    pub fn new(market: &MarketParams, scenario: &ScenarioConfig, spec: &GridSpec) -> Result<Self> {
        market.validate()?;
        scenario.validate()?;
        spec.validate()?;
        let dt = scenario.dt();
        let ax_s = Axis::new(&spec.stock);
        let ax_b = Axis::new(&spec.bond);
        let ax_d = Axis::new(&spec.debt);
        let kernel = Kernel2d::new(market, dt, &ax_s, &ax_b)?;
        let debt_kernel = Kernel1d::new(market, dt, &ax_d)?;
        debug!(
            "grid {}x{}: wrap mass {:.2e} (assets), {:.2e} (debt)",
            ax_s.n, ax_b.n, kernel.boundary_mass, debt_kernel.boundary_mass
        );
        let lo = spec.stock.core_lo.min(spec.bond.core_lo).exp();
        let hi = spec.stock.core_hi.max(spec.bond.core_hi).exp();
        let wealth = WealthGrid::geometric(lo, hi, spec.n_wealth);
        let lin = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n).map(|k| if k + 1 == n { b } else { a + (b - a) * k as f64 / (n - 1) as f64 }).collect()
        };
        Ok(Self {
            market: *market,
            scenario: *scenario,
            spec: *spec,
            s_nodes: (0..ax_s.n).map(|i| ax_s.node(i).exp()).collect(),
            b_nodes: (0..ax_b.n).map(|j| ax_b.node(j).exp()).collect(),
            d_nodes: (0..ax_d.n).map(|k| -ax_d.node(k).exp()).collect(),
            ax_s,
            ax_b,
            ax_d,
            kernel,
            debt_kernel,
            wealth,
            q_grid: lin(scenario.q_min, scenario.q_max, spec.n_q),
            p_grid: lin(0.0, 1.0, spec.n_p),
        })
    }

    pub fn wealth_grid(&self) -> &WealthGrid {
        &self.wealth
    }

    pub fn stock_axis(&self) -> &Axis {
        &self.ax_s
    }

    pub fn bond_axis(&self) -> &Axis {
        &self.ax_b
    }

    pub fn debt_axis(&self) -> &Axis {
        &self.ax_d
    }

    pub fn boundary_mass(&self) -> f64 {
        self.kernel.boundary_mass.max(self.debt_kernel.boundary_mass)
    }

    /// Terminal values on the asset and debt grids.
    pub fn terminal_condition(&self, w_star: f64) -> (Vec<f64>, Vec<f64>) {
        let sc = self.scenario;
        let solvent = self.fill(|w| sc.terminal_value(w, w_star));
        let debt = self.d_nodes.iter().map(|w| sc.terminal_value(*w, w_star)).collect();
        (solvent, debt)
    }

    /// Evaluate a function of total wealth at every asset-grid node.
    fn fill<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Vec<f64> {
        let nb = self.ax_b.n;
        let mut v = vec![0.0; self.ax_s.n * nb];
        v.par_chunks_mut(nb).enumerate().for_each(|(i, row)| {
            let s = self.s_nodes[i];
            for (j, x) in row.iter_mut().enumerate() {
                *x = f(s + self.b_nodes[j]);
            }
        });
        v
    }

    /// One-period conditional expectation on the asset grid, in place.
    pub fn pide_advance(&self, v: &mut [f64]) {
        self.kernel.apply(v);
    }

    /// One-period conditional expectation on the debt grid, in place.
    pub fn debt_advance(&self, v: &mut [f64]) {
        self.debt_kernel.apply(v);
    }

    pub fn grid_continuation<'a>(&'a self, solvent: &'a [f64], debt: &'a [f64]) -> GridContinuation<'a> {
        GridContinuation { ax_s: &self.ax_s, ax_b: &self.ax_b, ax_d: &self.ax_d, solvent, debt }
    }

    /// Optimal controls and pre-decision values on the wealth and debt grids.
    pub fn rebalance_optimize<C: Continuation>(&self, cont: &C, final_step: bool) -> Rebalanced {
        let sc = &self.scenario;
        let reward = sc.kappa.reward_weight();
        let nodes = &self.wealth.nodes;
        let (g, p): (Vec<f64>, Vec<f64>) = nodes
            .par_iter()
            .map(|&w| {
                if final_step {
                    return (cont.solvent(0.0, w), 0.0);
                }
                let mut best = (f64::NEG_INFINITY, 0.0);
                for &p in &self.p_grid {
                    let v = cont.solvent(w * p, w * (1.0 - p));
                    if best.0 == f64::NEG_INFINITY || strictly_above(v, best.0) {
                        best = (v, p);
                    }
                }
                best
            })
            .unzip();
        let (value, q): (Vec<f64>, Vec<f64>) = nodes
            .par_iter()
            .map_init(Vec::new, |qs, &w| {
                withdrawal_candidates(sc, &self.q_grid, w, qs);
                let mut best = (f64::NEG_INFINITY, f64::NAN);
                for &q in qs.iter() {
                    let wp = w - q;
                    let cv = if wp > 0.0 { self.wealth.interp(&g, wp) } else { cont.debt(wp) };
                    let v = reward * q + cv;
                    if best.1.is_nan() || at_least(v, best.0) {
                        best = (v, q);
                    }
                }
                best
            })
            .unzip();
        let debt = self.d_nodes.iter().map(|w| reward * sc.q_min + cont.debt(w - sc.q_min)).collect();
        Rebalanced { value, q, p, debt }
    }

    /// Backward induction with an arbitrary terminal function of wealth.
    pub fn solve_with_terminal<F: Fn(f64) -> f64 + Sync>(&self, w_star: f64, terminal: F) -> Result<FixedSolve> {
        let sc = self.scenario;
        let m = sc.n_rebalances;
        let term = WealthContinuation(&terminal);
        let mut q_ctl = vec![Vec::new(); m + 1];
        let mut p_ctl = vec![Vec::new(); m + 1];

        let r = self.rebalance_optimize(&term, true);
        q_ctl[m] = r.q;
        p_ctl[m] = r.p;
        let mut v = self.fill(|w| self.wealth.interp(&r.value, w));
        let mut d = r.debt;
        let mut value = f64::NAN;
        for n in (0..m).rev() {
            self.pide_advance(&mut v);
            self.debt_advance(&mut d);
            if v.iter().chain(&d).any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("non-finite value after the advance into t_{n}")));
            }
            let cont = self.grid_continuation(&v, &d);
            let r = self.rebalance_optimize(&cont, false);
            if n == 0 {
                value = optimize_node(&cont, &sc, sc.initial_wealth, false, &self.q_grid, &self.p_grid).value;
            }
            q_ctl[n] = r.q;
            p_ctl[n] = r.p;
            v = self.fill(|w| self.wealth.interp(&r.value, w));
            d = r.debt;
        }
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite value at the initial state".into()));
        }
        let controls = StoredControls::new(sc, self.spec, self.wealth.nodes.clone(), q_ctl, p_ctl, w_star, value)?;
        Ok(FixedSolve { value, grid: ValueGrid { w_star, solvent: v, debt: d, controls } })
    }

    /// Solve the inner problem with `W*` held fixed.
    pub fn solve_fixed_wstar(&self, w_star: f64) -> Result<FixedSolve> {
        if !w_star.is_finite() {
            return Err(invalid("w_star must be finite"));
        }
        let sc = self.scenario;
        self.solve_with_terminal(w_star, move |w| sc.terminal_value(w, w_star))
    }

    /// Outer maximisation over `W*`: a scan on a coarser grid followed by
    /// golden-section refinement on this grid.
    pub fn optimize_wstar(&self, search: &WstarSearch) -> Result<HjbSolution> {
        if !(search.step > 0.0 && search.hi > search.lo && search.tol > 0.0) {
            return Err(invalid("W* search needs lo < hi and positive step and tolerance"));
        }
        let factor = (self.spec.stock.n / search.coarse_nodes.max(16)).max(1);
        let coarse_owned;
        let coarse = if factor > 1 {
            coarse_owned = HjbSolver::new(&self.market, &self.scenario, &self.spec.coarsened(factor))?;
            &coarse_owned
        } else {
            self
        };
        let n_steps = ((search.hi - search.lo) / search.step).round() as usize;
        let mut profile = Vec::with_capacity(n_steps + 1);
        for k in 0..=n_steps {
            let ws = search.lo + k as f64 * search.step;
            profile.push((ws, coarse.solve_fixed_wstar(ws)?.value));
        }
        let &(w0, _) = profile
            .iter()
            .fold(&profile[0], |b, x| if x.1 > b.1 { x } else { b });
        info!("coarse W* scan peaks at {w0}");

        let f = |ws: f64| -> Result<f64> { Ok(self.solve_fixed_wstar(ws)?.value) };
        let (mut a, mut b) = (w0 - 2.0 * search.step, w0 + 2.0 * search.step);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, mut fd) = (f(c)?, f(d)?);
        while b - a > search.tol {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = f(d)?;
            }
        }
        let w_best = if fc >= fd { c } else { d };
        let mut solve = self.solve_fixed_wstar(w_best)?;
        let mut w_star = w_best;
        let at_scan = self.solve_fixed_wstar(w0)?;
        if at_scan.value > solve.value {
            solve = at_scan;
            w_star = w0;
        }
        info!("W* = {w_star:.3}, value {:.6}", solve.value);
        Ok(HjbSolution { value: solve.value, w_star, grid: solve.grid, coarse_profile: profile })
    }
}

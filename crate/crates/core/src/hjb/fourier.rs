//! One-period conditional expectations on periodic log grids.
//!
//! On a uniform grid the expectation `E[V(x + Y)]` is a discrete convolution
//! with the trapezoidal samples of the density of `Y`. Its DFT multiplier is
//! the characteristic function of `Y` summed over the grid's aliases, which is
//! computed here in closed form, so no density is ever tabulated.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::grid::Axis;
use crate::error::{Error, Result};
use crate::market::{AssetJumpParams, MarketParams};

/// Exponent beyond which an alias term is negligible.
const ALIAS_CUTOFF: f64 = -40.0;

/// Signed angular frequency of DFT bin `k`.
fn freq(k: usize, n: usize, h: f64) -> f64 {
    let kk = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * PI * kk / (n as f64 * h)
}

fn alias_count(h: f64, sigma: f64, dt: f64) -> i64 {
    (1.5 * h / (sigma * dt.sqrt())).ceil() as i64 + 1
}

/// `dt` times the Levy exponent of one asset's log return, without the
/// Gaussian cross term.
fn marginal_exponent(p: &AssetJumpParams, drift: f64, u: f64, dt: f64) -> Complex64 {
    let jump = p.lambda * (p.log_jump_cf(u) - 1.0);
    dt * (Complex64::new(-0.5 * p.sigma * p.sigma * u * u, drift * u) + jump)
}

/// Alias terms `(u, exponent)` for each frequency bin of an axis.
fn alias_table(p: &AssetJumpParams, drift: f64, ax: &Axis, dt: f64) -> Vec<Vec<(f64, Complex64)>> {
    let a = alias_count(ax.h, p.sigma, dt);
    (0..ax.n)
        .map(|k| {
            let w = freq(k, ax.n, ax.h);
            (-a..=a)
                .map(|m| {
                    let u = w + 2.0 * PI * m as f64 / ax.h;
                    (u, marginal_exponent(p, drift, u, dt))
                })
                .filter(|(_, e)| e.re > ALIAS_CUTOFF)
                .collect()
        })
        .collect()
}

/// Largest kernel mass that would wrap around the periodic domain for any core node.
fn wrap_mass(mult: &[Complex64], ax: &Axis) -> f64 {
    let n = ax.n;
    let mut t = mult.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut t);
    let tm = |d: i64| t[d.rem_euclid(n as i64) as usize].re.abs() / n as f64;
    let half = (n / 2) as i64;
    let up: f64 = ((n - ax.hi) as i64..half).map(tm).sum();
    let down: f64 = (-half..-(ax.lo as i64)).map(tm).sum();
    up.max(down)
}

fn check_mass(mass: f64, what: &str) -> Result<()> {
    if mass > 1e-8 {
        return Err(Error::Numerical(format!(
            "{what} grid padding is too narrow: {mass:.3e} of the transition mass wraps around"
        )));
    }
    Ok(())
}

/// Joint transition of `(ln s, ln b)` over one period.
pub struct Kernel2d {
    ns: usize,
    nb: usize,
    /// Multipliers stored bond-frequency-major: `mult[kb * ns + ks]`.
    mult: Vec<Complex64>,
    fwd_s: Arc<dyn Fft<f64>>,
    inv_s: Arc<dyn Fft<f64>>,
    fwd_b: Arc<dyn Fft<f64>>,
    inv_b: Arc<dyn Fft<f64>>,
    pub boundary_mass: f64,
}

impl Kernel2d {
    pub fn new(m: &MarketParams, dt: f64, ax_s: &Axis, ax_b: &Axis) -> Result<Self> {
        let (ns, nb) = (ax_s.n, ax_b.n);
        let ts = alias_table(&m.stock, m.stock.log_drift()?, ax_s, dt);
        let tb = alias_table(&m.bond, m.bond.log_drift()?, ax_b, dt);
        let cross = m.rho_sb * m.stock.sigma * m.bond.sigma * dt;
        let mut mult = vec![Complex64::new(0.0, 0.0); ns * nb];
        mult.par_chunks_mut(ns).enumerate().for_each(|(kb, row)| {
            for (ks, cell) in row.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for &(u, es) in &ts[ks] {
                    for &(v, eb) in &tb[kb] {
                        let e = es + eb - cross * u * v;
                        if e.re > ALIAS_CUTOFF {
                            acc += e.exp();
                        }
                    }
                }
                *cell = acc;
            }
        });
        let norm = mult[0].re;
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numerical("transition kernel normalisation failed".into()));
        }
        mult.iter_mut().for_each(|c| *c /= norm);
        let marg_s: Vec<Complex64> = mult[..ns].to_vec();
        let marg_b: Vec<Complex64> = (0..nb).map(|kb| mult[kb * ns]).collect();
        let boundary_mass = wrap_mass(&marg_s, ax_s) + wrap_mass(&marg_b, ax_b);
        check_mass(boundary_mass, "asset")?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            ns,
            nb,
            mult,
            fwd_s: planner.plan_fft_forward(ns),
            inv_s: planner.plan_fft_inverse(ns),
            fwd_b: planner.plan_fft_forward(nb),
            inv_b: planner.plan_fft_inverse(nb),
            boundary_mass,
        })
    }

    /// Replace `v` (stock-major, `v[is * nb + ib]`) by its one-period conditional expectation.
    pub fn apply(&self, v: &mut [f64]) {
        let (ns, nb) = (self.ns, self.nb);
        let rows = 32;
        let mut buf: Vec<Complex64> = v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        buf.par_chunks_mut(nb * rows).for_each(|c| self.fwd_b.process(c));
        let mut t = transpose(&buf, ns, nb);
        t.par_chunks_mut(ns * rows).enumerate().for_each(|(c, chunk)| {
            self.fwd_s.process(chunk);
            let off = c * ns * rows;
            for (k, x) in chunk.iter_mut().enumerate() {
                *x *= self.mult[off + k];
            }
            self.inv_s.process(chunk);
        });
        let mut back = transpose(&t, nb, ns);
        back.par_chunks_mut(nb * rows).for_each(|c| self.inv_b.process(c));
        let scale = 1.0 / (ns * nb) as f64;
        for (x, c) in v.iter_mut().zip(&back) {
            *x = c.re * scale;
        }
    }
}

fn transpose(a: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = a[r * cols + c];
                }
            }
        }
    }
    out
}

/// Transition of `ln(-w)` for insolvent wealth carried in the bond at a spread.
pub struct Kernel1d {
    mult: Vec<Complex64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    pub boundary_mass: f64,
}

impl Kernel1d {
    pub fn new(m: &MarketParams, dt: f64, ax: &Axis) -> Result<Self> {
        let drift = m.bond.log_drift()? + m.borrow_spread;
        let table = alias_table(&m.bond, drift, ax, dt);
        let mut mult: Vec<Complex64> = table.iter().map(|terms| terms.iter().map(|(_, e)| e.exp()).sum()).collect();
        let norm = mult[0].re;
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numerical("debt kernel normalisation failed".into()));
        }
        mult.iter_mut().for_each(|c| *c /= norm);
        let boundary_mass = wrap_mass(&mult, ax);
        check_mass(boundary_mass, "debt")?;
        let mut planner = FftPlanner::new();
        Ok(Self { fwd: planner.plan_fft_forward(ax.n), inv: planner.plan_fft_inverse(ax.n), mult, boundary_mass })
    }

    pub fn apply(&self, v: &mut [f64]) {
        let n = v.len();
        let mut buf: Vec<Complex64> = v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        self.fwd.process(&mut buf);
        for (x, m) in buf.iter_mut().zip(&self.mult) {
            *x *= m;
        }
        self.inv.process(&mut buf);
        for (x, c) in v.iter_mut().zip(&buf) {
            *x = c.re / n as f64;
        }
    }
}

//! Log-spaced computational grids.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Lower edge of the asset grids' core region, `ln 0.05`.
pub const LOG_CORE_LO: f64 = -2.995_732_273_553_991;
/// Upper edge of the asset grids' core region, `ln 50000`.
pub const LOG_CORE_HI: f64 = 10.819_778_284_410_283;

/// One log-space axis: a core region where values are used, extended by
/// padding on both sides to absorb the periodic wrap of the Fourier step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub n: usize,
    pub core_lo: f64,
    pub core_hi: f64,
    pub pad_lo: f64,
    pub pad_hi: f64,
}

impl AxisSpec {
    pub fn validate(&self, name: &str) -> Result<()> {
        if self.n < 16 || !self.n.is_power_of_two() {
            return Err(invalid(format!("{name} axis needs a power-of-two node count >= 16, got {}", self.n)));
        }
        if !(self.core_lo.is_finite() && self.core_hi.is_finite() && self.core_lo < self.core_hi) {
            return Err(invalid(format!("{name} axis core bounds are not ordered")));
        }
        if !(self.pad_lo >= 0.0 && self.pad_hi >= 0.0) {
            return Err(invalid(format!("{name} axis padding must be non-negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Axis in `ln s`.
    pub stock: AxisSpec,
    /// Axis in `ln b`.
    pub bond: AxisSpec,
    /// Axis in `ln(-w)` for insolvent states.
    pub debt: AxisSpec,
    /// Nodes of the positive wealth grid carrying the value and the controls.
    pub n_wealth: usize,
    pub n_q: usize,
    pub n_p: usize,
}

impl GridSpec {
    /// Default grid with `n` nodes on each asset axis.
    pub fn square(n: usize) -> Self {
        let axis = |pad_lo, pad_hi| AxisSpec { n, core_lo: LOG_CORE_LO, core_hi: LOG_CORE_HI, pad_lo, pad_hi };
        Self {
            stock: axis(4.5, 5.0),
            bond: axis(1.4, 1.4),
            debt: axis(1.4, 1.4),
            n_wealth: (8 * n).max(2048),
            n_q: 101,
            n_p: 101,
        }
    }

    /// Same domain with every node count divided by `factor` (floored at 16).
    pub fn coarsened(&self, factor: usize) -> Self {
        let c = |a: AxisSpec| AxisSpec { n: (a.n / factor).max(16), ..a };
        Self {
            stock: c(self.stock),
            bond: c(self.bond),
            debt: c(self.debt),
            n_wealth: (self.n_wealth / factor).max(512),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stock.validate("stock")?;
        self.bond.validate("bond")?;
        self.debt.validate("debt")?;
        if self.n_wealth < 2 || self.n_q < 2 || self.n_p < 2 {
            return Err(invalid("wealth and control grids need at least two nodes"));
        }
        Ok(())
    }
}

/// Materialised axis: nodes `x0 + i h` for `i < n`, with the core spanning
/// node indices `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub n: usize,
    pub x0: f64,
    pub h: f64,
    pub lo: usize,
    pub hi: usize,
}

impl Axis {
    pub fn new(spec: &AxisSpec) -> Self {
        let x0 = spec.core_lo - spec.pad_lo;
        let h = (spec.core_hi + spec.pad_hi - x0) / spec.n as f64;
        let lo = ((spec.core_lo - x0) / h - 1e-9).ceil().max(0.0) as usize;
        let hi = (((spec.core_hi - x0) / h + 1e-9).floor() as usize).min(spec.n - 1);
        Self { n: spec.n, x0, h, lo, hi }
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    /// Cell index and fraction of `x`, clamped into the core.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let t = ((x - self.x0) / self.h).clamp(self.lo as f64, self.hi as f64);
        let i = (t.floor() as usize).min(self.hi - 1);
        (i, t - i as f64)
    }
}

/// Strictly increasing grid on which a piecewise-linear function is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthGrid {
    pub nodes: Vec<f64>,
    log_lo: f64,
    log_step: f64,
}

impl WealthGrid {
    /// `n` nodes geometrically spaced between `lo` and `hi`.
    pub fn geometric(lo: f64, hi: f64, n: usize) -> Self {
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|k| (a + k as f64 * step).exp()).collect();
        nodes[0] = lo;
        nodes[n - 1] = hi;
        Self { nodes, log_lo: a, log_step: step }
    }

    /// Rebuild from stored nodes (which must be geometric).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] <= 0.0 || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("wealth grid must be positive and strictly increasing"));
        }
        let n = nodes.len();
        let log_lo = nodes[0].ln();
        let log_step = (nodes[n - 1].ln() - log_lo) / (n - 1) as f64;
        Ok(Self { nodes, log_lo, log_step })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Interpolate `values` linearly in wealth; constant beyond the ends.
    #[inline]
    pub fn interp(&self, values: &[f64], w: f64) -> f64 {
        let n = self.nodes.len();
        if !(w > self.nodes[0]) {
            return values[0];
        }
        if w >= self.nodes[n - 1] {
            return values[n - 1];
        }
        let mut k = (((w.ln() - self.log_lo) / self.log_step).floor() as usize).min(n - 2);
        while k > 0 && self.nodes[k] > w {
            k -= 1;
        }
        while k + 2 < n && self.nodes[k + 1] <= w {
            k += 1;
        }
        let (a, b) = (self.nodes[k], self.nodes[k + 1]);
        let t = (w - a) / (b - a);
        values[k] + t * (values[k + 1] - values[k])
    }

    pub fn contains(&self, w: f64) -> bool {
        w >= self.lo() && w <= self.hi()
    }
}

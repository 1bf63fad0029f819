//! Double-exponential jump diffusion for the stock and bond indices.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::paths::PathSet;
use crate::rng;

/// Real-world parameters of one asset's log-return process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetJumpParams {
    pub mu: f64,
    pub sigma: f64,
    /// Jump arrival intensity per year.
    pub lambda: f64,
    /// Probability that a jump is upward.
    pub u_up: f64,
    pub eta1: f64,
    pub eta2: f64,
}

impl AssetJumpParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.sigma, self.lambda, self.u_up, self.eta1, self.eta2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("asset parameters must be finite"));
        }
        if self.sigma <= 0.0 || self.lambda < 0.0 {
            return Err(invalid("sigma must be positive and lambda non-negative"));
        }
        if !(0.0..=1.0).contains(&self.u_up) {
            return Err(invalid(format!("u_up must lie in [0, 1], got {}", self.u_up)));
        }
        if self.eta1 <= 1.0 {
            return Err(invalid(format!(
                "eta1 must exceed 1 for the jump mean to exist, got {}",
                self.eta1
            )));
        }
        if self.eta2 <= 0.0 {
            return Err(invalid(format!("eta2 must be positive, got {}", self.eta2)));
        }
        Ok(())
    }

    /// Mean relative jump size `E[xi] - 1`.
    pub fn jump_compensator(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.u_up * self.eta1 / (self.eta1 - 1.0)
            + (1.0 - self.u_up) * self.eta2 / (self.eta2 + 1.0)
            - 1.0)
    }

    /// Drift of the continuous part of `log S` after compensation.
    pub fn log_drift(&self) -> Result<f64> {
        Ok(self.mu - self.lambda * self.jump_compensator()? - 0.5 * self.sigma * self.sigma)
    }

    /// Characteristic function of a single log jump, `E[exp(i u log xi)]`.
    pub fn log_jump_cf(&self, u: f64) -> Complex64 {
        let up = Complex64::new(self.eta1, -u);
        let down = Complex64::new(self.eta2, u);
        self.u_up * self.eta1 / up + (1.0 - self.u_up) * self.eta2 / down
    }

    /// Draw a single log jump size.
    pub fn sample_log_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let up = rng.random::<f64>() < self.u_up;
        let e: f64 = Exp1.sample(rng);
        if up {
            e / self.eta1
        } else {
            -e / self.eta2
        }
    }
}

/// Joint parameters of the two-asset market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub stock: AssetJumpParams,
    pub bond: AssetJumpParams,
    /// Correlation of the Brownian drivers.
    pub rho_sb: f64,
    /// Spread over the bond drift charged on negative wealth.
    #[serde(default)]
    pub borrow_spread: f64,
}

impl MarketParams {
    /// Values fitted to the 1926:1-2019:12 US index series.
    pub fn crsp_calibrated() -> Self {
        Self {
            stock: AssetJumpParams {
                mu: 0.0877,
                sigma: 0.1459,
                lambda: 0.3191,
                u_up: 0.2333,
                eta1: 4.3608,
                eta2: 5.504,
            },
            bond: AssetJumpParams {
                mu: 0.0239,
                sigma: 0.0538,
                lambda: 0.3830,
                u_up: 0.6111,
                eta1: 16.19,
                eta2: 17.27,
            },
            rho_sb: 0.04554,
            borrow_spread: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stock.validate()?;
        self.bond.validate()?;
        if !(self.rho_sb.is_finite() && self.rho_sb.abs() <= 1.0) {
            return Err(invalid(format!("rho_sb must lie in [-1, 1], got {}", self.rho_sb)));
        }
        if !(self.borrow_spread.is_finite() && self.borrow_spread >= 0.0) {
            return Err(invalid("borrow_spread must be non-negative"));
        }
        Ok(())
    }
}

impl Default for MarketParams {
    fn default() -> Self {
        Self::crsp_calibrated()
    }
}

/// Mean relative jump size of an asset; errors when `eta1 <= 1`.
pub fn jump_compensator(p: &AssetJumpParams) -> Result<f64> {
    p.jump_compensator()
}

/// Gross return over `dt` given a standard normal shock `z`; jumps come from `rng`.
pub fn sample_period_return<R: Rng + ?Sized>(
    p: &AssetJumpParams,
    dt: f64,
    z: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    Ok(AssetSampler::new(p, dt)?.gross(z, rng))
}

/// Precomputed one-step sampler for one asset.
#[derive(Debug, Clone)]
pub(crate) struct AssetSampler {
    drift: f64,
    vol: f64,
    jumps: Option<Poisson<f64>>,
    params: AssetJumpParams,
}

impl AssetSampler {
    pub(crate) fn new(p: &AssetJumpParams, dt: f64) -> Result<Self> {
        let drift = p.log_drift()? * dt;
        let rate = p.lambda * dt;
        let jumps = if rate > 0.0 {
            Some(Poisson::new(rate).map_err(|e| invalid(format!("jump rate: {e}")))?)
        } else {
            None
        };
        Ok(Self { drift, vol: p.sigma * dt.sqrt(), jumps, params: *p })
    }

    pub(crate) fn gross<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> f64 {
        let mut log_ret = self.drift + self.vol * z;
        if let Some(pois) = &self.jumps {
            let k = pois.sample(rng) as u64;
            for _ in 0..k {
                log_ret += self.params.sample_log_jump(rng);
            }
        }
        log_ret.exp()
    }
}

/// Simulate `n_paths` independent paths of per-period gross returns.
///
/// Path `j` always draws from the same random stream, so the output does not
/// depend on the thread count.
pub fn simulate_paths(
    m: &MarketParams,
    n_paths: usize,
    n_periods: usize,
    dt: f64,
    seed: u64,
) -> Result<PathSet> {
    simulate_path_range(m, 0, n_paths, n_periods, dt, seed)
}

/// Simulate paths `first..first + n_paths` of the stream family `seed`.
///
/// Concatenating consecutive ranges reproduces a single large call exactly.
pub fn simulate_path_range(
    m: &MarketParams,
    first: u64,
    n_paths: usize,
    n_periods: usize,
    dt: f64,
    seed: u64,
) -> Result<PathSet> {
    m.validate()?;
    if n_paths == 0 || n_periods == 0 {
        return Err(invalid("n_paths and n_periods must be positive"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let stock = AssetSampler::new(&m.stock, dt)?;
    let bond = AssetSampler::new(&m.bond, dt)?;
    let rho = m.rho_sb;
    let rho_c = (1.0 - rho * rho).max(0.0).sqrt();

    let stride = n_periods * 2;
    let mut data = vec![0.0; n_paths * stride];
    data.par_chunks_mut(stride).enumerate().for_each(|(j, row)| {
        let mut r = rng::stream(seed, rng::DOMAIN_SIMULATE, first + j as u64);
        for period in row.chunks_exact_mut(2) {
            let z1: f64 = StandardNormal.sample(&mut r);
            let z2: f64 = StandardNormal.sample(&mut r);
            period[0] = stock.gross(z1, &mut r);
            period[1] = bond.gross(rho * z1 + rho_c * z2, &mut r);
        }
    });
    PathSet::new(n_paths, n_periods, data, "synthetic")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_compensator_matches_hand_value() {
        let s = MarketParams::crsp_calibrated().stock;
        let hand = 0.2333 * 4.3608 / 3.3608 + 0.7667 * 5.504 / 6.504 - 1.0;
        let g = jump_compensator(&s).unwrap();
        assert!((g - hand).abs() < 1e-12);
        assert!((g + 0.0484).abs() < 1e-3, "g = {g}");
    }

    #[test]
    fn compensator_rejects_heavy_upper_tail() {
        let mut s = MarketParams::crsp_calibrated().stock;
        s.eta1 = 1.0;
        assert!(jump_compensator(&s).is_err());
    }

    #[test]
    fn compensator_vanishes_without_jump_mass() {
        let s = AssetJumpParams { mu: 0.0, sigma: 0.1, lambda: 1.0, u_up: 1.0, eta1: 1e9, eta2: 1.0 };
        assert!(jump_compensator(&s).unwrap().abs() < 1e-8);
    }

    #[test]
    fn pure_diffusion_step_is_lognormal_formula() {
        let p = AssetJumpParams { mu: 0.05, sigma: 0.2, lambda: 0.0, u_up: 0.5, eta1: 3.0, eta2: 3.0 };
        let mut r = rng::stream(1, 0, 0);
        let g = sample_period_return(&p, 1.0, 0.5, &mut r).unwrap();
        assert!((g - (0.05 - 0.02 + 0.1f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn jump_cf_at_zero_is_one() {
        let p = MarketParams::crsp_calibrated().bond;
        let c = p.log_jump_cf(0.0);
        assert!((c.re - 1.0).abs() < 1e-15 && c.im.abs() < 1e-15);
    }

    #[test]
    fn simulation_is_range_consistent() {
        let m = MarketParams::crsp_calibrated();
        let all = simulate_paths(&m, 10, 5, 1.0, 42).unwrap();
        let tail = simulate_path_range(&m, 6, 4, 5, 1.0, 42).unwrap();
        assert_eq!(&all.returns()[6 * 10..], tail.returns());
    }
}

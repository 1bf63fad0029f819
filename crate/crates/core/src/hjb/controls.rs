//! Optimal controls tabulated on a wealth grid, and their file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::{GridSpec, WealthGrid};
use crate::error::{invalid, Error, Result};
use crate::market::MarketParams;
use crate::objective::{rollout, rollout_with_traces, Policy, RolloutResult};
use crate::paths::PathSet;
use crate::scenario::{Kappa, ScenarioConfig};

pub const CONTROLS_MAGIC: &[u8; 4] = b"DCTL";
pub const CONTROLS_VERSION: u32 = 1;

/// Withdrawal `q_n(w)` (indexed by pre-withdrawal wealth) and stock fraction
/// `p_n(w)` (indexed by post-withdrawal wealth) at each rebalance time.
#[derive(Debug)]
pub struct StoredControls {
    pub scenario: ScenarioConfig,
    pub grid: GridSpec,
    wealth: WealthGrid,
    pub q: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub w_star: f64,
    pub value_t0: f64,
    clamped: AtomicU64,
}

impl Clone for StoredControls {
    fn clone(&self) -> Self {
        Self {
            scenario: self.scenario,
            grid: self.grid,
            wealth: self.wealth.clone(),
            q: self.q.clone(),
            p: self.p.clone(),
            w_star: self.w_star,
            value_t0: self.value_t0,
            clamped: AtomicU64::new(0),
        }
    }
}

impl PartialEq for StoredControls {
    fn eq(&self, o: &Self) -> bool {
        self.scenario == o.scenario
            && self.grid == o.grid
            && self.wealth == o.wealth
            && self.q == o.q
            && self.p == o.p
            && self.w_star.to_bits() == o.w_star.to_bits()
            && self.value_t0.to_bits() == o.value_t0.to_bits()
    }
}

impl StoredControls {
    pub fn new(
        scenario: ScenarioConfig,
        grid: GridSpec,
        wealth: Vec<f64>,
        q: Vec<Vec<f64>>,
        p: Vec<Vec<f64>>,
        w_star: f64,
        value_t0: f64,
    ) -> Result<Self> {
        let nt = scenario.n_events();
        let nw = wealth.len();
        if q.len() != nt || p.len() != nt || q.iter().chain(&p).any(|row| row.len() != nw) {
            return Err(Error::Dimension(format!("controls must be {nt} rows of {nw} values")));
        }
        let wealth = WealthGrid::from_nodes(wealth)?;
        let out = Self { scenario, grid, wealth, q, p, w_star, value_t0, clamped: AtomicU64::new(0) };
        out.check_admissible()?;
        Ok(out)
    }

    /// Controls that ignore wealth: withdrawal `q` clamped to the admissible
    /// set, stock fraction `p`.
    pub fn constant(scenario: ScenarioConfig, q: f64, p: f64) -> Result<Self> {
        let wealth = WealthGrid::geometric(0.05, 5e4, 512);
        let nt = scenario.n_events();
        let qs: Vec<f64> = wealth
            .nodes
            .iter()
            .map(|w| {
                let (lo, hi) = scenario.withdrawal_bounds(*w);
                q.clamp(lo, hi)
            })
            .collect();
        let mut ps = vec![vec![p; wealth.len()]; nt];
        ps[nt - 1].fill(0.0);
        Self::new(scenario, GridSpec::square(16), wealth.nodes, vec![qs; nt], ps, 0.0, f64::NAN)
    }

    pub fn wealth(&self) -> &[f64] {
        &self.wealth.nodes
    }

    /// Number of lookups that fell outside the wealth grid since the last reset.
    pub fn take_clamp_count(&self) -> u64 {
        self.clamped.swap(0, Ordering::Relaxed)
    }

    pub fn check_admissible(&self) -> Result<()> {
        let sc = &self.scenario;
        for (i, (qs, ps)) in self.q.iter().zip(&self.p).enumerate() {
            for (k, w) in self.wealth.nodes.iter().enumerate() {
                let (lo, hi) = sc.withdrawal_bounds(*w);
                let q = qs[k];
                if !(q >= lo - 1e-9 && q <= hi + 1e-9) {
                    return Err(Error::Numerical(format!("withdrawal {q} at t{i}, w={w} is not admissible")));
                }
                let p = ps[k];
                if !(0.0..=1.0).contains(&p) || (i == sc.n_rebalances && p != 0.0) {
                    return Err(Error::Numerical(format!("allocation {p} at t{i}, w={w} is not admissible")));
                }
            }
        }
        Ok(())
    }

    fn lookup(&self, row: &[f64], w: f64) -> f64 {
        if !self.wealth.contains(w) {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        self.wealth.interp(row, w)
    }

    /// Write the binary table to `path` and its JSON manifest alongside.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_binary(&mut bytes)?;
        File::create(path)?.write_all(&bytes)?;
        let manifest = ControlsManifest {
            format_version: CONTROLS_VERSION,
            scenario: self.scenario,
            grid: self.grid,
            w_star: self.w_star,
            kappa: self.scenario.kappa,
            value_t0: if self.value_t0.is_finite() { Some(self.value_t0) } else { None },
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let f = BufWriter::new(File::create(manifest_path(path))?);
        serde_json::to_writer_pretty(f, &manifest)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let manifest: ControlsManifest = serde_json::from_reader(BufReader::new(File::open(manifest_path(path))?))
            .map_err(|e| Error::Corrupt(format!("control manifest unreadable: {e}")))?;
        if manifest.format_version != CONTROLS_VERSION {
            return Err(Error::Version { found: manifest.format_version, expected: CONTROLS_VERSION });
        }
        if hex::encode(Sha256::digest(&bytes)) != manifest.sha256 {
            return Err(Error::Corrupt("control table digest does not match its manifest".into()));
        }
        Self::read_binary(&bytes[..], &manifest)
    }

    fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CONTROLS_MAGIC)?;
        w.write_all(&CONTROLS_VERSION.to_le_bytes())?;
        w.write_all(&(self.q.len() as u32).to_le_bytes())?;
        w.write_all(&(self.wealth.len() as u32).to_le_bytes())?;
        let mut put = |xs: &[f64]| -> Result<()> {
            for x in xs {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        put(&self.wealth.nodes)?;
        for (q, p) in self.q.iter().zip(&self.p) {
            put(q)?;
            put(p)?;
        }
        Ok(())
    }

    fn read_binary(bytes: &[u8], m: &ControlsManifest) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CONTROLS_MAGIC {
            return Err(Error::Corrupt("not a control table".into()));
        }
        let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != CONTROLS_VERSION {
            return Err(Error::Version { found: version, expected: CONTROLS_VERSION });
        }
        let (nt, nw) = (u32_at(8) as usize, u32_at(12) as usize);
        if bytes.len() != 16 + 8 * nw * (1 + 2 * nt) {
            return Err(Error::Corrupt("control table length disagrees with its header".into()));
        }
        let vals: Vec<f64> = bytes[16..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let wealth = vals[..nw].to_vec();
        let (mut q, mut p) = (Vec::with_capacity(nt), Vec::with_capacity(nt));
        for t in 0..nt {
            let base = nw * (1 + 2 * t);
            q.push(vals[base..base + nw].to_vec());
            p.push(vals[base + nw..base + 2 * nw].to_vec());
        }
        Self::new(m.scenario, m.grid, wealth, q, p, m.w_star, m.value_t0.unwrap_or(f64::NAN))
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ControlsManifest {
    format_version: u32,
    scenario: ScenarioConfig,
    grid: GridSpec,
    w_star: f64,
    kappa: Kappa,
    value_t0: Option<f64>,
    sha256: String,
}

impl Policy for StoredControls {
    fn withdrawal(&self, w_minus: f64, i: usize) -> f64 {
        let (lo, hi) = self.scenario.withdrawal_bounds(w_minus);
        if hi <= lo {
            return lo;
        }
        self.lookup(&self.q[i], w_minus).clamp(lo, hi)
    }

    fn allocation(&self, w_plus: f64, i: usize) -> f64 {
        self.lookup(&self.p[i], w_plus).clamp(0.0, 1.0)
    }
}

/// Apply stored controls along sampled paths.
pub fn rollout_stored_controls(
    controls: &StoredControls,
    paths: &PathSet,
    m: &MarketParams,
    traces: bool,
) -> Result<RolloutResult> {
    if paths.n_periods() != controls.scenario.n_rebalances {
        return Err(invalid("path horizon differs from the controls' scenario"));
    }
    controls.take_clamp_count();
    let r = if traces {
        rollout_with_traces(controls, paths, &controls.scenario, m)?
    } else {
        rollout(controls, paths, &controls.scenario, m)?
    };
    let clamped = controls.take_clamp_count();
    if clamped > 0 {
        log::info!("{clamped} control lookups fell outside the wealth grid and were clamped");
    }
    Ok(r)
}

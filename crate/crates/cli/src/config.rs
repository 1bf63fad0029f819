//! Run configuration: built-in defaults, overlaid by a JSON file, overlaid by flags.

use std::path::Path;

use anyhow::{Context, Result};
use decumulate::hjb::{GridSpec, WstarSearch};
use decumulate::policy::NetSpec;
use decumulate::trainer::TrainConfig;
use decumulate::{MarketParams, ScenarioConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nets {
    pub withdrawal: NetSpec,
    pub allocation: NetSpec,
}

impl Default for Nets {
    fn default() -> Self {
        Self { withdrawal: NetSpec::withdrawal(), allocation: NetSpec::allocation() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub market: MarketParams,
    pub train: TrainConfig,
    pub nets: Nets,
    /// Asset-axis node count used when `grid` is absent.
    pub grid_nodes: usize,
    pub grid: Option<GridSpec>,
    pub wstar_search: WstarSearch,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            market: MarketParams::crsp_calibrated(),
            train: TrainConfig::default(),
            nets: Nets::default(),
            grid_nodes: 512,
            grid: None,
            wstar_search: WstarSearch::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let c: Self = serde_json::from_str(&text).map_err(decumulate::Error::from)?;
                Ok(c)
            }
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.unwrap_or_else(|| GridSpec::square(self.grid_nodes))
    }
}

pub fn load_market(path: &Path) -> Result<MarketParams> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading market parameters {}", path.display()))?;
    let m: MarketParams = serde_json::from_str(&text).map_err(decumulate::Error::from)?;
    m.validate()?;
    Ok(m)
}

//! Historical monthly return series and the stationary block bootstrap.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paths::PathSet;
use crate::rng;

/// Month identifier `year * 12 + (month - 1)`.
pub type MonthId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub dates: Vec<MonthId>,
    pub stock_gross: Vec<f64>,
    pub bond_gross: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(dates: Vec<MonthId>, stock_gross: Vec<f64>, bond_gross: Vec<f64>) -> Result<Self> {
        if dates.len() != stock_gross.len() || dates.len() != bond_gross.len() {
            return Err(Error::Data("date and return columns differ in length".into()));
        }
        for k in 0..dates.len() {
            if k > 0 && dates[k] <= dates[k - 1] {
                return Err(Error::Data(format!("row {}: dates are not strictly increasing", k + 1)));
            }
            for (name, v) in [("stock", stock_gross[k]), ("bond", bond_gross[k])] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Data(format!(
                        "row {}: {name} gross return {v} is not positive",
                        k + 1
                    )));
                }
            }
        }
        Ok(Self { dates, stock_gross, bond_gross })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

pub fn format_month(id: MonthId) -> String {
    format!("{:04}-{:02}", id / 12, id % 12 + 1)
}

pub fn parse_month(s: &str) -> Option<MonthId> {
    let t = s.trim();
    let (y, m) = if let Some((y, rest)) = t.split_once('-') {
        (y, rest.split('-').next()?)
    } else if t.len() == 6 && t.bytes().all(|b| b.is_ascii_digit()) {
        (&t[..4], &t[4..])
    } else {
        return None;
    };
    let year: u32 = y.parse().ok()?;
    let month: u32 = m.parse().ok()?;
    if !(1..=12).contains(&month) {
        return None;
    }
    Some(year * 12 + month - 1)
}

/// Load a `date,stock_gross,bond_gross` CSV (or `date,stock_return,bond_return`
/// with net returns).
pub fn load_series(path: &Path) -> Result<ReturnSeries> {
    read_series(File::open(path)?)
}

pub fn read_series<R: Read>(r: R) -> Result<ReturnSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let net = match cols.as_slice() {
        ["date", "stock_gross", "bond_gross"] => false,
        ["date", "stock_return", "bond_return"] => true,
        _ => {
            return Err(Error::Data(format!(
                "expected header date,stock_gross,bond_gross or date,stock_return,bond_return, got {}",
                cols.join(",")
            )))
        }
    };
    let offset = if net { 1.0 } else { 0.0 };
    let (mut dates, mut stock, mut bond) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if rec.len() != 3 {
            return Err(Error::Data(format!("row {row}: expected 3 fields, got {}", rec.len())));
        }
        let date = parse_month(&rec[0])
            .ok_or_else(|| Error::Data(format!("row {row}: cannot parse date {:?}", &rec[0])))?;
        let num = |field: &str| -> Result<f64> {
            field
                .parse::<f64>()
                .map(|v| v + offset)
                .map_err(|_| Error::Data(format!("row {row}: cannot parse number {field:?}")))
        };
        dates.push(date);
        stock.push(num(&rec[1])?);
        bond.push(num(&rec[2])?);
    }
    ReturnSeries::new(dates, stock, bond)
}

pub fn write_series<W: std::io::Write>(s: &ReturnSeries, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "stock_gross", "bond_gross"])?;
    for k in 0..s.len() {
        out.write_record([
            format_month(s.dates[k]),
            format!("{:?}", s.stock_gross[k]),
            format!("{:?}", s.bond_gross[k]),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub expected_block_months: f64,
    pub n_paths: usize,
    pub periods_per_rebalance: usize,
    pub n_rebalances: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.expected_block_months.is_finite() && self.expected_block_months >= 1.0) {
            return Err(invalid(format!(
                "expected_block_months must be at least 1, got {}",
                self.expected_block_months
            )));
        }
        if self.n_paths == 0 || self.periods_per_rebalance == 0 || self.n_rebalances == 0 {
            return Err(invalid("bootstrap counts must be positive"));
        }
        Ok(())
    }
}

/// Sampler of geometric block lengths with the given mean (support 1, 2, ...).
#[derive(Debug, Clone, Copy)]
pub struct BlockLength {
    dist: Option<Geometric>,
}

impl BlockLength {
    pub fn new(expected_block_months: f64) -> Result<Self> {
        if !(expected_block_months.is_finite() && expected_block_months >= 1.0) {
            return Err(invalid("expected block length must be at least 1"));
        }
        let v = 1.0 / expected_block_months;
        let dist = if v >= 1.0 {
            None
        } else {
            Some(Geometric::new(v).map_err(|e| invalid(format!("block length: {e}")))?)
        };
        Ok(Self { dist })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.dist {
            None => 1,
            Some(g) => 1 + g.sample(rng) as usize,
        }
    }
}

/// Indices into a series of length `len` for `n` consecutive resampled months.
pub fn resample_months<R: Rng + ?Sized>(
    len: usize,
    n: usize,
    blocks: &BlockLength,
    rng: &mut R,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let start = rng.random_range(0..len);
        let block = blocks.sample(rng);
        for k in 0..block.min(n - out.len()) {
            out.push((start + k) % len);
        }
    }
    out
}

/// Resampled month indices for path `j` under `c`.
pub fn path_month_indices(len: usize, c: &BootstrapConfig, j: usize) -> Result<Vec<usize>> {
    let blocks = BlockLength::new(c.expected_block_months)?;
    let mut r = rng::stream(c.seed, rng::DOMAIN_BOOTSTRAP, j as u64);
    Ok(resample_months(len, c.periods_per_rebalance * c.n_rebalances, &blocks, &mut r))
}

pub fn stationary_block_bootstrap(s: &ReturnSeries, c: &BootstrapConfig) -> Result<PathSet> {
    c.validate()?;
    let len = s.len();
    if len < 12 || len < c.periods_per_rebalance {
        return Err(Error::Data(format!(
            "series of {len} months is too short to bootstrap (need at least 12)"
        )));
    }
    let blocks = BlockLength::new(c.expected_block_months)?;
    let months = c.periods_per_rebalance * c.n_rebalances;
    let stride = 2 * c.n_rebalances;
    let mut data = vec![0.0; c.n_paths * stride];
    data.par_chunks_mut(stride).enumerate().for_each(|(j, row)| {
        let mut r = rng::stream(c.seed, rng::DOMAIN_BOOTSTRAP, j as u64);
        let idx = resample_months(len, months, &blocks, &mut r);
        for (period, group) in row.chunks_exact_mut(2).zip(idx.chunks_exact(c.periods_per_rebalance)) {
            let (mut gs, mut gb) = (1.0, 1.0);
            for &k in group {
                gs *= s.stock_gross[k];
                gb *= s.bond_gross[k];
            }
            period[0] = gs;
            period[1] = gb;
        }
    });
    PathSet::new(c.n_paths, c.n_rebalances, data, "bootstrap")
}

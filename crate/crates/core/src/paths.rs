//! Sampled joint return paths and their on-disk formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const PATHSET_MAGIC: &[u8; 4] = b"DPTH";
pub const PATHSET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Synthetic,
    Bootstrap,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Synthetic => "synthetic",
            SourceTag::Bootstrap => "bootstrap",
        }
    }
}

impl std::str::FromStr for SourceTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(SourceTag::Synthetic),
            "bootstrap" => Ok(SourceTag::Bootstrap),
            other => Err(invalid(format!("unknown source tag {other:?}"))),
        }
    }
}

/// Per-period gross returns `(stock, bond)` for a set of paths.
///
/// Storage is path-major, then period, with the asset index innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    n_paths: usize,
    n_periods: usize,
    returns: Vec<f64>,
    pub source_tag: SourceTag,
}

impl PathSet {
    pub fn new(n_paths: usize, n_periods: usize, returns: Vec<f64>, tag: &str) -> Result<Self> {
        if n_paths == 0 || n_periods == 0 {
            return Err(invalid("a path set needs at least one path and one period"));
        }
        if returns.len() != n_paths * n_periods * 2 {
            return Err(Error::Dimension(format!(
                "expected {} values for {n_paths} paths x {n_periods} periods, got {}",
                n_paths * n_periods * 2,
                returns.len()
            )));
        }
        if let Some(k) = returns.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Data(format!(
                "gross return at path {}, period {} is not a positive finite number",
                k / (2 * n_periods),
                (k / 2) % n_periods
            )));
        }
        Ok(Self { n_paths, n_periods, returns, source_tag: tag.parse()? })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    /// `(stock, bond)` gross returns of path `j` over period `i`.
    #[inline]
    pub fn get(&self, j: usize, i: usize) -> (f64, f64) {
        let k = 2 * (j * self.n_periods + i);
        (self.returns[k], self.returns[k + 1])
    }

    /// The interleaved returns of a single path.
    pub fn path(&self, j: usize) -> &[f64] {
        let stride = 2 * self.n_periods;
        &self.returns[j * stride..(j + 1) * stride]
    }

    /// Append the paths of `other`, which must have the same period count.
    pub fn extend(&mut self, other: &PathSet) -> Result<()> {
        if other.n_periods != self.n_periods {
            return Err(Error::Dimension("cannot concatenate path sets of different horizons".into()));
        }
        self.returns.extend_from_slice(&other.returns);
        self.n_paths += other.n_paths;
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(PATHSET_MAGIC);
        header.extend_from_slice(&PATHSET_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.n_paths as u64).to_le_bytes());
        header.extend_from_slice(&(self.n_periods as u32).to_le_bytes());
        header.extend_from_slice(&2u32.to_le_bytes());
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.returns.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a binary path file; the source tag is supplied by the caller since
    /// the format does not carry it.
    pub fn read_binary<R: Read>(mut r: R, tag: SourceTag) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|_| Error::Corrupt("path file shorter than its header".into()))?;
        if &header[0..4] != PATHSET_MAGIC {
            return Err(Error::Corrupt("bad magic, not a path file".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != PATHSET_VERSION {
            return Err(Error::Version { found: version, expected: PATHSET_VERSION });
        }
        let n_paths = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let n_periods = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        let n_assets = u32::from_le_bytes(header[20..24].try_into().unwrap());
        if n_assets != 2 {
            return Err(Error::Corrupt(format!("expected 2 assets, header says {n_assets}")));
        }
        let n_values = n_paths
            .checked_mul(n_periods)
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| Error::Corrupt("header dimensions overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * n_values {
            return Err(Error::Corrupt(format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                8 * n_values
            )));
        }
        let returns = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        PathSet::new(n_paths, n_periods, returns, tag.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_binary(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path, tag: SourceTag) -> Result<Self> {
        Self::read_binary(BufReader::new(File::open(path)?), tag)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["path", "period", "stock_gross", "bond_gross"])?;
        for j in 0..self.n_paths {
            for i in 0..self.n_periods {
                let (s, b) = self.get(j, i);
                out.write_record([j.to_string(), i.to_string(), format!("{s:?}"), format!("{b:?}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

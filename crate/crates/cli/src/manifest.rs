//! Run manifests written next to every output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use decumulate::paths::SourceTag;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Shape of a path file, recorded so later commands can check scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathsInfo {
    pub n_paths: usize,
    pub n_periods: usize,
    pub dt: f64,
    pub source_tag: SourceTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Value,
    pub seeds: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<PathsInfo>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn digests(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
        .collect()
}

/// Manifest location for an output file or directory.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

pub struct Recorder {
    command: String,
    start: Instant,
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        Self { command: command.to_string(), start: Instant::now() }
    }

    pub fn finish(
        self,
        target: &Path,
        config: Value,
        seeds: Value,
        inputs: &[&Path],
        outputs: &[&Path],
        paths: Option<PathsInfo>,
    ) -> Result<PathBuf> {
        let m = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds,
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
            paths,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        };
        let file = manifest_path(target);
        serde_json::to_writer_pretty(BufWriter::new(File::create(&file)?), &m)?;
        Ok(file)
    }
}

/// Manifest of a path file, if one was written alongside it.
pub fn read_paths_info(path: &Path) -> Result<Option<PathsInfo>> {
    let mp = manifest_path(path);
    if !mp.exists() {
        return Ok(None);
    }
    let m: RunManifest = serde_json::from_reader(BufReader::new(File::open(&mp)?))
        .map_err(|e| decumulate::Error::Corrupt(format!("manifest {}: {e}", mp.display())))?;
    Ok(m.paths)
}

//! Versioned JSON checkpoints for a policy pair.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Net, NetSpec, PolicyPair, StandardizationStats};
use crate::error::{Error, Result};
use crate::scenario::{Kappa, ScenarioConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetRecord {
    spec: NetSpec,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl NetRecord {
    fn from_net(net: &Net) -> Self {
        let (weights, biases) = (0..net.spec().n_layers())
            .map(|l| {
                let (w, b) = net.layer(l);
                (w.to_vec(), b.to_vec())
            })
            .unzip();
        Self { spec: *net.spec(), weights, biases }
    }

    fn into_net(self) -> Result<Net> {
        Net::from_layers(self.spec, &self.weights, &self.biases)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Payload {
    scenario: ScenarioConfig,
    q_net: NetRecord,
    p_net: NetRecord,
    stats: StandardizationStats,
    w_star: f64,
    kappa: Kappa,
    rng_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    payload: Value,
    sha256: String,
}

/// Fields stored alongside the policy that are not part of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub rng_seed: u64,
    pub kappa: Kappa,
}

fn digest(v: &Value) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(v)?)))
}

pub fn write_checkpoint<W: Write>(pair: &PolicyPair, rng_seed: u64, mut w: W) -> Result<()> {
    let payload = serde_json::to_value(Payload {
        scenario: pair.scenario,
        q_net: NetRecord::from_net(&pair.q_net),
        p_net: NetRecord::from_net(&pair.p_net),
        stats: pair.stats.clone(),
        w_star: pair.w_star,
        kappa: pair.scenario.kappa,
        rng_seed,
    })?;
    let env = Envelope { format_version: CHECKPOINT_VERSION, sha256: digest(&payload)?, payload };
    serde_json::to_writer_pretty(&mut w, &env)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(PolicyPair, CheckpointMeta)> {
    let env: Envelope = serde_json::from_reader(r)
        .map_err(|e| Error::Corrupt(format!("checkpoint is not a complete JSON document: {e}")))?;
    if env.format_version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: env.format_version, expected: CHECKPOINT_VERSION });
    }
    if digest(&env.payload)? != env.sha256 {
        return Err(Error::Corrupt("checkpoint digest does not match its payload".into()));
    }
    let p: Payload = serde_json::from_value(env.payload)
        .map_err(|e| Error::Corrupt(format!("checkpoint payload malformed: {e}")))?;
    if p.kappa != p.scenario.kappa {
        return Err(Error::Corrupt("checkpoint kappa disagrees with its scenario".into()));
    }
    let pair = PolicyPair::new(p.q_net.into_net()?, p.p_net.into_net()?, p.stats, p.w_star, p.scenario)?;
    Ok((pair, CheckpointMeta { rng_seed: p.rng_seed, kappa: p.kappa }))
}

pub fn save_checkpoint(pair: &PolicyPair, rng_seed: u64, path: &Path) -> Result<()> {
    write_checkpoint(pair, rng_seed, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyPair, CheckpointMeta)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

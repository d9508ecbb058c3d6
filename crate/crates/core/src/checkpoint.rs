//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 format version, u64 header length, a JSON
//! header naming every array with its shape, the arrays themselves as raw
//! little-endian f64 in header order, and a trailing SHA-256 of everything
//! before it. Floats never pass through text, so save/load is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::nn::Layout;
use crate::policy::{Actor, Critic, PolicyConfig};
use crate::rl::{Adam, TrainSetup, Trainer};

pub const MAGIC: &[u8; 8] = b"SWNVCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ArrayEntry {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config_digest: String,
    pub seed: u64,
    pub global_step: u64,
    pub iteration: u64,
    pub episodes: u64,
    pub policy: PolicyConfig,
    pub actor_optimizer: OptimizerMeta,
    pub critic_optimizer: OptimizerMeta,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_digest: String,
    pub seed: u64,
    pub global_step: u64,
    pub iteration: u64,
    pub episodes: u64,
    pub actor: Actor,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

fn meta(a: &Adam) -> OptimizerMeta {
    OptimizerMeta {
        learning_rate: a.learning_rate,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        t: a.t,
    }
}

fn entries(prefix: &str, layout: &Layout) -> Vec<ArrayEntry> {
    layout
        .blocks
        .iter()
        .map(|b| ArrayEntry {
            name: format!("{prefix}/{}", b.name),
            rows: b.rows,
            cols: b.cols,
        })
        .collect()
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, config_digest: &str) -> Self {
        Checkpoint {
            config_digest: config_digest.to_string(),
            seed: t.seed,
            global_step: t.global_step,
            iteration: t.iteration,
            episodes: t.episodes,
            actor: t.actor.clone(),
            critic: t.critic.clone(),
            actor_opt: t.actor_opt.clone(),
            critic_opt: t.critic_opt.clone(),
        }
    }

    /// Rebuilds a trainer that continues exactly where this one stopped.
    /// `config_digest` must match unless `allow_config_change` is set, which
    /// is how a run is branched into a different stage schedule.
    pub fn into_trainer(self, setup: TrainSetup, config_digest: &str, allow_config_change: bool) -> Result<Trainer> {
        if !allow_config_change && config_digest != self.config_digest {
            return Err(Error::Checkpoint(format!(
                "config digest {config_digest} does not match checkpoint digest {}",
                self.config_digest
            )));
        }
        self.check_policy(&setup.policy)?;
        let mut t = Trainer::new(setup, self.seed)?;
        t.actor = self.actor;
        t.critic = self.critic;
        t.actor_opt = self.actor_opt;
        t.critic_opt = self.critic_opt;
        t.global_step = self.global_step;
        t.iteration = self.iteration;
        t.episodes = self.episodes;
        Ok(t)
    }

    /// Errors unless a network built from `policy` has the stored shapes.
    pub fn check_policy(&self, policy: &PolicyConfig) -> Result<()> {
        let mut rng = crate::seeded_rng(0);
        let a = Actor::new(*policy, &mut rng);
        let c = Critic::new(*policy, &mut rng);
        a.layout.check_compatible(&self.actor.layout)?;
        c.layout.check_compatible(&self.critic.layout)
    }

    fn header(&self) -> CheckpointHeader {
        let mut arrays = entries("actor", &self.actor.layout);
        arrays.extend(entries("critic", &self.critic.layout));
        for (name, n) in [
            ("adam/actor/m", self.actor_opt.m.len()),
            ("adam/actor/v", self.actor_opt.v.len()),
            ("adam/critic/m", self.critic_opt.m.len()),
            ("adam/critic/v", self.critic_opt.v.len()),
        ] {
            arrays.push(ArrayEntry {
                name: name.into(),
                rows: n,
                cols: 1,
            });
        }
        CheckpointHeader {
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            global_step: self.global_step,
            iteration: self.iteration,
            episodes: self.episodes,
            policy: self.actor.config,
            actor_optimizer: meta(&self.actor_opt),
            critic_optimizer: meta(&self.critic_opt),
            arrays,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for data in [
            &self.actor.params,
            &self.critic.params,
            &self.actor_opt.m,
            &self.actor_opt.v,
            &self.critic_opt.m,
            &self.critic_opt.v,
        ] {
            for x in data.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let (body, hash) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != hash {
            return Err(bad("checksum mismatch; file is corrupt or truncated"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize.checked_add(hlen).filter(|e| *e <= body.len()).ok_or_else(|| bad("header overruns file"))?;
        let header: CheckpointHeader = serde_json::from_slice(&body[20..hend])?;
        let total: usize = header.arrays.iter().map(ArrayEntry::len).sum();
        let raw = &body[hend..];
        if raw.len() != total * 8 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} values, header declares {total}",
                raw.len() / 8
            )));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        // Build networks from the stored config and verify every array shape.
        let mut rng = crate::seeded_rng(0);
        let actor_shape = Actor::new(header.policy, &mut rng);
        let critic_shape = Critic::new(header.policy, &mut rng);
        let na = actor_shape.param_count();
        let nc = critic_shape.param_count();
        let mut expected = entries("actor", &actor_shape.layout);
        expected.extend(entries("critic", &critic_shape.layout));
        for (name, n) in [("adam/actor/m", na), ("adam/actor/v", na), ("adam/critic/m", nc), ("adam/critic/v", nc)] {
            expected.push(ArrayEntry {
                name: name.into(),
                rows: n,
                cols: 1,
            });
        }
        if expected != header.arrays {
            return Err(Error::ShapeMismatch(
                "checkpoint arrays do not match the networks its policy config describes".into(),
            ));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let v = values[at..at + n].to_vec();
            at += n;
            v
        };
        let actor = Actor::from_params(header.policy, take(na))?;
        let critic = Critic::from_params(header.policy, take(nc))?;
        let opt = |m: &OptimizerMeta, mv: Vec<f64>, vv: Vec<f64>| Adam {
            learning_rate: m.learning_rate,
            beta1: m.beta1,
            beta2: m.beta2,
            eps: m.eps,
            m: mv,
            v: vv,
            t: m.t,
        };
        let actor_opt = opt(&header.actor_optimizer, take(na), take(na));
        let critic_opt = opt(&header.critic_optimizer, take(nc), take(nc));
        Ok(Checkpoint {
            config_digest: header.config_digest,
            seed: header.seed,
            global_step: header.global_step,
            iteration: header.iteration,
            episodes: header.episodes,
            actor,
            critic,
            actor_opt,
            critic_opt,
        })
    }

    /// Writes to a temporary sibling then renames, so a crash mid-write never
    /// leaves a truncated checkpoint under the final name.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

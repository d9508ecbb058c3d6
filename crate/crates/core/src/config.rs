//! Run configuration: one TOML document with a section per subsystem,
//! unknown keys rejected, and a content digest stamped on every output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{CollisionModel, QuadrotorParams};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::policy::PolicyConfig;
use crate::rl::{PPOConfig, RewardWeights, TrainSetup};
use crate::safety::SafetyParams;
use crate::scenario::ScenarioConfig;
use crate::sensing::SensingConfig;
use crate::sim::{SimConfig, WorldConfig};

/// Shipped defaults; every constant the model leaves open is pinned here.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../../configs/default.toml");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub dynamics: QuadrotorParams,
    pub collision: CollisionModel,
    pub safety: SafetyParams,
    pub sensing: SensingConfig,
    pub policy: PolicyConfig,
    pub reward: RewardWeights,
    pub ppo: PPOConfig,
    pub scenario: ScenarioConfig,
    pub sim: SimConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Parses `s`, applies `key.path=value` overrides, then validates.
    pub fn from_toml_with_overrides(s: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let c: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    /// The shipped defaults file.
    pub fn shipped_default() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG_TOML).expect("shipped defaults are valid")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.world().validate()?;
        self.policy.validate()?;
        self.ppo.validate()?;
        self.scenario.validate()?;
        self.eval.validate()
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            sim: self.sim,
            sensing: self.sensing,
            quad: self.dynamics,
            safety: self.safety,
            collision: self.collision,
            reward: self.reward,
        }
    }

    pub fn train_setup(&self) -> TrainSetup {
        TrainSetup {
            ppo: self.ppo,
            policy: self.policy,
            world: self.world(),
            scenario: self.scenario,
            success_threshold: self.eval.success_threshold,
        }
    }

    /// SHA-256 over the canonical JSON form of the fully resolved config.
    /// The output directory is excluded so moving a run does not change it.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir.clear();
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// `a.b.c=value`, where value is parsed as a TOML literal and falls back
/// to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_match_code_defaults() {
        let shipped = RunConfig::shipped_default();
        let code = RunConfig {
            output_dir: shipped.output_dir.clone(),
            seed: shipped.seed,
            ..RunConfig::default()
        };
        assert_eq!(shipped, code);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("[ppo]\nwarp_drive = 3\n").unwrap_err();
        assert!(err.to_string().contains("warp_drive"), "{err}");
        let err = RunConfig::from_toml_str("bogus_top = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_top"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml_with_overrides(
            DEFAULT_CONFIG_TOML,
            &["ppo.total_steps=1000".into(), "seed=7".into(), "eval.scenario=\"SwapGoal\"".into()],
        )
        .unwrap();
        assert_eq!(c.ppo.total_steps, 1000);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.output_dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        b.reward.yaw = 0.2;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let a = RunConfig::default();
        let b = RunConfig::from_toml_str(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[reward]\nclip_radius = 0.1\n").is_err());
        assert!(RunConfig::from_toml_str("[sensing]\ntof_period = 0.001\n").is_err());
    }
}

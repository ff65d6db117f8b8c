//! Run configuration: one nested document driving every pipeline stage.
//! Unknown keys are rejected; the hash of the serialized config is embedded in
//! every artifact so runs can be tied back to their exact settings.

use serde::{Deserialize, Serialize};

use crate::critic::CriticConfig;
use crate::dataio::hex_digest;
use crate::objective::ObjectiveConfig;
use crate::rl::RLConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub successes_per_task: usize,
    pub failures_per_task: usize,
    pub corrupt_prob: f64,
    pub heldout_every: usize,
    /// Fraction of training-task episodes held out by episode for validation.
    pub val_fraction: f64,
    /// Expert calibration gate checked before generation.
    pub expert_gate: f64,
    pub expert_gate_resets: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            successes_per_task: 40,
            failures_per_task: 27,
            corrupt_prob: 0.7,
            heldout_every: 5,
            val_fraction: 0.1,
            expert_gate: 0.95,
            expert_gate_resets: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub groups_per_task: usize,
    pub k_failures: usize,
    /// (brightness, noise_high) rows for the robustness report.
    pub perturbations: Vec<(f64, f64)>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            groups_per_task: 50,
            k_failures: 5,
            perturbations: vec![(1.0, 0.0), (0.5, 0.2)],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub data_dir: Option<String>,
    pub checkpoint_dir: Option<String>,
    pub report_dir: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub critic: CriticConfig,
    pub objective: ObjectiveConfig,
    pub trainer: TrainConfig,
    pub rl: RLConfig,
    pub eval: EvalConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.critic.validate()?;
        self.objective.validate()?;
        self.trainer.validate()?;
        self.rl.validate()?;
        if !(0.0..=1.0).contains(&self.data.corrupt_prob) {
            return Err(Error::Config("corrupt_prob must lie in [0, 1]".into()));
        }
        if self.data.heldout_every < 2 {
            return Err(Error::Config("heldout_every must be >= 2".into()));
        }
        Ok(())
    }

    /// Canonical serialization hash, embedded in artifacts.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex_digest(text.as_bytes())
    }

    /// Hash of the parts that determine dataset content.
    pub fn data_hash(&self) -> String {
        let text = format!(
            "{}|{}",
            self.seed,
            toml::to_string(&self.data).expect("data section serializes")
        );
        hex_digest(text.as_bytes())
    }

    /// Trainer settings with the global seed and objective section applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            objective: self.objective,
            ..self.trainer.clone()
        }
    }

    /// RL settings with the global seed applied.
    pub fn rl_config(&self) -> RLConfig {
        RLConfig {
            seed: self.seed,
            ..self.rl.clone()
        }
    }
}

/// Provenance block embedded in emitted artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStamp {
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub version: String,
}

impl RunStamp {
    pub fn of(cfg: &RunConfig) -> RunStamp {
        RunStamp {
            config_hash: cfg.hash(),
            data_hash: cfg.data_hash(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_stably() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), cfg.hash());
        let mut other = RunConfig::default();
        other.seed = 1;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("nonsense_key = 3").unwrap_err();
        assert!(err.to_string().contains("parse"));
        assert!(RunConfig::from_toml("[critic]\nembed_dim = 32\nbogus = 1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn objective_section_flows_into_trainer() {
        let cfg = RunConfig::from_toml("[objective]\nalpha = 10.0\n").unwrap();
        assert_eq!(cfg.train_config().objective.alpha, 10.0);
        assert_eq!(cfg.train_config().seed, cfg.seed);
    }

    #[test]
    fn invalid_sections_rejected() {
        assert!(RunConfig::from_toml("[rl]\ngamma = 1.5").is_err());
        assert!(RunConfig::from_toml("[objective]\nalpha = -1.0").is_err());
        assert!(RunConfig::from_toml("[data]\ncorrupt_prob = 1.2").is_err());
    }
}

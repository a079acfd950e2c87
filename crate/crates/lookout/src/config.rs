//! The run configuration: one JSON document with explicit defaults.
//!
//! ```json
//! {
//!   "profile": "micro",
//!   "seed": 0,
//!   "out": "runs/demo",
//!   "data": { "manifest": "corpus/manifest.jsonl", "synth": { "count": 2600 }, "test_fraction": 0.1 },
//!   "train": { "glimpses": 6, "batch_size": 16, "epochs": 10, "learning_rate": 0.0001 },
//!   "eval": { "policies": ["learned", "random"], "glimpses": 6, "seeds": 5, "checkpoint": null },
//!   "explore": { "image": null, "glimpses": 5 }
//! }
//! ```
//!
//! Unknown keys are rejected at every level. `seed` and `profile` at the top
//! level feed training, evaluation and the synthetic generator alike.

use std::fs;
use std::path::{Path, PathBuf};

use lookout_core::PolicyKind;
use serde::{Deserialize, Serialize};

use crate::dataset::SynthSpec;
use crate::error::{Error, Result};
use crate::nets::Profile;
use crate::trainer::TrainConfig;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub explore: ExploreSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Micro,
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            explore: ExploreSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// JSON Lines manifest; required by `train` and `eval`.
    pub manifest: Option<PathBuf>,
    /// Generator settings for `synth` (its seed is the run seed).
    pub synth: SynthSpec,
    /// Test share of the corpus written by `synth`.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            synth: SynthSpec::default(),
            test_fraction: 0.1,
        }
    }
}

/// Training hyper-parameters; see [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub glimpses: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub classification: crate::nets::ClassificationMode,
    pub classes: usize,
    pub attention_target: crate::episode::AttentionTargetKind,
    pub augment: bool,
    pub checkpoint_every: u64,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<PathBuf>,
    /// Initialize every block this checkpoint also has from it, then train
    /// from iteration 0; blocks it lacks (e.g. a classifier) start fresh.
    pub init: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            glimpses: t.glimpses,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            final_learning_rate: t.final_learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            classification: t.classification,
            classes: t.classes,
            attention_target: t.attention_target,
            augment: t.augment,
            checkpoint_every: t.checkpoint_every,
            resume: None,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub policies: Vec<String>,
    pub glimpses: usize,
    /// Number of seeds per image; seeds are `0..seeds` offset by the run seed.
    pub seeds: usize,
    pub batch_size: usize,
    /// Required when the learned policy is evaluated.
    pub checkpoint: Option<PathBuf>,
    /// Full-image classifier whose accuracy is reported alongside.
    pub upper_bound: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            policies: PolicyKind::ALL.iter().map(|p| p.name().to_string()).collect(),
            glimpses: 8,
            seeds: 5,
            batch_size: 16,
            checkpoint: None,
            upper_bound: None,
        }
    }
}

impl EvalSection {
    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>> {
        self.policies
            .iter()
            .map(|p| p.parse::<PolicyKind>().map_err(|e| Error::Config(e.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreSection {
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub glimpses: usize,
}

impl Default for ExploreSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            image: None,
            glimpses: 5,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            glimpses: t.glimpses,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            final_learning_rate: t.final_learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            seed: self.seed,
            profile: self.profile,
            classification: t.classification,
            classes: t.classes,
            attention_target: t.attention_target,
            augment: t.augment,
            checkpoint_every: t.checkpoint_every,
        }
    }

    /// Evaluation seeds: `seed + k` for `k < eval.seeds`.
    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval.seeds as u64).map(|k| self.seed.wrapping_add(k)).collect()
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..self.data.synth.clone()
        }
    }

    /// Schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.synth_spec().validate()?;
        if !(0.0..=1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config(format!(
                "data.test_fraction {} outside [0,1]",
                self.data.test_fraction
            )));
        }
        if self.train.resume.is_some() && self.train.init.is_some() {
            return Err(Error::Config(
                "train.resume and train.init are mutually exclusive".into(),
            ));
        }
        self.eval.policy_kinds()?;
        if self.eval.glimpses == 0 || self.eval.glimpses > lookout_core::PATCH_COUNT {
            return Err(Error::Config(format!(
                "eval.glimpses must be in 1..=128, got {}",
                self.eval.glimpses
            )));
        }
        if self.eval.seeds == 0 || self.eval.batch_size == 0 {
            return Err(Error::Config("eval.seeds and eval.batch_size must be positive".into()));
        }
        if self.explore.glimpses == 0 || self.explore.glimpses > lookout_core::PATCH_COUNT {
            return Err(Error::Config(format!(
                "explore.glimpses must be in 1..=128, got {}",
                self.explore.glimpses
            )));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("out must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_documents_take_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 9, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, TrainSection::default().batch_size);
        assert_eq!(c.train_config().seed, 9);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lr": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"data": {"synth": {"colour": 1}}}"#).is_err());
    }

    #[test]
    fn resume_and_init_exclude_each_other() {
        let c = RunConfig::from_json(r#"{"train": {"resume": "a.ckpt", "init": "b.ckpt"}}"#).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn bad_policy_rejected() {
        let c = RunConfig::from_json(r#"{"eval": {"policies": ["greedy"]}}"#).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}

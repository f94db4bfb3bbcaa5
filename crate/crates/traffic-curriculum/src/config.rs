//! Run configuration: one TOML file covering every module's parameters.
//! All defaults are embedded, so an empty file runs the reference
//! configuration; unknown keys are rejected.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::RuleParams;
use crate::curriculum::{LabParams, PhaseConfig};
use crate::lane_graph::{generate_map_set, LaneGraph};
use crate::ppo::{PpoConfig, RolloutParams};
use crate::rewards::RewardParams;
use crate::teacher::TeacherConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; all randomness flows from it through named sub-streams.
    pub seed: u64,
    /// Seed of the procedural train/hold-out map split.
    pub map_seed: u64,
    /// Output directory for logs, checkpoints, and reports.
    pub out_dir: String,
    /// Student MLP hidden width.
    pub student_hidden: usize,
    /// Evaluation episodes per report cell.
    pub eval_episodes: usize,
    pub teacher: TeacherConfig,
    pub teacher_ppo: PpoConfig,
    pub student_ppo: PpoConfig,
    pub env: RolloutParams,
    pub rewards: RewardParams,
    pub curriculum: PhaseConfig,
    pub baseline: RuleParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            map_seed: 0,
            out_dir: "out".into(),
            student_hidden: 64,
            eval_episodes: 100,
            teacher: TeacherConfig::default(),
            teacher_ppo: PpoConfig::default(),
            student_ppo: PpoConfig::default(),
            env: RolloutParams::default(),
            rewards: RewardParams::default(),
            curriculum: PhaseConfig::default(),
            baseline: RuleParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.teacher_ppo.validate().map_err(ConfigError::Invalid)?;
        self.student_ppo.validate().map_err(ConfigError::Invalid)?;
        self.curriculum.validate().map_err(ConfigError::Invalid)?;
        self.baseline.validate().map_err(ConfigError::Invalid)?;
        self.rewards
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.eval_episodes == 0 {
            return Err(ConfigError::Invalid("eval_episodes must be positive".into()));
        }
        Ok(())
    }

    /// Content hash tying checkpoints to the configuration that wrote them.
    /// The output directory is excluded: where results land does not change
    /// what was trained.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = String::new();
        let bytes = serde_json::to_vec(&canon).expect("config serialization");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Procedural training and hold-out map pools for this configuration.
    pub fn map_pools(&self) -> (Vec<Arc<LaneGraph>>, Vec<Arc<LaneGraph>>) {
        let (train, holdout) = generate_map_set(self.map_seed);
        let wrap = |maps: Vec<LaneGraph>| -> Vec<Arc<LaneGraph>> {
            maps.into_iter().map(|g| Arc::new(g.dilate(2))).collect()
        };
        (wrap(train), wrap(holdout))
    }

    pub fn lab_params(&self) -> LabParams {
        LabParams {
            seed: self.seed,
            teacher_cfg: self.teacher.clone(),
            student_hidden: self.student_hidden,
            teacher_ppo: self.teacher_ppo.clone(),
            student_ppo: self.student_ppo.clone(),
            env: self.env,
            rewards: self.rewards.clone(),
            phase: self.curriculum.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_reference_configuration() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        // Reference values spot-checked against their modules' defaults.
        assert_eq!(cfg.rewards.epsilon, 0.1);
        assert_eq!(cfg.rewards.sigma, 5.0);
        assert_eq!(cfg.curriculum.n_teacher, 10);
        assert_eq!(cfg.curriculum.n_student, 10);
        assert_eq!(cfg.curriculum.n_recalibrate, 100);
        assert_eq!(cfg.curriculum.t_success, 0.75);
        assert_eq!(cfg.curriculum.t_fail, 0.25);
        assert_eq!(cfg.curriculum.p_old, 0.3);
        assert_eq!(cfg.eval_episodes, 100);
    }

    #[test]
    fn roundtrip_is_semantically_identical() {
        let mut cfg = RunConfig::default();
        cfg.seed = 17;
        cfg.curriculum.n_teacher = 3;
        cfg.rewards.sigma = 4.5;
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("unknown_knob = 3").is_err());
        assert!(RunConfig::from_toml("[rewards]\nmystery = 1.0").is_err());
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[curriculum]\nn_teacher = 2\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.curriculum.n_teacher, 2);
        assert_eq!(cfg.curriculum.n_student, 10);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(RunConfig::from_toml("[curriculum]\nt_fail = 0.9\n").is_err());
        assert!(RunConfig::from_toml("[student_ppo]\ngamma = 0.0\n").is_err());
        assert!(RunConfig::from_toml("eval_episodes = 0").is_err());
    }

    #[test]
    fn map_pools_match_the_split() {
        let (train, holdout) = RunConfig::default().map_pools();
        assert_eq!(train.len(), 7);
        assert_eq!(holdout.len(), 3);
        let train_ids: Vec<String> = train.iter().map(|g| g.map_id()).collect();
        for h in &holdout {
            assert!(!train_ids.contains(&h.map_id()), "hold-out map seen in training");
        }
    }
}

//! Checkpoint bundles: everything needed to resume a curriculum run at a
//! phase boundary — both parameter stores with their optimizer moments, the
//! curriculum position, the metrics log so far, the root seed, and the hash
//! of the configuration that produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{CurriculumLab, CurriculumState, LogRecord};
use crate::nn::adam::Adam;
use crate::nn::params::ParameterStore;
use crate::rng::RngState;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint was written by a different configuration (bundle hash {bundle}, current {current})")]
    ConfigMismatch { bundle: String, current: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBundle {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub teacher_params: ParameterStore,
    pub teacher_opt: Adam,
    pub student_params: ParameterStore,
    pub student_opt: Adam,
    pub state: CurriculumState,
    pub log: Vec<LogRecord>,
    /// Stream positions are derived from (seed, round, phase, iteration);
    /// this snapshot records any extra caller-owned stream for completeness.
    pub rng_states: Vec<(String, RngState)>,
}

impl CheckpointBundle {
    pub fn capture(lab: &CurriculumLab, config_hash: &str) -> Self {
        CheckpointBundle {
            version: CHECKPOINT_FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            seed: lab.seed,
            teacher_params: lab.teacher_store.clone(),
            teacher_opt: lab.teacher_opt.clone(),
            student_params: lab.student_store.clone(),
            student_opt: lab.student_opt.clone(),
            state: lab.state.clone(),
            log: lab.log.clone(),
            rng_states: Vec::new(),
        }
    }

    /// Overwrites the lab's mutable pieces; the lab must have been built
    /// from the same configuration (enforced via the hash).
    pub fn restore(
        &self,
        lab: &mut CurriculumLab,
        config_hash: &str,
    ) -> Result<(), CheckpointError> {
        if self.version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(self.version));
        }
        if self.config_hash != config_hash {
            return Err(CheckpointError::ConfigMismatch {
                bundle: self.config_hash.clone(),
                current: config_hash.to_string(),
            });
        }
        lab.seed = self.seed;
        lab.teacher_store = self.teacher_params.clone();
        lab.teacher_opt = self.teacher_opt.clone();
        lab.student_store = self.student_params.clone();
        lab.student_opt = self.student_opt.clone();
        lab.state = self.state.clone();
        lab.log = self.log.clone();
        lab.teacher.clear_cache();
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let bundle: CheckpointBundle = serde_json::from_str(text)?;
        if bundle.version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(bundle.version));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{LabParams, PhaseConfig};
    use crate::lane_graph::build_t_intersection;
    use crate::ppo::{PpoConfig, RolloutParams};
    use crate::teacher::TeacherConfig;
    use std::sync::Arc;

    fn tiny_lab(seed: u64) -> CurriculumLab {
        let params = LabParams {
            seed,
            teacher_cfg: TeacherConfig {
                embed: 8,
                msg_hidden: 8,
                head_hidden: 8,
                map_layers: 1,
                ..TeacherConfig::default()
            },
            student_hidden: 8,
            teacher_ppo: PpoConfig {
                steps_per_iter: 10,
                minibatch: 4,
                epochs: 1,
                ..PpoConfig::default()
            },
            student_ppo: PpoConfig {
                steps_per_iter: 10,
                minibatch: 4,
                epochs: 1,
                ..PpoConfig::default()
            },
            env: RolloutParams {
                npc_count: 2,
                dt: 0.1,
                max_steps: 25,
            },
            rewards: Default::default(),
            phase: PhaseConfig {
                n_teacher: 1,
                n_student: 1,
                n_recalibrate: 9,
                total_rounds: 2,
                ..PhaseConfig::default()
            },
        };
        let maps = vec![Arc::new(build_t_intersection(25.0, 3.5).unwrap().dilate(2))];
        CurriculumLab::new(&params, maps)
    }

    #[test]
    fn bundle_roundtrips_bit_exactly() {
        let mut lab = tiny_lab(31);
        lab.step_phase().unwrap();
        let bundle = CheckpointBundle::capture(&lab, "abc123");
        let back = CheckpointBundle::from_json(&bundle.to_json()).unwrap();
        assert_eq!(bundle, back);
    }

    #[test]
    fn restore_resumes_identically_to_uninterrupted_run() {
        let mut full = tiny_lab(32);
        full.run().unwrap();

        let mut half = tiny_lab(32);
        half.step_phase().unwrap();
        half.step_phase().unwrap();
        half.step_phase().unwrap();
        let bundle = CheckpointBundle::capture(&half, "h");
        let bundle = CheckpointBundle::from_json(&bundle.to_json()).unwrap();

        let mut resumed = tiny_lab(32);
        bundle.restore(&mut resumed, "h").unwrap();
        resumed.run().unwrap();

        assert_eq!(
            serde_json::to_string(&resumed.student_store).unwrap(),
            serde_json::to_string(&full.student_store).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&resumed.teacher_store).unwrap(),
            serde_json::to_string(&full.teacher_store).unwrap()
        );
        assert_eq!(resumed.log, full.log);
    }

    #[test]
    fn config_hash_mismatch_is_rejected() {
        let lab = tiny_lab(33);
        let bundle = CheckpointBundle::capture(&lab, "aaaa");
        let mut other = tiny_lab(33);
        assert!(matches!(
            bundle.restore(&mut other, "bbbb"),
            Err(CheckpointError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn future_versions_are_rejected() {
        let lab = tiny_lab(34);
        let mut bundle = CheckpointBundle::capture(&lab, "x");
        bundle.version = 99;
        assert!(matches!(
            CheckpointBundle::from_json(&bundle.to_json()),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
    }
}

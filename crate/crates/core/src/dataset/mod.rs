//! Grasp records, the synthetic seed generator, JSON-lines storage and
//! gravity-tilt pre-selection.

mod generate;
mod io;
mod preselect;

pub use generate::{generate_seed_grasps, nominal_rel_pose, SeedConfig};
pub use io::{load_manifest, load_records, save_manifest, save_records, DatasetManifest, PhaseCount};
pub use preselect::{default_tilt_set, preselect, replay_record};

use crate::geom::Pose2;
use crate::sim::{ObjectId, SimError, HAND_JOINTS};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid generator input: {0}")]
    InvalidInput(String),
    #[error("closing found no touching configuration for {object} after {attempts} attempts")]
    NoContact { object: ObjectId, attempts: usize },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("invalid record `{id}`: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Set by the generator on deliberately corrupted records. Only test
    /// oracles may look at it.
    pub synthetic_flawed: bool,
}

/// One seed grasp: the object pose in the hand-base frame and the hand joint targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspRecord {
    pub record_id: String,
    pub object_id: ObjectId,
    pub scale: f64,
    pub rel_pose: Pose2,
    pub hand_joint_targets: [f64; HAND_JOINTS],
    pub provenance: Provenance,
}

impl GraspRecord {
    pub fn validate(&self, hand: &crate::sim::HandModel) -> Result<(), DatasetError> {
        let bad = |message: String| DatasetError::InvalidRecord { id: self.record_id.clone(), message };
        if !self.rel_pose.is_finite() {
            return Err(bad("rel_pose not finite".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(bad(format!("scale {}", self.scale)));
        }
        for (j, q) in self.hand_joint_targets.iter().enumerate() {
            let [lo, hi] = hand.joint_limits[crate::sim::ARM_JOINTS + j];
            if !(*q >= lo && *q <= hi) {
                return Err(bad(format!("hand joint {j} target {q} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Fails on the first repeated `record_id`.
pub fn check_unique_ids(records: &[GraspRecord]) -> Result<(), DatasetError> {
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if !seen.insert(r.record_id.as_str()) {
            return Err(DatasetError::DuplicateId(r.record_id.clone()));
        }
    }
    Ok(())
}

//! Pipeline configuration: one JSON document, every block validated before
//! anything touches the disk.

use super::PipelineError;
use crate::dataset::{default_tilt_set, SeedConfig};
use crate::diffusion::DiffusionConfig;
use crate::rl::{PhaseConfig, RecordConfig, Td3Params};
use crate::sim::{GraspEnv, GraspProtocol, HandModel, ObjectId, ObjectShape, RobotPoseSpec, SimParams, HAND_JOINTS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedGenStage {
    /// Seed grasps generated per object.
    pub n_seed: usize,
    pub flaw_fraction: f64,
    pub generator: SeedConfig,
}

impl Default for SeedGenStage {
    fn default() -> Self {
        Self { n_seed: 84, flaw_fraction: 0.4, generator: SeedConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlStage {
    pub td3: Td3Params,
    pub phase2: PhaseConfig,
    pub phase3: PhaseConfig,
    /// Minimum final-evaluation success rate for a record to be kept.
    pub success_threshold: f64,
    /// Start Phase 3 from the Phase 2 networks.
    pub warm_start: bool,
}

impl Default for RlStage {
    fn default() -> Self {
        Self {
            td3: Td3Params::default(),
            phase2: PhaseConfig::default(),
            phase3: PhaseConfig { epochs: 60, ..PhaseConfig::default() },
            success_threshold: 1.0,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationStage {
    /// Random-pose trials per object and arm.
    pub trials: usize,
    /// Independent training seeds; seed 0 reuses the main run's agents.
    pub seeds: usize,
}

impl Default for AblationStage {
    fn default() -> Self {
        Self { trials: 300, seeds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalStage {
    pub episodes: usize,
    pub max_tries: usize,
}

impl Default for EvalStage {
    fn default() -> Self {
        Self { episodes: 50, max_tries: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub objects: Vec<ObjectId>,
    /// Run directory. Not part of the config hash.
    pub out_dir: PathBuf,
    pub sim: SimParams,
    pub protocol: GraspProtocol,
    pub robot_pose: RobotPoseSpec,
    /// Offset added to every hand joint of the simulated hand (radians);
    /// the dataset hand stays nominal.
    pub sim_hand_bias: f64,
    pub seedgen: SeedGenStage,
    /// Gravity tilts for Phase 1 (radians).
    pub tilt_set: Vec<f64>,
    pub rl: RlStage,
    pub record: RecordConfig,
    pub diffusion: DiffusionConfig,
    /// Used for validation during training and for the final evaluation.
    pub eval: EvalStage,
    pub ablation: AblationStage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            objects: ObjectId::ALL.to_vec(),
            out_dir: PathBuf::from("runs/desk"),
            sim: SimParams::default(),
            protocol: GraspProtocol::default(),
            robot_pose: RobotPoseSpec::default(),
            sim_hand_bias: -0.08,
            seedgen: SeedGenStage::default(),
            tilt_set: default_tilt_set(),
            rl: RlStage::default(),
            record: RecordConfig::default(),
            diffusion: DiffusionConfig::default(),
            eval: EvalStage::default(),
            ablation: AblationStage::default(),
        }
    }
}

impl PipelineConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self::default()
    }

    /// The published training budget. Valid, but takes many hours on a CPU.
    pub fn full_scale() -> Self {
        let mut c = Self::default();
        c.out_dir = PathBuf::from("runs/full");
        c.rl.phase2.epochs = 200;
        c.rl.phase3.epochs = 200;
        c.record.episodes_per_object = 2000;
        c.diffusion.iterations = 100_000;
        c.diffusion.val_interval = 1000;
        c
    }

    /// One object, small networks, short training.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.out_dir = PathBuf::from("runs/smoke");
        c.objects = vec![ObjectId::Bottle];
        c.seedgen.n_seed = 50;
        c.rl.td3.hidden = [32, 32, 32];
        c.rl.td3.batch_size = 32;
        c.rl.phase2 = PhaseConfig { epochs: 4, episodes_per_epoch: 40, ..PhaseConfig::default() };
        c.rl.phase3 = PhaseConfig { epochs: 4, episodes_per_epoch: 40, ..PhaseConfig::default() };
        c.record.episodes_per_object = 20;
        c.diffusion.iterations = 500;
        c.diffusion.widths = [16, 32];
        c.diffusion.val_interval = 250;
        c.diffusion.val_episodes = 8;
        c.eval.episodes = 8;
        c.ablation = AblationStage { trials: 40, seeds: 1 };
        c
    }

    pub fn preset(name: &str) -> Result<Self, PipelineError> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full_scale()),
            "smoke" => Ok(Self::smoke()),
            other => Err(PipelineError::Config(format!("unknown preset `{other}` (desk, full, smoke)"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let c: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `key.path=value` overrides. The value is parsed as JSON and
    /// falls back to a plain string.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self, PipelineError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for s in sets {
            let (key, raw) =
                s.split_once('=').ok_or_else(|| PipelineError::Config(format!("override `{s}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut node = &mut doc;
            for part in key.split('.') {
                node = match node {
                    serde_json::Value::Object(m) => m
                        .get_mut(part)
                        .ok_or_else(|| PipelineError::Config(format!("unknown config key `{key}`")))?,
                    serde_json::Value::Array(a) => {
                        let i: usize = part
                            .parse()
                            .map_err(|_| PipelineError::Config(format!("`{part}` in `{key}` is not an index")))?;
                        let len = a.len();
                        a.get_mut(i)
                            .ok_or_else(|| PipelineError::Config(format!("index {i} out of range ({len}) in `{key}`")))?
                    }
                    _ => return Err(PipelineError::Config(format!("`{key}` descends into a scalar"))),
                };
            }
            *node = value;
        }
        let c: Self = serde_json::from_value(doc).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.objects.is_empty() {
            return bad("objects must not be empty".into());
        }
        let mut seen = self.objects.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.objects.len() {
            return bad("objects contains duplicates".into());
        }
        if self.seedgen.n_seed == 0 {
            return bad("seedgen.n_seed must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.seedgen.flaw_fraction) {
            return bad(format!("seedgen.flaw_fraction {} outside [0, 1]", self.seedgen.flaw_fraction));
        }
        if self.tilt_set.is_empty() || self.tilt_set.iter().any(|t| !t.is_finite() || t.abs() >= std::f64::consts::FRAC_PI_2) {
            return bad("tilt_set must be non-empty with every tilt inside (-90°, 90°)".into());
        }
        if !(self.sim_hand_bias.is_finite() && self.sim_hand_bias.abs() <= 0.5) {
            return bad(format!("sim_hand_bias {} outside [-0.5, 0.5]", self.sim_hand_bias));
        }
        if !(0.0..=1.0).contains(&self.rl.success_threshold) {
            return bad(format!("rl.success_threshold {} outside [0, 1]", self.rl.success_threshold));
        }
        if self.eval.episodes == 0 || self.eval.max_tries == 0 {
            return bad("eval.episodes and eval.max_tries must be positive".into());
        }
        if self.ablation.trials == 0 || self.ablation.seeds == 0 {
            return bad("ablation.trials and ablation.seeds must be positive".into());
        }
        let wrap = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.seedgen.generator.validate().map_err(|e| wrap(&e))?;
        self.sim.validate().map_err(|e| wrap(&e))?;
        self.protocol.validate().map_err(|e| wrap(&e))?;
        self.nominal_hand().validate().map_err(|e| wrap(&e))?;
        self.sim_hand().validate().map_err(|e| wrap(&e))?;
        self.robot_pose
            .static_pose(&self.nominal_hand(), self.protocol.open_hand)
            .map_err(|e| wrap(&e))?;
        self.rl.td3.validate().map_err(|e| wrap(&e))?;
        self.rl.phase2.validate().map_err(|e| wrap(&e))?;
        self.rl.phase3.validate().map_err(|e| wrap(&e))?;
        self.record.validate().map_err(|e| wrap(&e))?;
        self.diffusion.validate().map_err(|e| wrap(&e))?;
        Ok(())
    }

    pub fn nominal_hand(&self) -> HandModel {
        HandModel::default()
    }

    pub fn sim_hand(&self) -> HandModel {
        self.nominal_hand().with_joint_bias([self.sim_hand_bias; HAND_JOINTS])
    }

    /// The nominal-hand environment (dataset generation, Phase 1) and the
    /// biased-hand one every later stage runs in.
    pub fn environments(&self) -> Result<(GraspEnv, GraspEnv), PipelineError> {
        let shapes: Vec<ObjectShape> = self.objects.iter().map(|o| ObjectShape::builtin(*o)).collect();
        let nominal = GraspEnv::new(&self.nominal_hand(), &self.sim, &self.protocol, &self.robot_pose, &shapes)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let sim = nominal.with_hand(&self.sim_hand());
        Ok((nominal, sim))
    }

    /// sha256 over the canonical JSON of every field except `out_dir`.
    pub fn hash(&self) -> String {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(m) = &mut doc {
            m.remove("out_dir");
        }
        // serde_json's map is ordered by key, so this text is canonical.
        let text = serde_json::to_string(&doc).expect("value serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["desk", "full", "smoke"] {
            PipelineConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(PipelineConfig::preset("huge").is_err());
    }

    #[test]
    fn zero_seeds_rejected() {
        let mut c = PipelineConfig::smoke();
        c.seedgen.n_seed = 0;
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut doc = serde_json::to_value(PipelineConfig::smoke()).unwrap();
        doc["rl"]["learning_rate_typo"] = 1.0.into();
        assert!(PipelineConfig::from_json(&doc.to_string()).is_err());
        assert!(PipelineConfig::smoke().with_overrides(&["rl.nope=1".into()]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = PipelineConfig::full_scale();
        let back = PipelineConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        // Missing keys take their defaults.
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = PipelineConfig::smoke()
            .with_overrides(&["diffusion.iterations=42".into(), "objects=[\"banana\",\"camera\"]".into(), "tilt_set.0=0.1".into()])
            .unwrap();
        assert_eq!(c.diffusion.iterations, 42);
        assert_eq!(c.objects, vec![ObjectId::Banana, ObjectId::Camera]);
        assert_eq!(c.tilt_set[0], 0.1);
        assert!(PipelineConfig::smoke().with_overrides(&["seedgen.n_seed=0".into()]).is_err());
    }

    #[test]
    fn hash_tracks_meaningful_fields_only() {
        let a = PipelineConfig::smoke();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.diffusion.iterations += 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.sim.drop_threshold = 0.03;
        assert_ne!(a.hash(), d.hash());
    }
}

//! Run-directory layout, the process lock, CSV emission and small JSON helpers.

use super::{BoxError, PipelineConfig, PipelineError, Stage};
use crate::sim::ObjectId;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Paths of every artifact a run produces.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn lock(&self) -> PathBuf {
        self.root.join("run.lock")
    }
    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn seed_records(&self) -> PathBuf {
        self.root.join("records/seed.jsonl")
    }
    /// Records surviving phase 1, 2 or 3.
    pub fn phase_records(&self, phase: u8) -> PathBuf {
        self.root.join(format!("records/phase{phase}.jsonl"))
    }
    pub fn phase_success(&self, phase: u8) -> PathBuf {
        self.root.join(format!("records/phase{phase}_success.json"))
    }
    pub fn agent(&self, phase: u8, obj: ObjectId) -> PathBuf {
        self.root.join(format!("agents/phase{phase}_{obj}"))
    }
    pub fn ablation_agent(&self, seed: usize, phase: u8, obj: ObjectId) -> PathBuf {
        self.root.join(format!("ablation/seed{seed}/phase{phase}_{obj}"))
    }
    pub fn ablation_records(&self, seed: usize) -> PathBuf {
        self.root.join(format!("ablation/seed{seed}/phase3.jsonl"))
    }
    pub fn episodes(&self) -> PathBuf {
        self.root.join("episodes.jsonl")
    }
    pub fn record_summary(&self) -> PathBuf {
        self.root.join("record_summary.json")
    }
    pub fn pose_stats(&self) -> PathBuf {
        self.root.join("pose_stats.json")
    }
    pub fn policies(&self) -> PathBuf {
        self.root.join("policies")
    }
    pub fn policy_files(&self, obj: ObjectId) -> [PathBuf; 2] {
        let dir = self.policies();
        [dir.join(format!("{obj}.json")), dir.join(format!("{obj}.bin"))]
    }
    pub fn rl_csv(&self, phase: u8, obj: ObjectId) -> PathBuf {
        self.root.join(format!("metrics/rl_phase{phase}_{obj}.csv"))
    }
    pub fn retention_csv(&self) -> PathBuf {
        self.root.join("metrics/retention.csv")
    }
    pub fn diffusion_csv(&self, obj: ObjectId) -> PathBuf {
        self.root.join(format!("metrics/diffusion_{obj}.csv"))
    }
    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("metrics/eval.csv")
    }
    pub fn ablation_csv(&self) -> PathBuf {
        self.root.join("metrics/ablation.csv")
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    /// Files a stage must leave behind to count as complete.
    pub fn outputs(&self, stage: Stage, objects: &[ObjectId]) -> Vec<PathBuf> {
        let per = |f: &dyn Fn(ObjectId) -> Vec<PathBuf>| objects.iter().flat_map(|o| f(*o)).collect::<Vec<_>>();
        match stage {
            Stage::GenSeed => vec![self.seed_records()],
            Stage::Preselect => vec![self.phase_records(1)],
            Stage::TrainRlStatic => {
                let mut v = per(&|o| vec![self.agent(2, o).join("actor.json"), self.rl_csv(2, o)]);
                v.extend([self.phase_success(2), self.phase_records(2)]);
                v
            }
            Stage::TrainRlRandom => {
                let mut v = per(&|o| vec![self.agent(3, o).join("actor.json"), self.rl_csv(3, o)]);
                v.extend([self.phase_success(3), self.manifest(), self.retention_csv(), self.phase_records(3)]);
                v
            }
            Stage::Record => vec![self.record_summary(), self.episodes()],
            Stage::Stats => vec![self.pose_stats()],
            Stage::TrainDiffusion => per(&|o| {
                let mut v = self.policy_files(o).to_vec();
                v.push(self.diffusion_csv(o));
                v
            }),
            Stage::Eval => vec![self.eval_csv()],
            Stage::Ablate => vec![self.ablation_csv()],
            Stage::Report => vec![self.report_json(), self.report_txt()],
        }
    }

    /// Creates the directory, checks it belongs to `cfg`, and records the config.
    pub fn init(&self, cfg: &PipelineConfig) -> Result<(), PipelineError> {
        let io = |e: std::io::Error| PipelineError::Config(format!("{}: {e}", self.root.display()));
        std::fs::create_dir_all(self.root.join("metrics")).map_err(io)?;
        std::fs::create_dir_all(self.root.join("records")).map_err(io)?;
        let path = self.config();
        if path.exists() {
            let existing = PipelineConfig::load(&path)?;
            if existing.hash() != cfg.hash() {
                return Err(PipelineError::ConfigMismatch { existing: existing.hash(), requested: cfg.hash() });
            }
        } else {
            write_json(&path, cfg).map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Adds one stage's wall-clock seconds to `timings.json`.
    pub fn record_timing(&self, stage: Stage, seconds: f64) -> Result<(), BoxError> {
        let path = self.timings();
        let mut t: BTreeMap<String, f64> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
        t.insert(stage.name().to_string(), seconds);
        write_json(&path, &t)
    }
}

/// Exclusive ownership of a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &RunDir) -> Result<Self, PipelineError> {
        let path = dir.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(dir.root.display().to_string()))
            }
            Err(e) => Err(PipelineError::Config(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<(), BoxError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), BoxError> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, BoxError> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

/// Writes a fresh CSV with a header row.
pub(crate) fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), BoxError> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends one row, writing the header first if the file is new.
pub(crate) fn append_csv<R: Serialize>(path: &Path, row: &R) -> Result<(), BoxError> {
    ensure_parent(path)?;
    let fresh = !path.exists();
    let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(f);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>, BoxError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<R>, _>>().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(rows)
}

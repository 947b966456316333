use super::{DatasetError, GraspRecord};
use crate::sim::ObjectId;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

/// Writes one JSON object per line. Floats are printed in shortest
/// round-trip form, so loading restores them bit for bit.
pub fn save_records(path: &Path, records: &[GraspRecord]) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<GraspRecord>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraspRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    super::check_unique_ids(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseCount {
    pub phase: String,
    pub count: usize,
}

/// Sidecar describing a dataset and how many records survived each phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub object_ids: Vec<ObjectId>,
    pub counts: Vec<PhaseCount>,
    pub generator_seed: u64,
    pub config_hash: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for pair in self.counts.windows(2) {
            if pair[1].count > pair[0].count {
                return Err(DatasetError::Manifest(format!(
                    "count grows from {} ({}) to {} ({})",
                    pair[0].phase, pair[0].count, pair[1].phase, pair[1].count
                )));
            }
        }
        Ok(())
    }
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    manifest.validate()?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::geom::Pose2;

    fn rec(i: usize) -> GraspRecord {
        GraspRecord {
            record_id: format!("bottle-{i:05}"),
            object_id: ObjectId::Bottle,
            scale: 0.12,
            rel_pose: Pose2::new(0.1 / 3.0, -0.07, 0.2),
            hand_joint_targets: [0.1, 0.2, 0.3, 0.4, 0.5, std::f64::consts::PI / 7.0],
            provenance: Provenance { synthetic_flawed: i % 2 == 0 },
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_records(&p).unwrap().is_empty());
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_records(&p, &[rec(0), rec(1)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, &text[..text.len() - 10]).unwrap();
        let err = load_records(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn unknown_object_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_records(&p, &[rec(0)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("\"bottle\"", "\"teapot\"");
        std::fs::write(&p, text).unwrap();
        let err = load_records(&p).unwrap_err().to_string();
        assert!(err.contains(":1:") && err.contains("teapot"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_records(&p, &[rec(3), rec(3)]).unwrap();
        assert!(matches!(load_records(&p), Err(DatasetError::DuplicateId(_))));
    }

    #[test]
    fn manifest_counts_must_not_grow() {
        let m = DatasetManifest {
            object_ids: vec![ObjectId::Banana],
            counts: vec![
                PhaseCount { phase: "seed".into(), count: 10 },
                PhaseCount { phase: "phase1".into(), count: 12 },
            ],
            generator_seed: 1,
            config_hash: "x".into(),
        };
        assert!(m.validate().is_err());
    }
}

//! The run report: built only from the metrics CSVs and the stored config.

use super::artifacts::{read_csv, RunDir};
use super::{PipelineConfig, PipelineError, Stage};
use crate::sim::ObjectId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

pub(crate) const RETENTION_STAGES: [&str; 4] = ["seed", "phase1", "phase2", "phase3"];
pub(crate) const ARMS: [&str; 3] = ["none", "static", "random"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct RlRow {
    pub epoch: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub phase: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct RetentionCsvRow {
    pub object: String,
    pub stage: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct DiffusionRow {
    pub iteration: usize,
    pub mean_success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct EvalRow {
    pub object: String,
    pub episodes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct AblationCsvRow {
    pub seed: usize,
    pub object: String,
    pub arm: String,
    pub trials: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    /// An object id, or "all".
    pub object: String,
    /// Seed, phase 1, phase 2, phase 3.
    pub counts: Vec<usize>,
    /// Stage-over-stage ratios; the first is 1.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlCurves {
    pub phase2: Vec<EpochPoint>,
    pub phase3: Vec<EpochPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub iteration: usize,
    pub mean_success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCurve {
    pub curve: Vec<ValidationPoint>,
    pub best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Training seed index, or "mean".
    pub seed: String,
    pub none: f64,
    pub static_trained: f64,
    pub random_trained: f64,
}

/// Everything a run measured. Wall-clock timings live in `timings.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub objects: Vec<ObjectId>,
    pub retention: Vec<RetentionRow>,
    pub rl: BTreeMap<String, RlCurves>,
    pub diffusion: BTreeMap<String, DiffusionCurve>,
    /// Mean over objects of the best validation success.
    pub mean_best_success: f64,
    pub eval: BTreeMap<String, f64>,
    pub eval_mean: f64,
    pub ablation: Vec<AblationRow>,
}

/// `counts[i] / counts[i-1]`, with 1 for the first stage and 0 after an empty one.
pub fn retention_ratios(counts: &[usize]) -> Vec<f64> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| match i {
            0 => 1.0,
            _ if counts[i - 1] == 0 => 0.0,
            _ => c as f64 / counts[i - 1] as f64,
        })
        .collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Aggregates a run directory. Reads only; fails listing every stage whose
/// artifacts are missing.
pub fn build_report(root: &Path) -> Result<RunReport, PipelineError> {
    let dir = RunDir::new(root);
    let inputs = &Stage::ALL[..Stage::ALL.len() - 1];
    if !dir.config().exists() {
        return Err(PipelineError::Missing(inputs.to_vec()));
    }
    let cfg = PipelineConfig::load(&dir.config())?;
    let missing: Vec<Stage> = inputs
        .iter()
        .copied()
        .filter(|s| dir.outputs(*s, &cfg.objects).iter().any(|p| !p.exists()))
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Missing(missing));
    }
    let fail = |stage: Stage| move |e| PipelineError::stage(stage, e);

    let rows: Vec<RetentionCsvRow> = read_csv(&dir.retention_csv()).map_err(fail(Stage::TrainRlRandom))?;
    let mut by_obj: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in &rows {
        let slot = RETENTION_STAGES
            .iter()
            .position(|s| *s == r.stage)
            .ok_or_else(|| PipelineError::stage(Stage::TrainRlRandom, format!("unknown retention stage `{}`", r.stage)))?;
        by_obj.entry(r.object.clone()).or_insert_with(|| vec![0; 4])[slot] = r.count;
    }
    let mut retention: Vec<RetentionRow> = cfg
        .objects
        .iter()
        .map(|o| o.to_string())
        .chain(std::iter::once("all".to_string()))
        .filter_map(|o| by_obj.remove(&o).map(|counts| (o, counts)))
        .map(|(object, counts)| RetentionRow { ratios: retention_ratios(&counts), object, counts })
        .collect();
    retention.sort_by_key(|r| (r.object == "all", r.object.clone()));

    let mut rl = BTreeMap::new();
    let mut diffusion = BTreeMap::new();
    for o in &cfg.objects {
        let curve = |phase: u8| -> Result<Vec<EpochPoint>, PipelineError> {
            let stage = if phase == 2 { Stage::TrainRlStatic } else { Stage::TrainRlRandom };
            let rows: Vec<RlRow> = read_csv(&dir.rl_csv(phase, *o)).map_err(fail(stage))?;
            Ok(rows
                .into_iter()
                .map(|r| EpochPoint { epoch: r.epoch, mean_reward: r.mean_reward, success_rate: r.success_rate })
                .collect())
        };
        rl.insert(o.to_string(), RlCurves { phase2: curve(2)?, phase3: curve(3)? });
        let rows: Vec<DiffusionRow> = read_csv(&dir.diffusion_csv(*o)).map_err(fail(Stage::TrainDiffusion))?;
        let curve: Vec<ValidationPoint> = rows
            .into_iter()
            .map(|r| ValidationPoint { iteration: r.iteration, mean_success_rate: r.mean_success_rate })
            .collect();
        let best = curve.iter().map(|p| p.mean_success_rate).reduce(f64::max);
        diffusion.insert(o.to_string(), DiffusionCurve { curve, best });
    }
    let mean_best_success = mean(diffusion.values().map(|d| d.best.unwrap_or(0.0)));

    let eval_rows: Vec<EvalRow> = read_csv(&dir.eval_csv()).map_err(fail(Stage::Eval))?;
    let eval: BTreeMap<String, f64> = eval_rows.into_iter().map(|r| (r.object, r.success_rate)).collect();
    let eval_mean = mean(eval.values().copied());

    let ab_rows: Vec<AblationCsvRow> = read_csv(&dir.ablation_csv()).map_err(fail(Stage::Ablate))?;
    let mut per_seed: BTreeMap<usize, [Vec<f64>; 3]> = BTreeMap::new();
    for r in ab_rows {
        let arm = ARMS
            .iter()
            .position(|a| *a == r.arm)
            .ok_or_else(|| PipelineError::stage(Stage::Ablate, format!("unknown ablation arm `{}`", r.arm)))?;
        per_seed.entry(r.seed).or_default()[arm].push(r.success_rate);
    }
    let mut ablation: Vec<AblationRow> = per_seed
        .iter()
        .map(|(s, arms)| AblationRow {
            seed: s.to_string(),
            none: mean(arms[0].iter().copied()),
            static_trained: mean(arms[1].iter().copied()),
            random_trained: mean(arms[2].iter().copied()),
        })
        .collect();
    if !ablation.is_empty() {
        let m = AblationRow {
            seed: "mean".into(),
            none: mean(ablation.iter().map(|r| r.none)),
            static_trained: mean(ablation.iter().map(|r| r.static_trained)),
            random_trained: mean(ablation.iter().map(|r| r.random_trained)),
        };
        ablation.push(m);
    }

    Ok(RunReport {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        objects: cfg.objects.clone(),
        retention,
        rl,
        diffusion,
        mean_best_success,
        eval,
        eval_mean,
        ablation,
    })
}

/// Plain-text tables for a terminal.
pub fn render_text(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run seed {}  config {}", r.seed, &r.config_hash[..12.min(r.config_hash.len())]);
    let _ = writeln!(s);
    let _ = writeln!(s, "Retention (count, ratio to previous stage)");
    let _ = writeln!(s, "{:<8} {:>14} {:>14} {:>14} {:>14}", "object", "seed", "phase1", "phase2", "phase3");
    for row in &r.retention {
        let cells: Vec<String> =
            row.counts.iter().zip(&row.ratios).map(|(c, q)| format!("{c:>6} ({q:.3})")).collect();
        let _ = writeln!(s, "{:<8} {:>14} {:>14} {:>14} {:>14}", row.object, cells[0], cells[1], cells[2], cells[3]);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "RL final-epoch success");
    let _ = writeln!(s, "{:<8} {:>8} {:>8}", "object", "phase2", "phase3");
    for (o, c) in &r.rl {
        let last = |v: &Vec<EpochPoint>| v.last().map_or("-".to_string(), |p| format!("{:.3}", p.success_rate));
        let _ = writeln!(s, "{:<8} {:>8} {:>8}", o, last(&c.phase2), last(&c.phase3));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Diffusion policy success");
    let _ = writeln!(s, "{:<8} {:>8} {:>8}", "object", "best", "final");
    for (o, d) in &r.diffusion {
        let best = d.best.map_or("-".to_string(), |b| format!("{b:.3}"));
        let fin = r.eval.get(o).map_or("-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(s, "{:<8} {:>8} {:>8}", o, best, fin);
    }
    let _ = writeln!(s, "{:<8} {:>8.3} {:>8.3}", "mean", r.mean_best_success, r.eval_mean);
    let _ = writeln!(s);
    let _ = writeln!(s, "Ablation (random-pose success on the phase-3 subset)");
    let _ = writeln!(s, "{:<8} {:>8} {:>8} {:>8}", "seed", "none", "static", "random");
    for a in &r.ablation {
        let _ = writeln!(s, "{:<8} {:>8.3} {:>8.3} {:>8.3}", a.seed, a.none, a.static_trained, a.random_trained);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_stage_over_stage() {
        let r = retention_ratios(&[500, 300, 210, 180]);
        assert_eq!(r[0], 1.0);
        assert_eq!(r[1], 0.6);
        assert_eq!(r[2], 0.7);
        assert!((r[3] - 0.857).abs() < 5e-4);
        assert_eq!(retention_ratios(&[3, 0, 0]), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_directory_lists_every_stage() {
        let dir = tempfile::tempdir().unwrap();
        match build_report(dir.path()) {
            Err(PipelineError::Missing(s)) => assert_eq!(s, Stage::ALL[..9].to_vec()),
            other => panic!("{other:?}"),
        }
    }
}

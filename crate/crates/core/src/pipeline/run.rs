//! Stage implementations and the sequential driver.

use super::artifacts::{append_csv, read_json, write_csv, write_json, RunDir, RunLock};
use super::report::{
    build_report, render_text, AblationCsvRow, DiffusionRow, EvalRow, RetentionCsvRow, RlRow, RunReport,
    RETENTION_STAGES,
};
use super::{BoxError, PipelineConfig, PipelineError, Stage};
use crate::dataset::{
    generate_seed_grasps, load_records, preselect, save_manifest, save_records, DatasetManifest, GraspRecord,
    PhaseCount,
};
use crate::diffusion::{success_rate, train_policy, validation_setups, DiffusionPolicy};
use crate::geom::Pose2;
use crate::rl::{
    ablation_eval, filter_by_success, load_episodes, record_enhanced_dataset, save_episodes, train_phase, Actor,
    Episode, PoseMode, ResidualPolicy, Td3Agent, ZeroResidual, OBS_WIDTH_RL,
};
use crate::sampler::{collect_pose_stats, sample_valid_pose, sampling_bounds, PoseStats, SamplingBounds};
use crate::seeding::{derive_seed, derived_rng, tag};
use crate::sim::{GraspEnv, ObjectId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ObjectBounds {
    stats: PoseStats,
    bounds: SamplingBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordSummary {
    episodes: BTreeMap<String, usize>,
    discarded_collision: usize,
    discarded_step_cap: usize,
    discarded_dropped: usize,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    dir: RunDir,
    /// Hand the seed dataset was generated with.
    nominal: GraspEnv,
    /// Hand used for every trial after Phase 1.
    sim: GraspEnv,
    log: &'a dyn Fn(&str),
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a PipelineConfig, log: &'a dyn Fn(&str)) -> Result<Self, PipelineError> {
        let (nominal, sim) = cfg.environments()?;
        Ok(Self { cfg, dir: RunDir::new(&cfg.out_dir), nominal, sim, log })
    }

    fn seed(&self, path: &[u64]) -> u64 {
        derive_seed(self.cfg.seed, path)
    }

    fn records_of(&self, path: &Path) -> Result<BTreeMap<ObjectId, Vec<GraspRecord>>, BoxError> {
        let all = load_records(path)?;
        let mut out: BTreeMap<ObjectId, Vec<GraspRecord>> = self.cfg.objects.iter().map(|o| (*o, vec![])).collect();
        for r in all {
            if let Some(v) = out.get_mut(&r.object_id) {
                v.push(r);
            }
        }
        Ok(out)
    }

    fn bounds(&self) -> Result<BTreeMap<ObjectId, ObjectBounds>, BoxError> {
        let m: BTreeMap<ObjectId, ObjectBounds> = read_json(&self.dir.pose_stats())?;
        Ok(m)
    }
}

/// Stages whose artifacts a stage reads.
fn prerequisites(stage: Stage) -> &'static [Stage] {
    match stage {
        Stage::GenSeed => &[],
        Stage::Preselect => &[Stage::GenSeed],
        Stage::TrainRlStatic => &[Stage::Preselect],
        Stage::TrainRlRandom => &[Stage::TrainRlStatic],
        Stage::Record | Stage::Stats => &[Stage::TrainRlRandom],
        Stage::TrainDiffusion => &[Stage::Record, Stage::Stats],
        Stage::Eval => &[Stage::TrainDiffusion, Stage::Stats],
        Stage::Ablate => &[Stage::Preselect, Stage::TrainRlStatic, Stage::TrainRlRandom],
        Stage::Report => &[
            Stage::GenSeed,
            Stage::Preselect,
            Stage::TrainRlStatic,
            Stage::TrainRlRandom,
            Stage::Record,
            Stage::Stats,
            Stage::TrainDiffusion,
            Stage::Eval,
            Stage::Ablate,
        ],
    }
}

/// True when every artifact of `stage` exists in the run directory.
pub fn stage_complete(cfg: &PipelineConfig, stage: Stage) -> bool {
    RunDir::new(&cfg.out_dir).outputs(stage, &cfg.objects).iter().all(|p| p.exists())
}

fn gen_seed(c: &Ctx) -> Result<(), BoxError> {
    let mut all = Vec::new();
    for &o in &c.cfg.objects {
        let mut rng = derived_rng(c.cfg.seed, &[tag("gen-seed"), tag(o.as_str())]);
        let s = &c.cfg.seedgen;
        let recs = generate_seed_grasps(
            c.nominal.world(o)?,
            c.nominal.protocol.open_hand,
            s.n_seed,
            s.flaw_fraction,
            &s.generator,
            &mut rng,
        )?;
        (c.log)(&format!("gen-seed: {o}: {} records", recs.len()));
        all.extend(recs);
    }
    save_records(&c.dir.seed_records(), &all)?;
    Ok(())
}

fn preselect_stage(c: &Ctx) -> Result<(), BoxError> {
    let seed = load_records(&c.dir.seed_records())?;
    let kept = preselect(&c.nominal, &seed, &c.cfg.tilt_set)?;
    (c.log)(&format!("preselect: kept {} of {}", kept.len(), seed.len()));
    save_records(&c.dir.phase_records(1), &kept)?;
    Ok(())
}

/// Where one RL phase reads its starting networks and writes its results.
struct PhaseIo<'p> {
    phase: u8,
    seed: u64,
    agent_dir: &'p dyn Fn(ObjectId) -> std::path::PathBuf,
    warm_dir: Option<&'p dyn Fn(ObjectId) -> std::path::PathBuf>,
    csv: Option<&'p dyn Fn(ObjectId) -> std::path::PathBuf>,
}

/// Trains one agent per object on `input` and returns the kept records and
/// the per-record success rates.
fn rl_phase(
    c: &Ctx,
    input: &BTreeMap<ObjectId, Vec<GraspRecord>>,
    io: &PhaseIo,
) -> Result<(Vec<GraspRecord>, BTreeMap<String, f64>), BoxError> {
    let (mode, pcfg) = match io.phase {
        2 => (PoseMode::Static, &c.cfg.rl.phase2),
        _ => (PoseMode::Random, &c.cfg.rl.phase3),
    };
    let mut kept = Vec::new();
    let mut success = BTreeMap::new();
    for (&o, recs) in input {
        if recs.is_empty() {
            return Err(format!("no {o} records enter phase {}", io.phase).into());
        }
        let mut agent = match io.warm_dir {
            Some(d) => Td3Agent::load(&d(o))?,
            None => Td3Agent::new(
                OBS_WIDTH_RL,
                &c.cfg.rl.td3,
                &mut derived_rng(io.seed, &[tag("agent-init"), tag(o.as_str())]),
            )?,
        };
        let csv = io.csv.map(|f| f(o));
        if let Some(p) = &csv {
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        let mut csv_err = None;
        let started = Instant::now();
        let res = train_phase(
            &c.sim,
            &mut agent,
            recs,
            mode,
            pcfg,
            derive_seed(io.seed, &[tag("phase"), io.phase as u64, tag(o.as_str())]),
            |m| {
                (c.log)(&format!(
                    "phase {} {o}: epoch {} success {:.3} ({:.0}s)",
                    io.phase,
                    m.epoch,
                    m.success_rate,
                    started.elapsed().as_secs_f64()
                ));
                if let Some(p) = &csv {
                    let row = RlRow { epoch: m.epoch, mean_reward: m.mean_reward, success_rate: m.success_rate, phase: io.phase };
                    if let Err(e) = append_csv(p, &row) {
                        csv_err.get_or_insert(e);
                    }
                }
            },
        )?;
        if let Some(e) = csv_err {
            return Err(e);
        }
        let f = filter_by_success(recs, &res.per_record_success, c.cfg.rl.success_threshold)?;
        (c.log)(&format!("phase {} {o}: kept {} of {}", io.phase, f.len(), recs.len()));
        agent.save(&(io.agent_dir)(o))?;
        kept.extend(f);
        success.extend(res.per_record_success);
    }
    Ok((kept, success))
}

fn group(cfg: &PipelineConfig, recs: Vec<GraspRecord>) -> BTreeMap<ObjectId, Vec<GraspRecord>> {
    let mut out: BTreeMap<ObjectId, Vec<GraspRecord>> = cfg.objects.iter().map(|o| (*o, vec![])).collect();
    for r in recs {
        if let Some(v) = out.get_mut(&r.object_id) {
            v.push(r);
        }
    }
    out
}

fn train_rl_static(c: &Ctx) -> Result<(), BoxError> {
    let input = c.records_of(&c.dir.phase_records(1))?;
    let agent_dir = |o| c.dir.agent(2, o);
    let csv = |o| c.dir.rl_csv(2, o);
    let io = PhaseIo { phase: 2, seed: c.cfg.seed, agent_dir: &agent_dir, warm_dir: None, csv: Some(&csv) };
    let (kept, success) = rl_phase(c, &input, &io)?;
    write_json(&c.dir.phase_success(2), &success)?;
    save_records(&c.dir.phase_records(2), &kept)?;
    Ok(())
}

fn train_rl_random(c: &Ctx) -> Result<(), BoxError> {
    let input = c.records_of(&c.dir.phase_records(2))?;
    let agent_dir = |o| c.dir.agent(3, o);
    let warm = |o| c.dir.agent(2, o);
    let csv = |o| c.dir.rl_csv(3, o);
    let io = PhaseIo {
        phase: 3,
        seed: c.cfg.seed,
        agent_dir: &agent_dir,
        warm_dir: c.cfg.rl.warm_start.then_some(&warm as &dyn Fn(ObjectId) -> std::path::PathBuf),
        csv: Some(&csv),
    };
    let (kept, success) = rl_phase(c, &input, &io)?;
    write_json(&c.dir.phase_success(3), &success)?;

    let files = [c.dir.seed_records(), c.dir.phase_records(1), c.dir.phase_records(2)];
    let mut sets: Vec<BTreeMap<ObjectId, Vec<GraspRecord>>> =
        files.iter().map(|p| c.records_of(p)).collect::<Result<_, _>>()?;
    sets.push(group(c.cfg, kept.clone()));
    let mut rows = Vec::new();
    for o in &c.cfg.objects {
        for (stage, set) in RETENTION_STAGES.iter().zip(&sets) {
            rows.push(RetentionCsvRow { object: o.to_string(), stage: stage.to_string(), count: set[o].len() });
        }
    }
    let totals: Vec<usize> = sets.iter().map(|s| s.values().map(Vec::len).sum()).collect();
    for (stage, n) in RETENTION_STAGES.iter().zip(&totals) {
        rows.push(RetentionCsvRow { object: "all".into(), stage: stage.to_string(), count: *n });
    }
    write_csv(&c.dir.retention_csv(), &rows)?;
    save_manifest(
        &c.dir.manifest(),
        &DatasetManifest {
            object_ids: c.cfg.objects.clone(),
            counts: RETENTION_STAGES
                .iter()
                .zip(&totals)
                .map(|(p, n)| PhaseCount { phase: p.to_string(), count: *n })
                .collect(),
            generator_seed: c.cfg.seed,
            config_hash: c.cfg.hash(),
        },
    )?;
    save_records(&c.dir.phase_records(3), &kept)?;
    Ok(())
}

fn phase3_actors(dirs: impl Fn(ObjectId) -> std::path::PathBuf, objects: &[ObjectId]) -> Result<BTreeMap<ObjectId, Actor>, BoxError> {
    objects.iter().map(|o| Ok((*o, Td3Agent::load(&dirs(*o))?.actor))).collect()
}

fn record(c: &Ctx) -> Result<(), BoxError> {
    let recs = load_records(&c.dir.phase_records(3))?;
    let actors = phase3_actors(|o| c.dir.agent(3, o), &c.cfg.objects)?;
    let rec = record_enhanced_dataset(&c.sim, &recs, &actors, &c.cfg.record, c.seed(&[tag("record")]))?;
    let mut per: BTreeMap<String, usize> = BTreeMap::new();
    for e in &rec.episodes {
        *per.entry(e.object_id.to_string()).or_default() += 1;
    }
    (c.log)(&format!("record: {:?}, discarded {:?}", per, rec.discarded));
    write_json(
        &c.dir.record_summary(),
        &RecordSummary {
            episodes: per,
            discarded_collision: rec.discarded.collision,
            discarded_step_cap: rec.discarded.step_cap,
            discarded_dropped: rec.discarded.dropped,
        },
    )?;
    save_episodes(&c.dir.episodes(), &rec.episodes)?;
    Ok(())
}

fn stats(c: &Ctx) -> Result<(), BoxError> {
    let recs = load_records(&c.dir.phase_records(3))?;
    let mut out = BTreeMap::new();
    for &o in &c.cfg.objects {
        let stats = collect_pose_stats(c.sim.world(o)?, c.sim.protocol.open_hand, &recs)
            .map_err(|e| format!("{o}: {e}"))?;
        let bounds = sampling_bounds(&stats);
        out.insert(o, ObjectBounds { stats, bounds });
    }
    write_json(&c.dir.pose_stats(), &out)?;
    Ok(())
}

fn train_diffusion(c: &Ctx) -> Result<(), BoxError> {
    let episodes = load_episodes(&c.dir.episodes())?;
    let bounds = c.bounds()?;
    let d = &c.cfg.diffusion;
    std::fs::create_dir_all(c.dir.policies())?;
    for &o in &c.cfg.objects {
        let eps: Vec<Episode> = episodes.iter().filter(|e| e.object_id == o).cloned().collect();
        let b = &bounds.get(&o).ok_or_else(|| format!("no pose bounds for {o}"))?.bounds;
        let mut policy =
            DiffusionPolicy::new(d, &eps, c.sim.hand(), &mut derived_rng(c.cfg.seed, &[tag("policy-init"), tag(o.as_str())]))?;
        let setups = if d.val_interval > 0 {
            validation_setups(&c.sim, o, b, d.val_episodes, d.randomize_robot_pose, c.cfg.eval.max_tries, c.seed(&[tag("validation")]))?
        } else {
            vec![]
        };
        let csv = c.dir.diffusion_csv(o);
        if csv.exists() {
            std::fs::remove_file(&csv)?;
        }
        let started = Instant::now();
        let mut window_loss = 0.0;
        train_policy(&mut policy, &eps, d.iterations, d.batch_size, c.seed(&[tag("diffusion"), tag(o.as_str())]), |it, loss, p| {
            window_loss += loss;
            if it % 250 == 0 {
                (c.log)(&format!("diffusion {o}: it {it} loss {:.4} ({:.0}s)", window_loss / 250.0, started.elapsed().as_secs_f64()));
                window_loss = 0.0;
            }
            if d.val_interval > 0 && (it % d.val_interval == 0 || it == d.iterations) {
                let rate = success_rate(&c.sim, p, &setups, d.rollout_step_cap, c.cfg.record.clamp)?;
                (c.log)(&format!("diffusion {o}: it {it} validation success {rate:.3}"));
                append_csv(&csv, &DiffusionRow { iteration: it, mean_success_rate: rate })
                    .map_err(|e| crate::diffusion::DiffusionError::Io(e.to_string()))?;
            }
            Ok(())
        })?;
        if !csv.exists() {
            // No validation configured: header only.
            std::fs::write(&csv, "iteration,mean_success_rate\n")?;
        }
        policy.save(&c.dir.policies(), o.as_str())?;
    }
    Ok(())
}

fn eval(c: &Ctx) -> Result<(), BoxError> {
    let bounds = c.bounds()?;
    let mut rows = Vec::new();
    for &o in &c.cfg.objects {
        let policy = DiffusionPolicy::load(&c.dir.policies(), o.as_str())?;
        let b = &bounds.get(&o).ok_or_else(|| format!("no pose bounds for {o}"))?.bounds;
        let d = &c.cfg.diffusion;
        let setups =
            validation_setups(&c.sim, o, b, c.cfg.eval.episodes, d.randomize_robot_pose, c.cfg.eval.max_tries, c.seed(&[tag("eval")]))?;
        let rate = success_rate(&c.sim, &policy, &setups, d.rollout_step_cap, c.cfg.record.clamp)?;
        (c.log)(&format!("eval {o}: success {rate:.3}"));
        rows.push(EvalRow { object: o.to_string(), episodes: setups.len(), success_rate: rate });
    }
    write_csv(&c.dir.eval_csv(), &rows)?;
    Ok(())
}

fn ablate(c: &Ctx) -> Result<(), BoxError> {
    let path = c.dir.ablation_csv();
    if path.exists() {
        std::fs::remove_file(&path)?;
    }
    let n = c.cfg.ablation.trials;
    for k in 0..c.cfg.ablation.seeds {
        // Seed 0 reuses the main agents; later seeds train their own.
        let agent = |phase: u8, o: ObjectId| match k {
            0 => c.dir.agent(phase, o),
            _ => c.dir.ablation_agent(k, phase, o),
        };
        let static_dir = |o| agent(2, o);
        let random_dir = |o| agent(3, o);
        let subset = if k == 0 {
            c.records_of(&c.dir.phase_records(3))?
        } else {
            let seed = derive_seed(c.cfg.seed, &[tag("ablation-seed"), k as u64]);
            let recs_path = c.dir.ablation_records(k);
            if !recs_path.exists() {
                (c.log)(&format!("ablate: training seed {k}"));
                let input = c.records_of(&c.dir.phase_records(1))?;
                let io2 = PhaseIo { phase: 2, seed, agent_dir: &static_dir, warm_dir: None, csv: None };
                let (kept2, _) = rl_phase(c, &input, &io2)?;
                let io3 = PhaseIo {
                    phase: 3,
                    seed,
                    agent_dir: &random_dir,
                    warm_dir: c.cfg.rl.warm_start.then_some(&static_dir as &dyn Fn(ObjectId) -> std::path::PathBuf),
                    csv: None,
                };
                let (kept3, _) = rl_phase(c, &group(c.cfg, kept2), &io3)?;
                save_records(&recs_path, &kept3)?;
            }
            c.records_of(&recs_path)?
        };
        let statics = phase3_actors(&static_dir, &c.cfg.objects)?;
        let randoms = phase3_actors(&random_dir, &c.cfg.objects)?;
        for (&o, recs) in &subset {
            if recs.is_empty() {
                return Err(format!("seed {k}: no {o} records in the phase-3 subset").into());
            }
            let seed = c.seed(&[tag("ablate"), k as u64, tag(o.as_str())]);
            let arms: [(&str, &dyn ResidualPolicy); 3] =
                [("none", &ZeroResidual), ("static", &statics[&o]), ("random", &randoms[&o])];
            for (arm, policy) in arms {
                let rate = ablation_eval(&c.sim, recs, policy, n, seed)?;
                (c.log)(&format!("ablate seed {k} {o} {arm}: {rate:.3}"));
                append_csv(&path, &AblationCsvRow { seed: k, object: o.to_string(), arm: arm.into(), trials: n, success_rate: rate })?;
            }
        }
    }
    Ok(())
}

fn report_stage(c: &Ctx) -> Result<(), BoxError> {
    let r = build_report(&c.dir.root).map_err(|e| e.to_string())?;
    write_json(&c.dir.report_json(), &r)?;
    std::fs::write(c.dir.report_txt(), render_text(&r))?;
    Ok(())
}

fn execute(c: &Ctx, stage: Stage) -> Result<(), PipelineError> {
    let missing: Vec<Stage> =
        prerequisites(stage).iter().copied().filter(|s| !stage_complete(c.cfg, *s)).collect();
    if !missing.is_empty() {
        return Err(PipelineError::Missing(missing));
    }
    (c.log)(&format!("stage {stage}"));
    let started = Instant::now();
    let out = match stage {
        Stage::GenSeed => gen_seed(c),
        Stage::Preselect => preselect_stage(c),
        Stage::TrainRlStatic => train_rl_static(c),
        Stage::TrainRlRandom => train_rl_random(c),
        Stage::Record => record(c),
        Stage::Stats => stats(c),
        Stage::TrainDiffusion => train_diffusion(c),
        Stage::Eval => eval(c),
        Stage::Ablate => ablate(c),
        Stage::Report => report_stage(c),
    };
    out.map_err(|e| PipelineError::stage(stage, e))?;
    if stage != Stage::Report {
        c.dir.record_timing(stage, started.elapsed().as_secs_f64()).map_err(|e| PipelineError::stage(stage, e))?;
    }
    Ok(())
}

/// Runs a single stage, replacing its previous artifacts.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, log: &dyn Fn(&str)) -> Result<(), PipelineError> {
    cfg.validate()?;
    let c = Ctx::new(cfg, log)?;
    c.dir.init(cfg)?;
    let _lock = RunLock::acquire(&c.dir)?;
    execute(&c, stage)
}

/// Runs every stage whose artifacts are not already on disk, then the report.
pub fn run_pipeline(cfg: &PipelineConfig, log: &dyn Fn(&str)) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let c = Ctx::new(cfg, log)?;
    c.dir.init(cfg)?;
    let _lock = RunLock::acquire(&c.dir)?;
    let mut ran: Vec<Stage> = Vec::new();
    for stage in Stage::ALL {
        // A stage is current if its artifacts exist and none of its inputs changed.
        let stale_input = prerequisites(stage).iter().any(|p| ran.contains(p));
        if stage != Stage::Report && !stale_input && stage_complete(cfg, stage) {
            log(&format!("stage {stage}: already complete"));
            continue;
        }
        execute(&c, stage)?;
        ran.push(stage);
    }
    build_report(&c.dir.root)
}

/// Draws `n` validation poses for `object` from a run's pose statistics.
pub fn sample_poses(cfg: &PipelineConfig, object: ObjectId, n: usize, seed: u64) -> Result<Vec<Pose2>, PipelineError> {
    cfg.validate()?;
    let c = Ctx::new(cfg, &|_| {})?;
    if !stage_complete(cfg, Stage::Stats) {
        return Err(PipelineError::Missing(vec![Stage::Stats]));
    }
    let fail = |e: BoxError| PipelineError::stage(Stage::Stats, e);
    let bounds = c.bounds().map_err(fail)?;
    let b = &bounds.get(&object).ok_or_else(|| PipelineError::Config(format!("{object} is not part of this run")))?.bounds;
    let world = c.sim.world(object).map_err(|e| fail(e.into()))?;
    let mut rng = derived_rng(seed, &[tag("sample-poses"), tag(object.as_str())]);
    (0..n)
        .map(|_| sample_valid_pose(b, world, c.sim.protocol.open_hand, &mut rng, cfg.eval.max_tries).map_err(|e| fail(e.into())))
        .collect()
}

/// Sampling bounds for `object` from a finished stats stage in `run_dir`.
pub fn load_sampling_bounds(run_dir: &Path, object: ObjectId) -> Result<SamplingBounds, PipelineError> {
    let dir = RunDir::new(run_dir);
    if !dir.pose_stats().exists() {
        return Err(PipelineError::Missing(vec![Stage::Stats]));
    }
    let m: BTreeMap<ObjectId, ObjectBounds> = read_json(&dir.pose_stats()).map_err(|e| PipelineError::stage(Stage::Stats, e))?;
    m.get(&object)
        .map(|b| b.bounds.clone())
        .ok_or_else(|| PipelineError::Config(format!("{object} is not part of this run")))
}

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use graspforge::pipeline::{build_report, render_text, run_pipeline, run_stage, sample_poses, PipelineConfig, PipelineError, Stage};
use graspforge::sim::ObjectId;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "graspforge", version, about = "Grasp dataset enhancement and diffusion-policy training")]
struct Cli {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in config when no file is given: desk, full or smoke.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. `--set diffusion.iterations=2000`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pose {
    Static,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seed grasp dataset.
    GenSeed,
    /// Phase 1: keep grasps that hold under every gravity tilt.
    Preselect,
    /// Phase 2 (static pose) or Phase 3 (random pose) residual training.
    TrainRl {
        #[arg(long, value_enum)]
        pose: Pose,
    },
    /// Record the enhanced dataset with the Phase 3 agents.
    Record,
    /// Collect object-pose statistics and sampling bounds.
    Stats,
    /// Train the diffusion policies with periodic validation.
    TrainDiffusion,
    /// Print validation poses as JSON lines.
    SamplePoses {
        #[arg(long)]
        object: ObjectId,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Final evaluation of the diffusion policies.
    Eval,
    /// Untrained vs static-trained vs random-trained residuals.
    Ablate,
    /// Print the run report (read-only).
    Report {
        /// Print JSON instead of tables.
        #[arg(long)]
        json: bool,
    },
    /// Every stage that is not yet complete, then the report.
    Run,
    /// Print the resolved config as JSON.
    PrintConfig,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(p), _) => PipelineConfig::load(p)?,
        (None, Some(name)) => PipelineConfig::preset(name)?,
        (None, None) => {
            // Reuse the config stored in an existing run directory.
            let stored = cli.out.as_ref().map(|o| o.join("config.json")).filter(|p| p.exists());
            match stored {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::desk(),
            }
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.with_overrides(&cli.sets)
}

fn configure_threads() -> Result<(), PipelineError> {
    if let Ok(v) = std::env::var("GRASPFORGE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| PipelineError::Config(format!("GRASPFORGE_THREADS={v} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    Ok(())
}

fn print_timings(cfg: &PipelineConfig) -> Result<()> {
    let path = cfg.out_dir.join("timings.json");
    if !path.exists() {
        return Ok(());
    }
    let t: BTreeMap<String, f64> = serde_json::from_str(&std::fs::read_to_string(&path)?).context("timings.json")?;
    println!("\nWall-clock per stage");
    for s in Stage::ALL {
        if let Some(v) = t.get(s.name()) {
            println!("{:<16} {:>9.1} s", s.name(), v);
        }
    }
    Ok(())
}

fn execute(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    let started = Instant::now();
    let log = move |m: &str| eprintln!("[{:>7.1}s] {m}", started.elapsed().as_secs_f64());
    let stage = |s: Stage| -> Result<()> { Ok(run_stage(cfg, s, &log)?) };
    match &cli.command {
        Command::GenSeed => stage(Stage::GenSeed)?,
        Command::Preselect => stage(Stage::Preselect)?,
        Command::TrainRl { pose: Pose::Static } => stage(Stage::TrainRlStatic)?,
        Command::TrainRl { pose: Pose::Random } => stage(Stage::TrainRlRandom)?,
        Command::Record => stage(Stage::Record)?,
        Command::Stats => stage(Stage::Stats)?,
        Command::TrainDiffusion => stage(Stage::TrainDiffusion)?,
        Command::Eval => stage(Stage::Eval)?,
        Command::Ablate => stage(Stage::Ablate)?,
        Command::SamplePoses { object, count } => {
            for p in sample_poses(cfg, *object, *count, cfg.seed)? {
                println!("{}", serde_json::to_string(&p)?);
            }
        }
        Command::Report { json } => {
            let r = build_report(&cfg.out_dir)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{}", render_text(&r));
                print_timings(cfg)?;
            }
        }
        Command::Run => {
            let r = run_pipeline(cfg, &log)?;
            print!("{}", render_text(&r));
            print_timings(cfg)?;
        }
        Command::PrintConfig => println!("{}", serde_json::to_string_pretty(cfg)?),
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<PipelineError>() {
        Some(p) if p.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let prepared = configure_threads().and_then(|_| resolve_config(&cli));
    let cfg = match prepared {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match execute(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}


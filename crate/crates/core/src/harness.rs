//! Run orchestration shared by the command line and the acceptance suite:
//! training with periodic checkpoints, benchmark evaluation, log replay.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, score_episode, BenchmarkTable, EpisodeMetrics, EvalContext};
use crate::rl::{IterationReport, TrainStage, Trainer};
use crate::scenario::ScenarioKind;
use crate::sim::{read_episode_log, EpisodeLogHeader, StepRecord};

/// Relative output directories are resolved against this when it is set.
pub const OUTPUT_ROOT_ENV: &str = "SWARMNAV_OUTPUT_ROOT";

pub fn resolve_output_dir(dir: &str) -> PathBuf {
    let p = PathBuf::from(dir);
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p,
    }
}

impl Error {
    /// Process exit status: 2 configuration, 3 numerical divergence,
    /// 4 audit or log integrity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SimulationDiverged { .. } | Error::TrainingDiverged(_) | Error::NonFiniteActivation { .. } => 3,
            Error::Audit(_) | Error::Log(_) => 4,
            _ => 2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Stop once this many decisions have been taken in total. A cap only:
    /// the stage schedule still follows `ppo.total_steps`.
    pub max_steps: Option<u64>,
    /// Checkpoint every this many iterations; 0 disables periodic saves.
    pub checkpoint_every: u64,
    pub resume: Option<PathBuf>,
    /// Permit resuming under a different config digest (run branching).
    pub allow_config_change: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    /// Saved just before the first safety-guided iteration, if one ran.
    pub stage1_checkpoint: Option<PathBuf>,
    pub metrics_csv: PathBuf,
    pub reports: Vec<IterationReport>,
    pub global_step: u64,
}

fn write_resolved_config(config: &RunConfig, out: &Path) -> Result<()> {
    let text = format!("# config_digest={}\n{}", config.digest(), config.to_toml()?);
    fs::write(out.join("config.toml"), text)?;
    Ok(())
}

/// Trains under `config`, writing `metrics.csv`, `checkpoints/` and
/// `final.ckpt` below `out`.
pub fn train(config: &RunConfig, out: &Path, opts: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(out.join("checkpoints"))?;
    write_resolved_config(config, out)?;
    let digest = config.digest();
    let setup = config.train_setup();
    let mut trainer = match &opts.resume {
        Some(p) => Checkpoint::load(p)?.into_trainer(setup, &digest, opts.allow_config_change)?,
        None => Trainer::new(setup, config.seed)?,
    };
    let cap = opts.max_steps.unwrap_or(u64::MAX).min(config.ppo.total_steps);

    let metrics_csv = out.join("metrics.csv");
    let mut csv = if opts.resume.is_some() && metrics_csv.exists() {
        let mut f = BufWriter::new(OpenOptions::new().append(true).open(&metrics_csv)?);
        writeln!(f, "# resumed at global_step={} config_digest={digest}", trainer.global_step)?;
        f
    } else {
        let mut f = BufWriter::new(File::create(&metrics_csv)?);
        writeln!(f, "# config_digest={digest}")?;
        writeln!(f, "# seed={}", config.seed)?;
        writeln!(f, "# total_steps={} max_steps={}", config.ppo.total_steps, cap)?;
        writeln!(f, "{}", IterationReport::csv_header())?;
        f
    };

    let mut reports = Vec::new();
    let mut stage1_checkpoint = None;
    let started = std::time::Instant::now();
    while trainer.global_step < cap {
        if trainer.stage() == TrainStage::SafetyGuided && stage1_checkpoint.is_none() && reports.last().is_some_and(|r: &IterationReport| r.stage == TrainStage::NominalOnly) {
            let p = out.join("stage1.ckpt");
            Checkpoint::from_trainer(&trainer, &digest).save(&p)?;
            stage1_checkpoint = Some(p);
        }
        let backup = trainer.clone();
        let report = match trainer.iterate() {
            Ok(r) => r,
            Err(e) => {
                // keep the last finite state on disk for post-mortem
                Checkpoint::from_trainer(&backup, &digest).save(&out.join("diverged.ckpt"))?;
                return Err(e);
            }
        };
        writeln!(csv, "{}", report.csv_row())?;
        csv.flush()?;
        log::info!(
            "iter {} step {} {:?} return {:.3} success {:.3} dist {:.3} ({:.0} s)",
            report.iteration,
            report.global_step,
            report.stage,
            report.team_return,
            report.success_rate,
            report.mean_final_distance,
            started.elapsed().as_secs_f64()
        );
        reports.push(report);
        if opts.checkpoint_every > 0 && trainer.iteration % opts.checkpoint_every == 0 {
            let p = out.join("checkpoints").join(format!("iter_{:06}.ckpt", trainer.iteration));
            Checkpoint::from_trainer(&trainer, &digest).save(&p)?;
        }
    }
    let final_checkpoint = out.join("final.ckpt");
    Checkpoint::from_trainer(&trainer, &digest).save(&final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        stage1_checkpoint,
        metrics_csv,
        reports,
        global_step: trainer.global_step,
    })
}

#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub scenario: ScenarioKind,
    pub agents: Vec<usize>,
    pub comm_hz: Vec<f64>,
    pub write_logs: bool,
}

/// Runs the benchmark grid and writes `benchmark.csv` plus the long-format
/// `trials.csv` (and per-episode logs when requested) below `out`.
pub fn evaluate(config: &RunConfig, req: &EvalRequest, out: &Path) -> Result<BenchmarkTable> {
    config.validate()?;
    let ckpt = Checkpoint::load(&req.checkpoint)?;
    ckpt.check_policy(&config.policy)?;
    fs::create_dir_all(out)?;
    let digest = config.digest();
    let ctx = EvalContext {
        actor: &ckpt.actor,
        world: config.world(),
        scenario: &config.scenario,
        eval: &config.eval,
        config_digest: &digest,
    };
    let logs = out.join("logs");
    let table = run_benchmark(
        &ctx,
        req.scenario,
        &req.agents,
        &req.comm_hz,
        req.write_logs.then_some(logs.as_path()),
    )?;
    let mut text = format!("# checkpoint_digest={}\n", ckpt.config_digest);
    text.push_str(&table.to_csv());
    fs::write(out.join("benchmark.csv"), text)?;
    fs::write(out.join("trials.csv"), table.trials_csv(&config.eval.traversability_bins))?;
    Ok(table)
}

#[derive(Clone, Debug)]
pub struct ReplayOutcome {
    pub header: EpisodeLogHeader,
    pub records: Vec<StepRecord>,
    pub metrics: EpisodeMetrics,
    /// Whether a stored metrics file was found and compared.
    pub audited: bool,
}

/// Audits a JSONL episode log: checks the hash chain, recomputes metrics
/// and compares them with the `.metrics.json` sibling when present. With
/// `config`, the log's digest must match it.
pub fn replay(log: &Path, config: Option<&RunConfig>) -> Result<ReplayOutcome> {
    let file = File::open(log).map_err(|e| Error::Log(format!("cannot open {}: {e}", log.display())))?;
    let (header, records) = read_episode_log(BufReader::new(file))?;
    let eval_cfg = match config {
        Some(c) => {
            if c.digest() != header.config_digest {
                return Err(Error::Audit(format!(
                    "log was written under config {} but {} was supplied",
                    header.config_digest,
                    c.digest()
                )));
            }
            c.eval.clone()
        }
        None => Default::default(),
    };
    let metrics = score_episode(&records, &header.spec, &eval_cfg)?;
    let stored_path = log.with_extension("metrics.json");
    let audited = stored_path.exists();
    if audited {
        let stored: EpisodeMetrics = serde_json::from_str(&fs::read_to_string(&stored_path)?)?;
        if stored != metrics {
            return Err(Error::Audit(format!(
                "recomputed metrics differ from {}",
                stored_path.display()
            )));
        }
    }
    Ok(ReplayOutcome {
        header,
        records,
        metrics,
        audited,
    })
}

/// One row per (agent, tick): position, velocity and the reference goal.
pub fn trajectory_csv(header: &EpisodeLogHeader, records: &[StepRecord]) -> Result<String> {
    let trajs = header.spec.trajectories()?;
    let mut out = format!("# config_digest={}\n# seed={}\n", header.config_digest, header.seed);
    out.push_str("tick,time,agent,x,y,z,vx,vy,vz,goal_x,goal_y,goal_z\n");
    for r in records {
        for (i, a) in r.agents.iter().enumerate() {
            let g = trajs[i].evaluate(r.time).position;
            out.push_str(&format!(
                "{},{:.3},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
                r.tick,
                r.time,
                i,
                a.position[0],
                a.position[1],
                a.position[2],
                a.velocity[0],
                a.velocity[1],
                a.velocity[2],
                g[0],
                g[1],
                g[2]
            ));
        }
    }
    Ok(out)
}

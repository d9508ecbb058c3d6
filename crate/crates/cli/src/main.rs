use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swarmnav_core::config::{RunConfig, DEFAULT_CONFIG_TOML};
use swarmnav_core::eval::{attention_csv, attention_report};
use swarmnav_core::harness::{self, resolve_output_dir, EvalRequest, TrainOptions};
use swarmnav_core::scenario::{generate_scenario, ScenarioKind};
use swarmnav_core::{derive_seed, seeded_rng, Result};

#[derive(Parser)]
#[command(
    name = "swarmnav",
    version,
    about = "Decentralized multi-quadrotor navigation: training and evaluation",
    after_help = "Relative output directories are placed under $SWARMNAV_OUTPUT_ROOT when set.\nExit status: 0 ok, 2 configuration error, 3 numerical divergence, 4 audit failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML file, or `default` for the shipped defaults.
    #[arg(long, default_value = "default")]
    config: String,
    /// `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        if self.config == "default" {
            RunConfig::from_toml_with_overrides(DEFAULT_CONFIG_TOML, &self.overrides)
        } else {
            RunConfig::load(Path::new(&self.config), &self.overrides)
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Straight,
    Swap,
    Random,
}

impl From<Scenario> for ScenarioKind {
    fn from(s: Scenario) -> Self {
        match s {
            Scenario::Straight => ScenarioKind::StraightLine,
            Scenario::Swap => ScenarioKind::SwapGoal,
            Scenario::Random => ScenarioKind::TrainingRandom,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Two-stage PPO training.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Stop after this many decisions (a cap; the stage schedule is unchanged).
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, default_value_t = 50)]
        checkpoint_every: u64,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Resume under a different config (e.g. to branch a run).
        #[arg(long)]
        allow_config_change: bool,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<String>,
    },
    /// Benchmark a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config's eval scenario.
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        /// Comma-separated agent counts; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        agents: Vec<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Sweep the broadcast rate over the configured frequency axis.
        #[arg(long)]
        comm_sweep: bool,
        /// Write one JSONL log (plus metrics) per episode.
        #[arg(long)]
        logs: bool,
        #[arg(long)]
        out: Option<String>,
    },
    /// Audit an episode log and optionally export its trajectories.
    Replay {
        log: PathBuf,
        /// Config the log must have been produced under.
        #[arg(long)]
        config: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Trajectory CSV destination.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Print a generated episode as JSON.
    ScenarioGen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "straight")]
        scenario: Scenario,
        #[arg(long, default_value_t = 8)]
        agents: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-tick attention weights from an episode log.
    AttentionDump {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output_dir(cli: Option<&String>, config: &RunConfig) -> PathBuf {
    resolve_output_dir(cli.unwrap_or(&config.output_dir))
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            cfg,
            max_steps,
            checkpoint_every,
            resume,
            allow_config_change,
            out,
        } => {
            let config = cfg.load()?;
            let dir = output_dir(out.as_ref(), &config);
            let opts = TrainOptions {
                max_steps,
                checkpoint_every,
                resume,
                allow_config_change,
            };
            let o = harness::train(&config, &dir, &opts)?;
            println!(
                "trained to step {} in {} iterations; checkpoint {}",
                o.global_step,
                o.reports.len(),
                o.final_checkpoint.display()
            );
        }
        Command::Eval {
            cfg,
            checkpoint,
            scenario,
            agents,
            trials,
            comm_sweep,
            logs,
            out,
        } => {
            let mut config = cfg.load()?;
            if let Some(t) = trials {
                config.eval.trials = t;
            }
            let agents = if agents.is_empty() { config.eval.agent_counts.clone() } else { agents };
            let comm_hz = if comm_sweep {
                config.eval.comm_sweep_hz.clone()
            } else {
                vec![1.0 / config.sensing.comm_period]
            };
            config.validate()?;
            let req = EvalRequest {
                checkpoint,
                scenario: scenario.map(Into::into).unwrap_or(config.eval.scenario),
                agents,
                comm_hz,
                write_logs: logs,
            };
            let dir = output_dir(out.as_ref(), &config);
            let table = harness::evaluate(&config, &req, &dir)?;
            for r in &table.rows {
                println!(
                    "{:?} agents={} comm={}Hz quadrotor_success={:.3} overall={:.3} incomplete={:.3}",
                    r.scenario,
                    r.agents,
                    r.comm_hz,
                    r.quadrotor_success.mean,
                    r.overall_success.mean,
                    r.incomplete.mean
                );
            }
            println!("wrote {}", dir.join("benchmark.csv").display());
        }
        Command::Replay {
            log,
            config,
            overrides,
            export,
        } => {
            let config = match config {
                Some(c) => Some(
                    ConfigArgs {
                        config: c,
                        overrides,
                    }
                    .load()?,
                ),
                None => None,
            };
            let o = harness::replay(&log, config.as_ref())?;
            if let Some(p) = export.as_ref() {
                write_or_print(Some(p), &harness::trajectory_csv(&o.header, &o.records)?)?;
            }
            println!(
                "{}: {} ticks, quadrotor_success={:.3} overall={} ({})",
                log.display(),
                o.records.len(),
                o.metrics.quadrotor_success,
                o.metrics.overall_success,
                if o.audited { "matches stored metrics" } else { "no stored metrics to compare" }
            );
        }
        Command::ScenarioGen {
            cfg,
            scenario,
            agents,
            seed,
            out,
        } => {
            let config = cfg.load()?;
            let mut rng = seeded_rng(derive_seed(seed, 0));
            let spec = generate_scenario(scenario.into(), agents, &config.scenario, &mut rng)?;
            write_or_print(out.as_ref(), &(spec.to_json()? + "\n"))?;
        }
        Command::AttentionDump { log, out } => {
            let o = harness::replay(&log, None)?;
            write_or_print(out.as_ref(), &attention_csv(&attention_report(&o.records)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `sb2g`: run experiments, compare methods, replay traces, serve sessions.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sb2g_core::experiment::{compare, load_finals, parse_seeds, run_experiment, workers_from_env, ExperimentError};
use sb2g_core::session::{SessionConfig, SessionMode, DEFAULT_SESSION_BUDGET, DISCONNECT_GRACE};
use sb2g_core::sim::scenario::{generate_scenario, resolve_scenario, ScenarioTemplate};
use sb2g_core::{replay, Method, RunError, ScenarioError, Trace};
use sb2g_server::{Server, ServerError};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "sb2g", version, about = "Semantic belief behavior graph experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method over a range of seeds and write traces and CSVs.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        method: Method,
        /// Inclusive range `a..b`, or a single seed.
        #[arg(long, default_value = "1..5")]
        seeds: String,
        /// Simulated seconds; defaults to the scenario's budget.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; overrides SB2G_WORKERS.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Paired comparison of finished experiments over matched seeds.
    Compare {
        /// Output directories of `run`.
        #[arg(long = "in", num_args = 1.., required = true)]
        dirs: Vec<PathBuf>,
        /// Refuse to compare fewer than two seeds.
        #[arg(long)]
        strict: bool,
    },
    /// Re-run a trace and check it reproduces bit for bit.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Serve a live session over WebSocket.
    Serve {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "teleop")]
        mode: SessionMode,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value_t = DEFAULT_SESSION_BUDGET)]
        budget: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulated seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Where to write the session trace.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Place objects at random on a template's map.
    Generate {
        /// Template file; defaults to the bundled office template.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("replay diverged")]
    Diverged,
}

impl CliError {
    /// 2 for bad input, 1 for everything else.
    fn exit_code(&self) -> u8 {
        let validation = match self {
            CliError::Scenario(e) | CliError::Run(RunError::Scenario(e)) => !matches!(e, ScenarioError::Io { .. }),
            CliError::Experiment(e) => matches!(
                e,
                ExperimentError::Run(RunError::Scenario(_))
                    | ExperimentError::SeedRange(_)
                    | ExperimentError::Workers(_)
                    | ExperimentError::TooFewMethods(_)
                    | ExperimentError::MismatchedSeeds { .. }
                    | ExperimentError::TooFewSeeds(_)
            ),
            CliError::Server(ServerError::Speed(_)) => true,
            CliError::Invalid(_) => true,
            _ => false,
        };
        if validation {
            2
        } else {
            1
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sb2g: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            scenario,
            method,
            seeds,
            budget,
            out,
            workers,
        } => {
            let scenario = resolve_scenario(&scenario)?;
            let seeds = parse_seeds(&seeds)?;
            if let Some(b) = budget {
                if !(b.is_finite() && b > 0.0) {
                    return Err(CliError::Invalid(format!("budget must be > 0, got {b}")));
                }
            }
            let workers = match workers {
                Some(0) => return Err(CliError::Invalid("--workers must be >= 1".into())),
                Some(n) => Some(n),
                None => workers_from_env()?,
            };
            let result = run_experiment(&scenario, method, &seeds, budget, &out, workers)?;
            for (s, h) in result.runs.iter().zip(&result.hashes) {
                println!(
                    "{method} seed {}: inspected {}/{} completed {} in {:.1} s, reward-cost {:.1}, trace {}",
                    s.seed,
                    s.inspected,
                    s.targets,
                    s.completed,
                    s.duration,
                    s.reward_cost,
                    &h[..16]
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Compare { dirs, strict } => {
            let table = load_finals(&dirs)?;
            print!("{}", compare(&table, strict)?);
        }
        Command::Replay { trace } => {
            let t = Trace::load(&trace).map_err(RunError::from)?;
            let report = replay(&t)?;
            println!("original {}", report.original_hash);
            println!("replayed {}", report.replay_hash);
            if let Some(line) = report.first_mismatch {
                println!("first differing line: {line}");
            }
            for v in &report.violations {
                println!("tick {}: {}", v.tick, v.message);
            }
            if !report.identical() || !report.violations.is_empty() {
                return Err(CliError::Diverged);
            }
            println!("identical; {} transitions audited clean", t.events().count());
        }
        Command::Serve {
            scenario,
            mode,
            host,
            port,
            budget,
            seed,
            speed,
            trace_out,
        } => {
            let scenario = resolve_scenario(&scenario)?;
            if !(budget.is_finite() && budget > 0.0) {
                return Err(CliError::Invalid(format!("budget must be > 0, got {budget}")));
            }
            let config = SessionConfig {
                mode,
                seed,
                budget,
                disconnect_grace: DISCONNECT_GRACE,
            };
            let rt = tokio::runtime::Runtime::new().map_err(io(Path::new("tokio runtime")))?;
            let out = rt.block_on(async {
                let server = Server::bind((host.as_str(), port), &scenario, config, speed).await?;
                eprintln!("listening on ws://{}", server.local_addr().map_err(ServerError::from)?);
                server.run().await
            })?;
            let s = &out.summary;
            println!(
                "session ended ({:?}) at {:.1} s: inspected {}/{}, reward-cost {:.1}",
                out.reason, s.duration, s.inspected, s.targets, s.reward_cost
            );
            if let Some(path) = trace_out {
                std::fs::write(&path, &out.trace).map_err(io(&path))?;
                println!("trace {} ({})", path.display(), &out.hash[..16]);
            }
        }
        Command::Generate { template, seed, out } => {
            let template = match &template {
                Some(p) => ScenarioTemplate::load(p)?,
                None => ScenarioTemplate::bundled()?,
            };
            let json = generate_scenario(&template, seed)?.to_json();
            match out {
                Some(path) => std::fs::write(&path, json).map_err(io(&path))?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qnmarl_core::report::{self, load_checkpoint, load_config, plot_from, TrajectoryWriter, OUT_DIR_ENV};
use qnmarl_core::{Error, Trainer};

/// Hybrid quantum-planner / spiking-controller multi-agent training.
#[derive(Parser, Debug)]
#[command(name = "qnmarl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and write metrics, trajectories, world, checkpoint and plots.
    ///
    /// Any setting can be overridden with `--section.key=value`, for
    /// example `--train.episodes=10 --world.dims=[20,20,5]`.
    Run {
        /// TOML file with dotted keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the file and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
        /// List every key with its default and exit.
        #[arg(long)]
        list_keys: bool,
    },
    /// Re-simulate a training episode from a checkpoint.
    Replay {
        #[arg(long)]
        checkpoint: PathBuf,
        /// 1-based training episode.
        #[arg(long)]
        episode: usize,
        /// Write the replayed trajectories here as JSON lines instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the figures from an existing metrics.csv.
    Plot {
        #[arg(long)]
        from: PathBuf,
        /// Directory for the SVG files; defaults to the metrics file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Splits `--a.b=value` overrides from the arguments clap should see.
fn split_overrides(args: impl Iterator<Item = String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|rest| rest.split_once('=')) {
            Some((k, v)) if k.contains('.') => overrides.push((k.to_string(), v.to_string())),
            _ => plain.push(a),
        }
    }
    (plain, overrides)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let (plain, overrides) = split_overrides(std::env::args());
    let cli = match Cli::try_parse_from(plain) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if !overrides.is_empty() && !matches!(cli.command, Command::Run { .. }) {
        eprintln!("error: `--key=value` overrides only apply to `run`");
        return ExitCode::from(1);
    }
    match execute(cli.command, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn execute(command: Command, mut overrides: Vec<(String, String)>) -> qnmarl_core::Result<()> {
    match command {
        Command::Run { config, out, list_keys } => {
            if list_keys {
                for (k, v) in report::RunConfig::default_keys() {
                    println!("{k} = {v}");
                }
                return Ok(());
            }
            let mut layered = Vec::new();
            if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
                layered.push(("report.out_dir".to_string(), toml_string(&dir)));
            }
            layered.append(&mut overrides);
            if let Some(dir) = out {
                layered.push(("report.out_dir".to_string(), toml_string(&dir.to_string_lossy())));
            }
            let cfg = load_config(config.as_deref(), &layered)?;
            let summary = report::run(&cfg, |line| println!("{line}"))?;
            println!("completed {} episodes; artifacts in {}", summary.episodes, cfg.report.out_dir.display());
            Ok(())
        }
        Command::Replay { checkpoint, episode, out } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let trainer = Trainer::from_checkpoint(&ckpt)?;
            let replay = trainer.replay_episode(episode)?;
            let r = &replay.record;
            eprintln!(
                "episode {}: reward {:.4}, violations {}/{}, KL {:.4} nats, spike entropy {:.4} nats, coverage {:.3}",
                r.episode, r.mean_reward, r.violations, r.agent_steps, r.kl_nats, r.spike_entropy, r.coverage
            );
            match out {
                Some(path) => {
                    let mut w = TrajectoryWriter::create(&path)?;
                    replay.trajectories.iter().try_for_each(|t| w.write(t))?;
                    w.flush()
                }
                None => {
                    for t in &replay.trajectories {
                        println!("{}", report::trajectory_json(t)?);
                    }
                    Ok(())
                }
            }
        }
        Command::Plot { from, out } => {
            let dir = out.unwrap_or_else(|| from.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")));
            let written = plot_from(&from, &dir)?;
            if written.is_empty() {
                eprintln!("warning: {} has no rows; no plots written", from.display());
            }
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

/// Quotes a path as a TOML string literal for the override layer.
fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

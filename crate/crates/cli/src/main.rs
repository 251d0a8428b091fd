mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::GenData;
use crate::config::RunConfig;

/// Invalid configuration or arguments; exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Training, evaluation and ablation for triplet contrastive re-identification.
///
/// Configuration keys can be overridden with `--section.key=value`
/// (for example `--loss.enable_pcl=false`) or `--set key=value`.
#[derive(Parser)]
#[command(name = "tcrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root with train/, query/ and gallery/.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    GenData {
        #[arg(long, default_value_t = 20)]
        ids: usize,
        #[arg(long, default_value_t = 20)]
        per_id: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train an encoder; writes telemetry, the effective config and a checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on the query and gallery splits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = tcrl::pipeline::DEFAULT_MAX_RANK)]
        max_rank: usize,
    },
    /// Train and evaluate every loss-combination row for every seed.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated seeds, replacing `ablate.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Overlay CMC curves in an SVG.
    Plot {
        /// CMC CSV files as written by `eval`.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Legend labels in input order; defaults to the parent directory names.
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long, default_value = "cmc.svg")]
        out: PathBuf,
    },
}

fn run_config(run: &RunArgs, mut overrides: Vec<(String, String)>) -> Result<RunConfig> {
    for s in &run.set {
        let (k, v) = s.split_once('=').ok_or_else(|| ConfigError(format!("--set expects KEY=VALUE, got {s:?}")))?;
        overrides.push((k.to_string(), v.to_string()));
    }
    let mut cfg = RunConfig::load(run.config.as_deref(), &overrides)?;
    if let Some(d) = &run.data {
        cfg.data.dir = d.clone();
    }
    if let Some(o) = &run.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn dispatch(command: Command, overrides: Vec<(String, String)>) -> Result<()> {
    let takes_overrides = matches!(command, Command::Train { .. } | Command::Ablate { .. });
    if !takes_overrides && !overrides.is_empty() {
        return Err(ConfigError(format!("this command takes no config overrides: {overrides:?}")).into());
    }
    match command {
        Command::GenData { ids, per_id, height, width, seed, out } => {
            commands::gen_data(&GenData { ids, per_id, height, width, seed, out })
        }
        Command::Train { run, epochs, seed } => {
            let mut cfg = run_config(&run, overrides)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            commands::train(&cfg)
        }
        Command::Eval { checkpoint, data, out, max_rank } => {
            let out = match out {
                Some(o) => config::resolve_output(&o),
                None => checkpoint.parent().map(PathBuf::from).unwrap_or_default(),
            };
            let report = commands::eval(&checkpoint, &data, &out, max_rank)?;
            println!("mAP {:.4}  rank-1 {:.4}  rank-5 {:.4}", report.map, report.rank(1), report.rank(5));
            Ok(())
        }
        Command::Ablate { run, seeds } => {
            let mut cfg = run_config(&run, overrides)?;
            if let Some(s) = seeds {
                cfg.ablate.seeds = s;
            }
            commands::ablate(&cfg)
        }
        Command::Plot { inputs, labels, out } => {
            if !labels.is_empty() && labels.len() != inputs.len() {
                return Err(ConfigError(format!("{} labels for {} inputs", labels.len(), inputs.len())).into());
            }
            let curves = inputs
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let label = labels.get(i).cloned().unwrap_or_else(|| {
                        let dir = p.parent().and_then(|d| d.file_name());
                        dir.unwrap_or(p.as_os_str()).to_string_lossy().into_owned()
                    });
                    plot::read_cmc(p, label)
                })
                .collect::<Result<Vec<_>>>()?;
            let out = config::resolve_output(&out);
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&out, plot::render_svg(&curves))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = config::split_overrides(std::env::args().collect());
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    match dispatch(cli.command, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("configuration error:\n{e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

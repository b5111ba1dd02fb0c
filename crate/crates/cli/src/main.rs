//! Command-line entry point for training, compression and analysis runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use slimnet::harness::commands::{
    fold_command, gen_data_command, quantize_command, synth_command, ticket_search_command,
    train_command, tune_command, FoldSource, RunOutput,
};
use slimnet::harness::config::{output_dir, parse_override, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "slimnet", version, about = "Sparsify, quantize, share and tune small dense networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file with `key = value` lines and `[section]` headers.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set optim.lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random stream of the run.
    #[arg(long)]
    seed: u64,
    /// Print the run summary as JSON instead of a report.
    #[arg(long)]
    json: bool,
    /// Output directory. Defaults to `$SLIMNET_OUT/<command>` or `slimnet-out/<command>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on the configured task.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Search for a sparse trainable subnetwork.
    TicketSearch {
        #[command(flatten)]
        common: Common,
        /// cs, imp, iss, sequential-cs, supermask-cs or supermask-ss.
        #[arg(long)]
        method: Option<String>,
    },
    /// Learn per-weight precisions and quantize.
    Quantize {
        #[command(flatten)]
        common: Common,
        /// Weight of the bit-count penalty.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Group similar layers of a template-shared network and fold it.
    #[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "coeffs"])))]
    Fold {
        #[command(flatten)]
        common: Common,
        /// Checkpoint from `train --set model.shared=true`.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// CSV of layer coefficients: one row per template, one column per layer.
        #[arg(long, value_name = "FILE")]
        coeffs: Option<PathBuf>,
        /// Similarity threshold for grouping.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Tune learning rate and eps on a log grid.
    Tune {
        #[command(flatten)]
        common: Common,
        /// grid, random, gld or cgld.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Run an optimizer on the one-dimensional stochastic problem.
    Synth {
        #[command(flatten)]
        common: Common,
        /// adam, eps-adam, delayed-adam, amsgrad, sgd or avagrad.
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Generate a dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// grid, blobs or regression.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        /// Grid side length.
        #[arg(long)]
        size: Option<usize>,
        /// Largest shortest-path length between the two queries.
        #[arg(long)]
        distance: Option<usize>,
    },
}

fn push<T: ToString>(pairs: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        pairs.push((key.to_string(), v.to_string()));
    }
}

fn load_config(common: &Common, flags: Vec<(String, String)>) -> slimnet::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.seed = common.seed;
    cfg.apply(flags)?;
    let overrides = common
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<slimnet::Result<Vec<_>>>()?;
    cfg.apply(overrides)?;
    Ok(cfg)
}

fn finish(common: &Common, name: &str, output: RunOutput) -> slimnet::Result<()> {
    let dir = match &common.out {
        Some(p) => p.clone(),
        None => output_dir(None).join(name),
    };
    output.write(&dir)?;
    if common.json {
        println!("{}", serde_json::to_string(&output.summary)?);
    } else {
        print!("{}", output.report);
        println!("outputs written to {}", display(&dir));
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: Cli) -> slimnet::Result<()> {
    let mut flags = Vec::new();
    match cli.command {
        Command::Train { common, steps } => {
            push(&mut flags, "train.steps", steps);
            let cfg = load_config(&common, flags)?;
            finish(&common, "train", train_command(&cfg)?)
        }
        Command::TicketSearch { common, method } => {
            push(&mut flags, "sparsify.method", method);
            let cfg = load_config(&common, flags)?;
            finish(&common, "ticket-search", ticket_search_command(&cfg)?)
        }
        Command::Quantize { common, lambda } => {
            push(&mut flags, "quantize.lambda", lambda);
            let cfg = load_config(&common, flags)?;
            finish(&common, "quantize", quantize_command(&cfg)?)
        }
        Command::Fold {
            common,
            checkpoint,
            coeffs,
            tau,
        } => {
            push(&mut flags, "share.tau", tau);
            let cfg = load_config(&common, flags)?;
            let source = match (checkpoint, coeffs) {
                (Some(c), _) => FoldSource::Checkpoint(c),
                (None, Some(c)) => FoldSource::Coefficients(c),
                (None, None) => unreachable!("clap requires one source"),
            };
            finish(&common, "fold", fold_command(&cfg, &source)?)
        }
        Command::Tune { common, kind, budget } => {
            push(&mut flags, "tune.kind", kind);
            push(&mut flags, "tune.budget", budget);
            let cfg = load_config(&common, flags)?;
            finish(&common, "tune", tune_command(&cfg)?)
        }
        Command::Synth {
            common,
            optimizer,
            eps,
            lr,
            steps,
        } => {
            push(&mut flags, "synth.optimizer", optimizer);
            push(&mut flags, "synth.eps", eps);
            push(&mut flags, "synth.lr", lr);
            push(&mut flags, "synth.steps", steps);
            let cfg = load_config(&common, flags)?;
            finish(&common, "synth", synth_command(&cfg)?)
        }
        Command::GenData {
            common,
            kind,
            count,
            size,
            distance,
        } => {
            push(&mut flags, "task.kind", kind);
            push(&mut flags, "task.samples", count);
            push(&mut flags, "task.grid_size", size);
            push(&mut flags, "task.max_distance", distance);
            let cfg = load_config(&common, flags)?;
            finish(&common, "gen-data", gen_data_command(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

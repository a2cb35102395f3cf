use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lnms::commands::{cmd_eval, cmd_gen, cmd_report, cmd_sweep, cmd_train, EvalTarget};
use lnms::config::{RunConfig, Variant};
use lnms::LnmsError;

/// Learned non-maximum suppression on synthetic crowded scenes.
#[derive(Debug, Parser)]
#[command(name = "lnms", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.learning_rate=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training seed (initialisation and frame sampling).
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test JSONL datasets.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate GreedyNMS over a list of thresholds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network variant.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training split; omit together with --fresh.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generate a new scene every iteration.
        #[arg(long)]
        fresh: bool,
        /// S1, IoU+S1, IoU+S1_03 or IoU+S1_full.
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint or a GreedyNMS threshold.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "tau", required_unless_present = "tau")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collate result files into AR tables and a merged PR-curve CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Defaults to `<results>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Collate results produced under different configurations.
        #[arg(long)]
        force: bool,
    },
}

fn bad_flag(msg: String) -> LnmsError {
    LnmsError::Format {
        path: PathBuf::from("command line"),
        reason: msg,
    }
}

fn load(common: &Common) -> lnms::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (key, value) = kv.split_once('=').ok_or_else(|| bad_flag(format!("`--set {kv}`: expected KEY=VALUE")))?;
        cfg.set(key, value).map_err(bad_flag)?;
    }
    if let Some(seed) = common.seed {
        cfg.synth.seed = seed;
    }
    if let Some(seed) = common.train_seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = common.iterations {
        cfg.train.iterations = n;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> lnms::Result<()> {
    match cli.command {
        Command::Gen { common, out } => cmd_gen(&load(&common)?, &out),
        Command::Sweep {
            common,
            data,
            taus,
            out,
        } => {
            let mut cfg = load(&common)?;
            if let Some(taus) = taus {
                cfg.eval.sweep_taus = taus;
            }
            for s in cmd_sweep(&cfg, &data, &out)? {
                println!("{}\t{:.4}", s.label(), s.ar);
            }
            Ok(())
        }
        Command::Train {
            common,
            data,
            fresh,
            variant,
            out,
        } => {
            let mut cfg = load(&common)?;
            cfg.fresh_scenes |= fresh;
            let result = cmd_train(&cfg, variant, data.as_deref(), &out)?;
            println!("{}", result.checkpoint.display());
            Ok(())
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            tau,
            out,
        } => {
            let cfg = load(&common)?;
            let target = match (checkpoint, tau) {
                (Some(path), _) => EvalTarget::Checkpoint(path),
                (None, Some(tau)) => EvalTarget::Greedy(tau),
                (None, None) => unreachable!("clap requires one of --checkpoint/--tau"),
            };
            let s = cmd_eval(&cfg, &data, &target, &out)?;
            println!("{}\t{:.4}", s.label(), s.ar);
            Ok(())
        }
        Command::Report { results, out, force } => {
            let out = out.unwrap_or_else(|| results.join("report"));
            let report = cmd_report(&results, &out, force)?;
            print!("{}", report.table_md);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

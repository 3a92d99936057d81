//! `auxfer` — train a target-domain classifier with prototype-filtered
//! supervision imported from a label-noisy auxiliary domain.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use auxfer_core::error::Error;
use config::RunConfigFile;

#[derive(Parser)]
#[command(
    name = "auxfer",
    version,
    about = "Cross-domain classifier training with prototype-filtered auxiliary supervision",
    after_help = "Configuration precedence: CLI flags > AUXFER_* environment variables > \
                  --config file > built-in defaults. Environment overrides use '__' as the \
                  section separator, e.g. AUXFER_TRAIN__SEED=7."
)]
struct Cli {
    /// TOML run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all artifacts (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate dataset manifests (synthetic benchmark or image folders)
    /// plus the train/test split.
    GenData(GenDataArgs),
    /// Train a model and write history, diagnostics, and checkpoints.
    Train(TrainFlags),
    /// Evaluate a checkpoint on a dataset manifest.
    Eval(EvalArgs),
    /// Train/evaluate across a grid of one hyperparameter over several
    /// seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Override the synthetic generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Early-domain-alignment variant: adversarial, mkmmd, or off.
    #[arg(long)]
    eda: Option<String>,
    /// Disable the prototypical semantic alignment loss (beta = 0).
    #[arg(long)]
    no_psa: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    sigma_align: Option<f64>,
    #[arg(long)]
    sigma_clf: Option<f64>,
    /// Fraction of the target training set to use.
    #[arg(long)]
    target_fraction: Option<f64>,
    /// Treat every auxiliary consistency score as 1 (no filtering).
    #[arg(long)]
    force_eta_one: bool,
    /// Sets both the target and auxiliary mini-batch sizes.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Checkpoint every N epochs (0 = final only).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfigFile) {
        if let Some(v) = &self.eda {
            cfg.eda.variant = v.clone();
        }
        if self.no_psa {
            cfg.train.beta = 0.0;
        }
        if let Some(v) = self.alpha {
            cfg.train.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.train.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.train.gamma = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.total_epochs = v;
        }
        if let Some(v) = self.warmup {
            cfg.train.warmup_epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.sigma_align {
            cfg.train.sigma_align = v;
        }
        if let Some(v) = self.sigma_clf {
            cfg.train.sigma_clf = v;
        }
        if let Some(v) = self.target_fraction {
            cfg.train.target_fraction = v;
        }
        if self.force_eta_one {
            cfg.train.force_eta_one = true;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size_target = v;
            cfg.train.batch_size_aux = v;
        }
        if let Some(v) = self.checkpoint_every {
            cfg.train.checkpoint_every = v;
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Positive class index for binary metrics.
    #[arg(long)]
    positive_class: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Axis to sweep: sigma_align, sigma_clf, or target_fraction.
    #[arg(long)]
    axis: String,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Comma-separated seeds (one training run per grid point and seed).
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Parallel training jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    train: TrainFlags,
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) => ExitCode::from(2),
        Error::Data(_) => ExitCode::from(3),
        Error::Numeric { .. } | Error::Degenerate(_) => ExitCode::from(4),
        Error::Io(_) => ExitCode::from(1),
    }
}

fn run(cli: Cli) -> auxfer_core::Result<()> {
    let mut cfg = config::load_config(cli.config.as_deref(), std::env::vars())?;
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::GenData(args) => {
            if let Some(seed) = args.seed {
                cfg.data.synthetic.seed = seed;
            }
            commands::cmd_gen_data(&cfg)
        }
        Command::Train(flags) => {
            flags.apply(&mut cfg);
            commands::cmd_train(&cfg)
        }
        Command::Eval(args) => {
            if let Some(p) = args.positive_class {
                cfg.eval.positive_class = p;
            }
            commands::cmd_eval(&cfg, &args.checkpoint, &args.data)
        }
        Command::Sweep(args) => {
            args.train.apply(&mut cfg);
            commands::cmd_sweep(&cfg, &args.axis, &args.grid, &args.seeds, args.jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

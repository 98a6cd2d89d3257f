//! `pointloc` command-line driver.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Bad flags or configuration; exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

/// A check that ran but did not meet its tolerance; exit code 3.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for NumericFailure {}

#[derive(Parser, Debug)]
#[command(name = "pointloc", version, about = "6-DoF pose regression from LiDAR point clouds")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML file with run settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    /// full or tiny.
    #[arg(long)]
    model_scale: Option<String>,
    /// learned, forced_ones or disabled.
    #[arg(long)]
    attention: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic LiDAR dataset into --out.
    Synth {
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train on the train split of --data; writes checkpoints and loss.tsv.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Training checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split; writes report.txt and trajectory.txt.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
        /// train, val or test.
        #[arg(long)]
        split: Option<String>,
        /// mean or median.
        #[arg(long)]
        aggregate: Option<String>,
    },
    /// Print the pose of one cloud file as `tx ty tz qw qx qy qz`.
    Infer {
        cloud: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Compare backpropagated gradients with finite differences.
    Gradcheck {
        /// Model scale to check (tiny by default).
        #[arg(long)]
        scale: Option<String>,
        /// Coordinates probed per tensor.
        #[arg(long)]
        coords: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        attention: Option<String>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_model(cfg: &mut RunConfig, m: ModelFlags) {
    set(&mut cfg.model_scale, m.model_scale);
    set(&mut cfg.attention, m.attention);
}

enum Action {
    Synth,
    Train(Option<PathBuf>),
    Eval,
    Infer(PathBuf),
    Gradcheck,
}

/// Layers defaults, the config file and flags into one resolved config.
fn resolve(cli: Cli) -> anyhow::Result<(RunConfig, Action)> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    set(&mut cfg.seed, cli.common.seed);
    set(&mut cfg.out_dir, cli.common.out);
    let action = match cli.command {
        Command::Synth { frames } => {
            set(&mut cfg.frames, frames);
            Action::Synth
        }
        Command::Train {
            data,
            model,
            epochs,
            lr,
            batch_size,
            max_steps,
            checkpoint_every,
            resume,
        } => {
            set(&mut cfg.data_dir, data);
            apply_model(&mut cfg, model);
            set(&mut cfg.epochs, epochs);
            set(&mut cfg.lr, lr);
            set(&mut cfg.batch_size, batch_size);
            set(&mut cfg.max_steps, max_steps);
            set(&mut cfg.checkpoint_every, checkpoint_every);
            Action::Train(resume)
        }
        Command::Eval {
            data,
            checkpoint,
            model,
            split,
            aggregate,
        } => {
            set(&mut cfg.data_dir, data);
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            apply_model(&mut cfg, model);
            set(&mut cfg.split, split);
            set(&mut cfg.aggregate, aggregate);
            Action::Eval
        }
        Command::Infer {
            cloud,
            checkpoint,
            model,
        } => {
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            apply_model(&mut cfg, model);
            Action::Infer(cloud)
        }
        Command::Gradcheck {
            scale,
            coords,
            eps,
            attention,
        } => {
            set(&mut cfg.gradcheck_scale, scale);
            set(&mut cfg.gradcheck_coords, coords);
            set(&mut cfg.gradcheck_eps, eps);
            set(&mut cfg.attention, attention);
            Action::Gradcheck
        }
    };
    cfg.validate()?;
    Ok((cfg, action))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (cfg, action) = resolve(cli)?;
    eprint!("# resolved config\n{}", cfg.to_toml());
    match action {
        Action::Synth => commands::synth(&cfg),
        Action::Train(resume) => commands::train_cmd(&cfg, resume.as_deref()),
        Action::Eval => commands::eval_cmd(&cfg),
        Action::Infer(cloud) => commands::infer_cmd(&cfg, &cloud),
        Action::Gradcheck => commands::gradcheck_cmd(&cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        1
    } else if err.downcast_ref::<NumericFailure>().is_some()
        || err.chain().any(|e| e.downcast_ref::<pointloc::Error>().is_some_and(pointloc::Error::is_numeric))
    {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cxa_cli::commands;
use cxa_cli::config::RunConfig;
use cxa_core::gradcheck_suite::SuiteOptions;
use cxa_core::{ModalitySet, ModelKind};

#[derive(Parser)]
#[command(name = "cxa", version, about = "Egocentric trajectory forecasting with cascaded cross-attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with `world`, `model`, `train`, `data` and `eval` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory every output is written to.
    #[arg(long)]
    out: PathBuf,
    /// Override one configuration key, e.g. `--set train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test datasets.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint with its loss log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file, or a `generate` output directory.
        #[arg(long)]
        data: PathBuf,
        /// cxa, triple-lstm or lip-lstm.
        #[arg(long)]
        model: Option<ModelKind>,
        /// Modality set such as `y+p+s`.
        #[arg(long)]
        modalities: Option<ModalitySet>,
    },
    /// Evaluate a checkpoint on a test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and evaluate one model per modality combination.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// A `generate` output directory.
        #[arg(long)]
        data: PathBuf,
        /// Restrict the grid, e.g. `--rows y,y+p+s`.
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<ModalitySet>>,
    },
    /// Finite-difference gradient checks of every op and the tiny models.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Also run a fixture whose backward rule is wrong on purpose.
        #[arg(long)]
        corrupt: bool,
        /// Skip the recurrent baselines.
        #[arg(long)]
        no_baselines: bool,
        /// Step for the end-to-end checks instead of each model's default.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Export observed, true and predicted trajectories of one test sample.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

fn load(common: &Common, extra: Vec<String>) -> Result<RunConfig, ExitCode> {
    let mut overrides = common.overrides.clone();
    overrides.extend(extra);
    RunConfig::load(common.config.as_deref(), &overrides, common.seed).map_err(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

fn run(command: Command) -> Result<anyhow::Result<()>, ExitCode> {
    Ok(match command {
        Command::Generate { common } => {
            let config = load(&common, vec![])?;
            commands::generate(&config, &common.out)
        }
        Command::Train {
            common,
            data,
            model,
            modalities,
        } => {
            let mut extra = Vec::new();
            if let Some(kind) = model {
                extra.push(format!("model.kind={}", kind.name()));
            }
            if let Some(m) = modalities {
                extra.push(format!("model.modalities={m}"));
            }
            let config = load(&common, extra)?;
            commands::train_model(&config, &data, &common.out)
        }
        Command::Eval {
            common,
            checkpoint,
            data,
        } => {
            let config = load(&common, vec![])?;
            commands::eval(&config, &checkpoint, &data, &common.out)
        }
        Command::Ablate { common, data, rows } => {
            let config = load(&common, vec![])?;
            commands::ablate(&config, &data, rows, &common.out)
        }
        Command::Gradcheck {
            common,
            corrupt,
            no_baselines,
            step,
        } => {
            let config = load(&common, vec![])?;
            let options = SuiteOptions {
                corrupt,
                baselines: !no_baselines,
                model_step: step,
                ..SuiteOptions::default()
            };
            commands::gradcheck(&config, options, &common.out)
        }
        Command::Predict {
            common,
            checkpoint,
            data,
            index,
        } => {
            let config = load(&common, vec![])?;
            commands::predict(&config, &checkpoint, &data, index, &common.out)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Err(code) => code,
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

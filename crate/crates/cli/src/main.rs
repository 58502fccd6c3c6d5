//! `salm`: prepare splits, train both stages, classify, evaluate, run
//! baselines, generate synthetic data and project embeddings.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use commands::{BaselineMethod, Run, StageSel};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "salm", version, about = "Two-stage contrastive payload classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn start(&self, command: &str, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<Run> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        tweak(&mut config);
        Run::start(command, config, &self.config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset and write train/test split manifests.
    Prepare(ConfigArgs),
    /// Train stage 1, stage 2 or both.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
        /// Overrides the stage-1 epoch budget.
        #[arg(long)]
        stage1_epochs: Option<usize>,
        /// Overrides the stage-2 epoch budget.
        #[arg(long)]
        stage2_epochs: Option<usize>,
    },
    /// Classify payloads with a trained model and write JSONL predictions.
    Classify {
        #[command(flatten)]
        config: ConfigArgs,
        /// Payload records (JSON array or JSONL).
        #[arg(long)]
        input: PathBuf,
        /// Model directory; `<output_dir>/model` by default.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions on the test split and refresh the comparison table.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Predictions JSONL; the trained model is run on the test split when absent.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Method name used for the report.
        #[arg(long, default_value = commands::DESIGNATED_METHOD)]
        method: String,
    },
    /// Train and evaluate a comparison method.
    Baseline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        method: BaselineMethod,
        /// Overrides the kNN neighbour count.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Generate a synthetic dataset.
    #[command(subcommand)]
    Synthgen(SynthCommand),
    /// Project embeddings to 2-D with PCA.
    Project {
        #[command(flatten)]
        config: ConfigArgs,
        /// Embedding CSV; exported from the trained model when absent.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Export the whole dataset instead of the test split.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Deterministic template fixture.
    Template {
        #[arg(long, default_value_t = 200)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Restrict to these classes (comma separated).
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        /// `.jsonl` for the full corpus, `.json` for payload records.
        #[arg(long)]
        out: PathBuf,
    },
    /// Chat-completion generation; the credential is read from the environment.
    Llm {
        /// LLM client config (JSON).
        #[arg(long)]
        llm_config: Option<PathBuf>,
        #[arg(long)]
        class: String,
        #[arg(long = "ioc-file")]
        ioc_files: Vec<String>,
        #[arg(long, default_value_t = 250)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        prompts: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => commands::prepare(c.start("prepare", |_| {})?),
        Command::Train {
            config,
            stage,
            stage1_epochs,
            stage2_epochs,
        } => {
            let run = config.start("train", |c| {
                if let Some(e) = stage1_epochs {
                    c.stage1.epochs = e;
                }
                if let Some(e) = stage2_epochs {
                    c.stage2.epochs = e;
                }
            })?;
            let stage = match stage {
                StageArg::One => StageSel::One,
                StageArg::Two => StageSel::Two,
                StageArg::All => StageSel::Both,
            };
            commands::train(run, stage)
        }
        Command::Classify {
            config,
            input,
            model,
            out,
        } => commands::classify(config.start("classify", |_| {})?, &input, model.as_deref(), out.as_deref()),
        Command::Evaluate {
            config,
            predictions,
            method,
        } => commands::evaluate(config.start("evaluate", |_| {})?, predictions.as_deref(), &method),
        Command::Baseline { config, method, k } => {
            let run = config.start(&format!("baseline-{}", method.name()), |c| {
                if let Some(k) = k {
                    c.baselines.knn_k = k;
                }
            })?;
            commands::baseline(run, method)
        }
        Command::Project {
            config,
            embeddings,
            all,
        } => commands::project(config.start("project", |_| {})?, embeddings.as_deref(), all),
        Command::Synthgen(SynthCommand::Template {
            samples_per_class,
            seed,
            classes,
            out,
        }) => commands::synth_template(commands::TemplateArgs {
            samples_per_class,
            seed,
            classes: &classes,
            out: &out,
        }),
        Command::Synthgen(SynthCommand::Llm {
            llm_config,
            class,
            ioc_files,
            samples,
            prompts,
            out,
        }) => commands::synth_llm(commands::LlmArgs {
            config: llm_config.as_deref(),
            class: &class,
            ioc_files: &ioc_files,
            samples,
            prompts,
            out: &out,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

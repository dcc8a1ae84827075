mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use vadagent::config::RunConfig;
use vadagent::{BackendKind, Mode};

#[derive(Parser)]
#[command(
    name = "vadagent",
    version,
    about = "Training-free video anomaly detection with a multimodal model agent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or reuse) the anomaly knowledge base for a query.
    KbBuild {
        #[command(flatten)]
        common: CommonArgs,
        /// Query naming the anomaly categories, e.g. "Detect anomalies: fire, fighting".
        #[arg(long)]
        query: Option<String>,
    },
    /// Run detection over frame directories.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        query: Option<String>,
        /// Parallel videos. Cross-video memory forces one.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Frame directories (frame_%06d.jpg), or directories of them.
        #[arg(required = true)]
        videos: Vec<PathBuf>,
    },
    /// Score a run directory against ground-truth annotations.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory of `run`.
        run_dir: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Annotation format; guessed from the extension when omitted.
        #[arg(long, value_parser = ["csv", "ucf"])]
        format: Option<String>,
    },
    /// Print the reasoning and reflection chain of a run.
    Trace {
        /// A trace.jsonl file or a video's output directory.
        path: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Script file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Output directory [default: ./out; for eval, <RUN_DIR>/eval].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Offline,
    Online,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Scripted,
}

impl CommonArgs {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn load_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => {
                RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(mode) = self.mode {
            config.mode = match mode {
                ModeArg::Offline => Mode::Offline,
                ModeArg::Online => Mode::Online,
            };
        }
        if let Some(backend) = self.backend {
            config.backend.kind = match backend {
                BackendArg::Http => BackendKind::Http,
                BackendArg::Scripted => BackendKind::Scripted,
            };
        }
        if let Some(script) = &self.script {
            config.backend.script = Some(script.clone());
        }
        config.apply_env(|var| std::env::var(var).ok());
        Ok(config)
    }
}

/// How a command ended when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finish {
    Ok,
    Partial,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::KbBuild { common, query } => common
            .load_config()
            .and_then(|c| commands::kb_build(c, query, &common.out_or("out"))),
        Command::Run {
            common,
            query,
            workers,
            videos,
        } => common
            .load_config()
            .and_then(|c| commands::run(c, query, &videos, &common.out_or("out"), workers)),
        Command::Eval {
            common,
            run_dir,
            annotations,
            format,
        } => {
            let out = common.out.clone().unwrap_or_else(|| run_dir.join("eval"));
            common
                .load_config()
                .and_then(|c| commands::eval(&c, &run_dir, &annotations, format.as_deref(), &out))
        }
        Command::Trace { path } => commands::trace(&path),
    };
    match result {
        Ok(Finish::Ok) => ExitCode::SUCCESS,
        Ok(Finish::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

mod commands;
mod profiles;

use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use aims_core::data::PromptType;
use aims_core::Level;

#[derive(Parser)]
#[command(name = "aims", version, about = "Part / entity / relation segmentation with mask prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic corpus management.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Train a model on a corpus directory.
    Train {
        /// TOML file with `[model]` and `[train]` tables; the toy preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint path, rewritten every `checkpoint_every` steps and at the end.
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines metrics log; defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Federated evaluation on the eval splits.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        thresholds: Thresholds,
    },
    /// Segment one image; writes mask PNGs and manifest.json into `--out`.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Binary mask image (non-zero pixels are inside); needs `--level`.
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long, value_parser = parse_prompt_type)]
        prompt_type: Option<PromptType>,
        #[arg(long)]
        level: Option<Level>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        thresholds: Thresholds,
    },
    /// Re-run an exported drill-down session and compare every step.
    Replay {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        session: PathBuf,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Corpus whose images the API serves and accepts by reference.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Idle seconds before a session expires.
        #[arg(long, default_value_t = 3600)]
        session_ttl: u64,
        #[command(flatten)]
        thresholds: Thresholds,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Generate a corpus directory.
    Build {
        /// Profile file (TOML or JSON), or `standard` for the five built-in profiles.
        #[arg(long, default_value = "standard")]
        profiles: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenes per profile when the profile file gives no count.
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = aims_core::data::DEFAULT_EVAL_FRACTION)]
        eval_fraction: f64,
    },
}

#[derive(clap::Args, Clone, Copy, Default)]
struct Thresholds {
    /// Override the checkpoint's ness keep threshold.
    #[arg(long)]
    keep_threshold: Option<f64>,
    /// Override the checkpoint's association threshold.
    #[arg(long)]
    assoc_threshold: Option<f64>,
}

fn parse_prompt_type(s: &str) -> Result<PromptType, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown prompt type `{s}` (full_image, partial_image, one_entity, two_entities)"))
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Data { command: DataCommand::Build { profiles, out, seed, count, eval_fraction } } => {
            commands::data_build(&profiles, &out, seed, count, eval_fraction)
        }
        Command::Train { config, corpus, out, log } => commands::train(config.as_deref(), &corpus, &out, log),
        Command::Eval { ckpt, corpus, report, thresholds } => commands::eval(&ckpt, &corpus, &report, thresholds),
        Command::Infer { ckpt, image, prompt, prompt_type, level, out, thresholds } => {
            commands::infer(&ckpt, &image, prompt.as_deref(), prompt_type, level, &out, thresholds)
        }
        Command::Replay { ckpt, session } => commands::replay(&ckpt, &session),
        Command::Serve { ckpt, port, host, corpus, session_ttl, thresholds } => {
            commands::serve(ckpt.as_deref(), (host, port).into(), corpus.as_deref(), session_ttl, thresholds)
        }
    }
}

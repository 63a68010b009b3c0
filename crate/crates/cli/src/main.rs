//! `banquet`: dataset tooling, training, separation and evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use banquet::config::Config;
use banquet::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "banquet", version, about = "Query-conditioned music source separation")]
struct Cli {
    /// TOML configuration file; omitted sections use defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed for every seeded component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any configuration key, e.g. `--set train.lr=5e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Dataset root (also settable through BANQUET_DATA_ROOT).
    #[arg(long, global = true, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// Directory for manifests, queries, embeddings, runs and reports.
    #[arg(long, global = true, value_name = "DIR")]
    work_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic multitrack toy dataset into the data root.
    SynthData(SynthArgs),
    /// Index the data root into a manifest.
    Scan,
    /// Assign songs to genre-stratified folds.
    Split(SplitArgs),
    /// Cut the strongest-onset query excerpt of every stem.
    ExtractQueries(ExtractArgs),
    /// Embed extracted queries into the embedding store.
    EmbedQueries(EmbedArgs),
    /// Pretrain the encoder with one decoder head per VDBO stem.
    Pretrain(PretrainArgs),
    /// Train the query-conditioned separator.
    Train(TrainArgs),
    /// Separate one stem from a mixture given a query recording.
    Separate(SeparateArgs),
    /// Separate and score a split, writing fine and coarse reports.
    Evaluate(EvaluateArgs),
    /// Render a metric report as a quartile table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    songs: Option<usize>,
    #[arg(long, value_name = "SECONDS")]
    duration: Option<f64>,
    #[arg(long)]
    sample_rate: Option<u32>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long, value_name = "SECONDS")]
    window: Option<f64>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    backend: Option<String>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Output directory (default: <work-dir>/runs/pretrain).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Output directory (default: <work-dir>/runs/train).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Initialize the encoder from a pretraining checkpoint.
    #[arg(long, value_name = "CKPT", conflicts_with = "resume")]
    pretrained: Option<PathBuf>,
    /// Continue a previous run from its checkpoint.
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    roster: Option<String>,
    #[arg(long)]
    frozen_encoder: bool,
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    balanced: bool,
}

#[derive(Debug, Args)]
struct SeparateArgs {
    #[arg(long, value_name = "WAV")]
    mixture: PathBuf,
    #[arg(long, value_name = "WAV")]
    query: PathBuf,
    #[arg(long, value_name = "CKPT")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "WAV")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Model checkpoint; required unless a stub estimator is chosen.
    #[arg(long, value_name = "CKPT")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// `same-song` or `different-song`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    roster: Option<String>,
    /// Output directory (default: <work-dir>/reports/<split>-<policy>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// `model`, or the `oracle` / `zero` reference stubs.
    #[arg(long, default_value = "model")]
    estimator: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metric report JSON written by `evaluate`.
    #[arg(long, value_name = "JSON")]
    input: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    cfg.apply_env();
    cfg.apply_overrides(cli.overrides.iter().map(String::as_str))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(root) = &cli.data_root {
        cfg.paths.data_root = root.clone();
    }
    if let Some(dir) = &cli.work_dir {
        cfg.paths.work_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::SynthData(a) => commands::synth_data(cfg, a),
        Command::Scan => commands::scan(cfg.resolve()?),
        Command::Split(a) => {
            if let Some(k) = a.k {
                cfg.splits.k = k;
            }
            commands::split(cfg.resolve()?)
        }
        Command::ExtractQueries(a) => {
            if let Some(w) = a.window {
                cfg.query.window_secs = w;
            }
            commands::extract_queries(cfg.resolve()?)
        }
        Command::EmbedQueries(a) => {
            if let Some(b) = a.backend {
                cfg.query.backend = b;
            }
            commands::embed_queries(cfg.resolve()?)
        }
        Command::Pretrain(a) => {
            if let Some(e) = a.epochs {
                cfg.train.pretrain_epochs = e;
            }
            let out = a.out.unwrap_or_else(|| cfg.runs_dir().join("pretrain"));
            commands::pretrain(cfg.resolve()?, out)
        }
        Command::Train(a) => commands::train(cfg, a),
        Command::Separate(a) => commands::separate(cfg.resolve()?, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_max_level(tracing_subscriber::filter::LevelFilter::INFO)
        .init();
    match run(cli) {
        Ok(serde_json::Value::String(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = serde_json::json!({ "error": { "code": e.code(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}

//! `attn-topo` command-line tool.

mod commands;
mod labels;

use std::path::PathBuf;
use std::process::ExitCode;

use attn_topo::analysis::ConfidenceMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "attn-topo", version, about = "Topological features of attention maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract feature matrices, one per split, from a corpus manifest.
    Extract {
        manifest: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Grid-search a classifier on train features, selecting on IDD.
    Train {
        train: PathBuf,
        idd: PathBuf,
        /// Comma-separated inverse regularization strengths.
        #[arg(long, value_delimiter = ',')]
        c_grid: Option<Vec<f64>>,
        /// Comma-separated principal component counts.
        #[arg(long, value_delimiter = ',')]
        pc_grid: Option<Vec<usize>>,
        /// Permit component counts above 200.
        #[arg(long)]
        allow_large_pc: bool,
        /// Label sidecar for the train matrix (default: next to it).
        #[arg(long)]
        train_labels: Option<PathBuf>,
        #[arg(long)]
        idd_labels: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score a trained model on one split.
    Eval {
        model: PathBuf,
        split: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Per-layer attention and feature distances between two exports of the
    /// same corpus.
    Compare {
        manifest_a: PathBuf,
        manifest_b: PathBuf,
        /// Restrict to one split.
        #[arg(long)]
        split: Option<String>,
        /// One row per (layer, category) instead of per layer.
        #[arg(long)]
        per_category: bool,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Head importance grid, confidence ranking and per-sentence explanations.
    Heads {
        model: PathBuf,
        split: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        quantile: f64,
        /// Features listed per head and per explanation.
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long, value_enum, default_value_t = Confidence::AbsLogit)]
        confidence: Confidence,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct FeatureArgs {
    /// Comma-separated graph thresholds.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    novel_features: Toggle,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Confidence {
    AbsLogit,
    AbsContributions,
}

impl From<Confidence> for ConfidenceMode {
    fn from(c: Confidence) -> Self {
        match c {
            Confidence::AbsLogit => ConfidenceMode::AbsLogit,
            Confidence::AbsContributions => ConfidenceMode::AbsContributions,
        }
    }
}

impl FeatureArgs {
    fn config(&self) -> attn_topo::ExtractConfig {
        let mut cfg = attn_topo::ExtractConfig::default();
        if let Some(t) = &self.thresholds {
            cfg.thresholds = t.clone();
        }
        cfg.novel_features = matches!(self.novel_features, Toggle::On);
        cfg
    }
}

fn run(cli: Cli) -> attn_topo::Result<()> {
    let common = match &cli.command {
        Command::Extract { common, .. }
        | Command::Train { common, .. }
        | Command::Eval { common, .. }
        | Command::Compare { common, .. }
        | Command::Heads { common, .. } => common,
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(attn_topo::Error::InvalidConfig("--jobs must be positive".into()));
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    std::fs::create_dir_all(&common.out).map_err(|e| commands::io_err(&common.out, e))?;
    let out = &common.out;
    match &cli.command {
        Command::Extract { manifest, features, .. } => commands::extract(manifest, &features.config(), out),
        Command::Train {
            train,
            idd,
            c_grid,
            pc_grid,
            allow_large_pc,
            train_labels,
            idd_labels,
            ..
        } => {
            let mut opts = attn_topo::linear_model::GridOptions {
                allow_large_pc: *allow_large_pc,
                ..Default::default()
            };
            if let Some(c) = c_grid {
                opts.c_grid = c.clone();
            }
            if let Some(p) = pc_grid {
                opts.pc_grid = p.clone();
            }
            commands::train(train, idd, train_labels.as_deref(), idd_labels.as_deref(), &opts, out)
        }
        Command::Eval { model, split, labels, .. } => commands::eval(model, split, labels.as_deref(), out),
        Command::Compare {
            manifest_a,
            manifest_b,
            split,
            per_category,
            features,
            ..
        } => {
            let split = split.as_deref().map(str::parse).transpose()?;
            commands::compare(manifest_a, manifest_b, split, *per_category, &features.config(), out)
        }
        Command::Heads {
            model,
            split,
            labels,
            quantile,
            top_k,
            confidence,
            ..
        } => {
            let opts = attn_topo::analysis::HeadRoleOptions {
                quantile: *quantile,
                top_k: *top_k,
            };
            commands::heads(model, split, labels.as_deref(), opts, (*confidence).into(), out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ATTN_TOPO_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

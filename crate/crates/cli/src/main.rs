mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::PipelineConfig;
use error::{CliError, EXIT_USAGE};

/// Egocentric activity recognition from sparse optical flow.
#[derive(Debug, Parser)]
#[command(name = "egoflow", version)]
pub struct Cli {
    /// Settings file of `key = value` lines; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap (default: available cores).
    #[arg(long, global = true, env = "EGOFLOW_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grid LK flow between consecutive frames of a PGM directory or EGFR stream.
    ExtractFlow {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Native frame rate (PGM default 15; overrides an EGFR header).
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Cut flow sequences into 60-field volumes.
    BuildVolumes {
        /// EGFL input; repeat for several sequences.
        #[arg(long, required = true)]
        flow: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Class index given to every volume.
        #[arg(long)]
        label: Option<u32>,
        /// Append to an existing EGVD file instead of replacing it.
        #[arg(long)]
        append: bool,
    },
    /// 95th-percentile normalization stats of a volume set, as JSON.
    FitNorm {
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network from scratch.
    Train {
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stats from `fit-norm`; fitted on the training volumes otherwise.
        #[arg(long)]
        norm: Option<PathBuf>,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Per-volume class scores as JSON.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Class names; must match the model's class count.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Activity timeline of one sequence.
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the timeline as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        eta: Option<usize>,
    },
    /// Metrics JSON for a labeled volume set.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eta: Option<usize>,
    },
    /// Class-kernel affinity matrix as CSV.
    Affinity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = egoflow::analysis::DEFAULT_VOTE_DEPTH)]
        vote_depth: usize,
    },
    /// Render one C1 kernel's slice pairs as arrow fields.
    VisualizeKernels {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kernel: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Draw every n-th row and column of arrows.
        #[arg(long, default_value_t = 1)]
        sparsity: usize,
        /// Also write binary PPM images.
        #[arg(long)]
        ppm: bool,
    },
    /// Synthetic labeled volumes and their class names.
    Synth {
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 1300)]
        per_class: u32,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the class names (default: `<out>.labels`).
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ClassSet::Standard)]
        set: ClassSet,
        #[arg(long, default_value_t = 50)]
        blocks_per_sequence: u32,
        #[arg(long, default_value_t = egoflow::synthetic::DEFAULT_AMPLITUDE)]
        amplitude: f64,
        #[arg(long, default_value_t = egoflow::synthetic::DEFAULT_NOISE_RATIO)]
        noise_ratio: f64,
    },
    /// Retrain a model on new classes.
    Transfer {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TransferMode::LastLayer)]
        mode: TransferMode,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Print the effective settings.
    Config,
}

#[derive(Debug, Clone, Args)]
pub struct Hyper {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassSet {
    Standard,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransferMode {
    LastLayer,
    WarmStart,
}

fn settings(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let cfg = settings(&cli)?;
    commands::dispatch(cli.command, cfg)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code);
        }
    }
}

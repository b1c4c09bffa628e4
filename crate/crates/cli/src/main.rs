//! `p300`: offline P300 speller analysis from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use p300_core::model::Condition;
use p300_core::riemann::FeatureMode;
use p300_core::sim::ScheduleKind;

mod commands;
mod config;
mod error;
mod inputs;
mod plot;
mod run;

use commands::Ctx;
use config::RunConfig;
use error::{usage_msg, write_err, CliError, CliResult};
use run::{Manifest, RunDir};

#[derive(Debug, Parser)]
#[command(name = "p300", version, about = "Offline P300 speller analysis")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory to create (must not exist).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Keep only these conditions (PC, VR).
    #[arg(long, global = true, value_delimiter = ',')]
    conditions: Vec<Condition>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Recording files, or directories of recordings.
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter and decimate raw recordings.
    Preprocess(Inputs),
    /// Cut latency-corrected epochs and report counts and class averages.
    Epoch {
        #[command(flatten)]
        inputs: Inputs,
        /// Epoch length in seconds.
        #[arg(long)]
        window: Option<f64>,
    },
    /// Grand-average ERPs with standard-error bands and cluster overlay.
    Erp {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        permutations: Option<usize>,
    },
    /// Cluster permutation test between conditions.
    Stats {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        permutations: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        cluster_alpha: Option<f64>,
    },
    /// Fit spatial filter and MDM classifier per recording.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        /// Training blocks (default: all).
        #[arg(long, value_delimiter = ',')]
        blocks: Vec<u8>,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        feature_mode: Option<FeatureMode>,
    },
    /// Repeated random-split training curves.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_delimiter = ',')]
        repetitions: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
        /// Random training sets per fraction.
        #[arg(long)]
        sets: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        feature_mode: Option<FeatureMode>,
    },
    /// Generate a synthetic corpus.
    Simulate {
        #[arg(long)]
        subjects: Option<usize>,
        /// Signal-to-noise ratios (`inf` for noiseless).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr: Vec<f64>,
        #[arg(long)]
        schedule: Option<ScheduleKind>,
    },
    /// Summarise earlier run directories.
    Report {
        runs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess(_) => "preprocess",
            Command::Epoch { .. } => "epoch",
            Command::Erp { .. } => "erp",
            Command::Stats { .. } => "stats",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Simulate { .. } => "simulate",
            Command::Report { .. } => "report",
        }
    }

    fn inputs(&self) -> Option<&[PathBuf]> {
        match self {
            Command::Preprocess(i)
            | Command::Epoch { inputs: i, .. }
            | Command::Erp { inputs: i, .. }
            | Command::Stats { inputs: i, .. }
            | Command::Train { inputs: i, .. }
            | Command::Eval { inputs: i, .. } => Some(&i.inputs),
            Command::Simulate { .. } | Command::Report { .. } => None,
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.output_dir = cli.out.clone();
    }
    if !cli.conditions.is_empty() {
        cfg.conditions = cli.conditions.clone();
    }
    if let Some(inputs) = cli.command.inputs() {
        if !inputs.is_empty() {
            cfg.inputs = inputs.to_vec();
        }
    }
    match &cli.command {
        Command::Epoch { window, .. } => {
            if let Some(w) = window {
                cfg.classifier.window_seconds = *w;
            }
        }
        Command::Erp {
            channels,
            window,
            permutations,
            ..
        } => {
            if !channels.is_empty() {
                cfg.erp.channels = channels.clone();
            }
            if let Some(w) = window {
                cfg.erp.window_seconds = *w;
            }
            if let Some(n) = permutations {
                cfg.permutation.n_permutations = *n;
            }
        }
        Command::Stats {
            window,
            permutations,
            alpha,
            cluster_alpha,
            ..
        } => {
            if let Some(w) = window {
                cfg.erp.window_seconds = *w;
            }
            if let Some(n) = permutations {
                cfg.permutation.n_permutations = *n;
            }
            if let Some(a) = alpha {
                cfg.permutation.alpha = *a;
            }
            if let Some(a) = cluster_alpha {
                cfg.permutation.cluster_alpha = *a;
            }
        }
        Command::Train {
            components,
            feature_mode,
            ..
        } => {
            if let Some(c) = components {
                cfg.classifier.n_components = *c;
            }
            if let Some(m) = feature_mode {
                cfg.classifier.feature_mode = *m;
            }
        }
        Command::Eval {
            repetitions,
            fractions,
            sets,
            components,
            feature_mode,
            ..
        } => {
            if !repetitions.is_empty() {
                cfg.cv.repetitions = repetitions.clone();
            }
            if !fractions.is_empty() {
                cfg.cv.fractions = fractions.clone();
            }
            if let Some(s) = sets {
                cfg.cv.n_random_sets = *s;
            }
            if let Some(c) = components {
                cfg.classifier.n_components = *c;
            }
            if let Some(m) = feature_mode {
                cfg.classifier.feature_mode = *m;
            }
        }
        Command::Simulate {
            subjects,
            snr,
            schedule,
        } => {
            if let Some(n) = subjects {
                cfg.simulate.n_subjects = *n;
            }
            if !snr.is_empty() {
                cfg.simulate.snr = snr.clone();
            }
            if let Some(s) = schedule {
                cfg.simulate.schedule = *s;
            }
        }
        Command::Preprocess(_) | Command::Report { .. } => {}
    }
}

fn execute(cli: &Cli) -> CliResult<PathBuf> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, cli);
    cfg.validate()?;
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| usage_msg("no output directory (--out or `output_dir` in the config)"))?;
    let paths = match cli.command.inputs() {
        Some(_) => inputs::resolve(&cfg.inputs)?,
        None => Vec::new(),
    };
    let mut input_digests = Vec::new();
    for p in &paths {
        input_digests.extend(inputs::digests(p)?);
    }
    if let Some(seed) = cfg.seed {
        log::info!("seed {seed}");
    }

    let run_dir = RunDir::create(&out)?;
    let mut ctx = Ctx {
        cfg: &cfg,
        run: &run_dir,
        inputs: input_digests,
    };
    match &cli.command {
        Command::Preprocess(_) => commands::preprocess::run(&mut ctx, &paths),
        Command::Epoch { .. } => commands::epoch::run(&mut ctx, &paths),
        Command::Erp { .. } => commands::erp::run(&mut ctx, &paths),
        Command::Stats { .. } => commands::stats::run(&mut ctx, &paths),
        Command::Train { blocks, .. } => commands::train::run(&mut ctx, &paths, blocks),
        Command::Eval { .. } => commands::eval::run(&mut ctx, &paths),
        Command::Simulate { .. } => commands::simulate::run(&mut ctx),
        Command::Report { runs } => commands::report::run(&mut ctx, runs),
    }?;
    let manifest = Manifest {
        tool: "p300",
        version: env!("CARGO_PKG_VERSION"),
        core_version: p300_core::VERSION,
        command: cli.command.name().to_string(),
        seed: cfg.seed,
        config: serde_json::to_value(&cfg).map_err(write_err)?,
        inputs: ctx.inputs,
        outputs: Vec::new(),
    };
    run_dir.finish(manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let result = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(|| execute(&cli)),
        Err(e) => Err(CliError::compute(e)),
    };
    match result {
        Ok(dir) => {
            log::info!("wrote {}", dir.display());
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

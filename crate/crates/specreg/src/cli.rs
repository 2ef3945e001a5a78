//! Command-line driver: `train`, `analyze`, `gen-data`.
//!
//! Exit codes (mapped in main): 0 success, 1 runtime failure, 2 config
//! error.

use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::analyze::{self, MetricsRecord};
use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, DataSource, RunConfig};
use crate::data::{self, Dataset, Split};
use crate::nn::{Network, Tensor};
use crate::optim::{self, TrainerState};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "specreg", version, about = "Spectral norm regularization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write metrics.csv plus checkpoints.
    Train {
        /// Path to a key=value config file.
        #[arg(long)]
        config: PathBuf,
        /// Override config keys, e.g. --set epochs=10 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop cleanly once this many epochs have completed (for the
        /// interruption/resume harness).
        #[arg(long, hide = true)]
        stop_after_epoch: Option<usize>,
    },
    /// Compute a measurement from a checkpoint; CSV on standard output.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
    /// Generate a synthetic dataset pair as native .ds files.
    GenData {
        /// Path to a key=value synthetic spec file.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for train.ds and test.ds.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Checkpoint to analyze.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Native .ds dataset (required for data-dependent analyses).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Accuracy threshold for the generalization gap.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// metrics.csv from training (required for `gap`).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCmd {
    /// Exact singular-value spectrum of every weight matrix.
    Spectrum(AnalyzeArgs),
    /// Mean input-gradient norm over a dataset.
    Sensitivity(AnalyzeArgs),
    /// Dominant Hessian eigenvalue via finite-difference HVPs.
    Hessian(AnalyzeArgs),
    /// Generalization gap at threshold alpha from a metrics CSV.
    Gap(AnalyzeArgs),
    /// Perturbation-ratio probe against the layer product bound.
    Lipschitz(AnalyzeArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            set,
            resume,
            stop_after_epoch,
        } => cmd_train(&config, &set, resume.as_deref(), stop_after_epoch),
        Command::Analyze { what } => cmd_analyze(what),
        Command::GenData { spec, out } => cmd_gen_data(&spec, &out),
    }
}

/// Deterministic network construction from (arch, input_shape, seed).
pub fn build_network(arch: &str, input_shape: &[usize], seed: u64) -> Result<Network> {
    let layers = config::parse_arch(arch, input_shape)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x494e_4954_u64);
    Network::new(layers, input_shape.to_vec(), &mut rng)
}

/// Loads (train, test) per the configured source, applying GCN if set.
pub fn load_splits(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &cfg.data {
        DataSource::Synthetic(spec) => data::generate_synthetic(spec)?,
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            num_classes,
        } => {
            let tr = data::dataset_from_idx(
                &data::idx::read_idx(train_images)?,
                &data::idx::read_idx(train_labels)?,
                *num_classes,
                Split::Train,
            )?;
            let te = data::dataset_from_idx(
                &data::idx::read_idx(test_images)?,
                &data::idx::read_idx(test_labels)?,
                *num_classes,
                Split::Test,
            )?;
            (tr, te)
        }
        DataSource::Native { train, test } => {
            (checkpoint::load_dataset(train)?, checkpoint::load_dataset(test)?)
        }
    };
    if cfg.gcn {
        Ok((
            data::global_contrast_normalize(&train, 1e-8)?,
            data::global_contrast_normalize(&test, 1e-8)?,
        ))
    } else {
        Ok((train, test))
    }
}

fn cmd_train(
    config_path: &Path,
    set: &[String],
    resume: Option<&Path>,
    stop_after_epoch: Option<usize>,
) -> Result<()> {
    let text = std::fs::read_to_string(config_path)?;
    let overrides: Vec<(String, String)> = set
        .iter()
        .map(|s| config::parse_override(s))
        .collect::<Result<_>>()?;
    let cfg = RunConfig::from_text(&text, &overrides)?;

    let (train, test) = load_splits(&cfg)?;
    let input_dim: usize = cfg.input_shape.iter().product();
    if input_dim != train.sample_len() {
        return Err(Error::Config(format!(
            "architecture input dim {input_dim} does not match dataset feature dim {}",
            train.sample_len()
        )));
    }

    let mut net = build_network(&cfg.arch, &cfg.input_shape, cfg.train.seed)?;
    let mut state = match resume {
        Some(path) => {
            let ck = checkpoint::load_checkpoint(path)?;
            if ck.arch != cfg.arch {
                return Err(Error::Checkpoint(format!(
                    "checkpoint architecture '{}' does not match config architecture '{}'",
                    ck.arch, cfg.arch
                )));
            }
            ck.restore(&mut net)?
        }
        None => TrainerState::new(&net, cfg.train.seed),
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    let ck_path = cfg.out_dir.join("checkpoint.bin");
    // A resumed run appends to the interrupted run's CSV so the combined
    // file matches an uninterrupted run byte for byte.
    let append = resume.is_some() && metrics_path.exists();
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&metrics_path)?;
    if !append {
        writeln!(metrics_file, "{METRICS_HEADER}")?;
    }

    let arch = cfg.arch.clone();
    let input_shape = cfg.input_shape.clone();
    let seed = cfg.train.seed;
    let checkpoint_every = cfg.checkpoint_every;
    let total_epochs = cfg.train.epochs;
    let mut hook = |epoch: usize,
                    net: &Network,
                    state: &TrainerState,
                    record: Option<&MetricsRecord>|
     -> Result<ControlFlow<()>> {
        if let Some(rec) = record {
            writeln!(metrics_file, "{}", render_record(rec))?;
            metrics_file.flush()?;
        }
        let stop = stop_after_epoch.is_some_and(|n| epoch + 1 >= n);
        let final_epoch = epoch + 1 == total_epochs;
        let scheduled = checkpoint_every > 0 && (epoch + 1) % checkpoint_every == 0;
        if scheduled || final_epoch || stop {
            checkpoint::save_checkpoint(&ck_path, &arch, &input_shape, seed, net, state)?;
        }
        Ok(if stop {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        })
    };
    optim::run_training(&mut net, &train, &test, &cfg.train, &mut state, Some(&mut hook))?;
    Ok(())
}

fn cmd_analyze(cmd: AnalyzeCmd) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cmd {
        AnalyzeCmd::Spectrum(args) => {
            let (net, _) = load_network(&args.checkpoint)?;
            writeln!(out, "layer,singular_values")?;
            for (name, sigmas) in analyze::singular_spectrum(&net)? {
                let vals: Vec<String> = sigmas.iter().map(|s| s.to_string()).collect();
                writeln!(out, "{name},{}", vals.join(","))?;
            }
        }
        AnalyzeCmd::Sensitivity(args) => {
            let (net, _) = load_network(&args.checkpoint)?;
            let ds = require_data(&args)?;
            writeln!(out, "input_grad_norm")?;
            writeln!(out, "{}", analyze::input_grad_norm(&net, &ds)?)?;
        }
        AnalyzeCmd::Hessian(args) => {
            let (net, ck) = load_network(&args.checkpoint)?;
            let ds = require_data(&args)?;
            let eig =
                analyze::hessian_max_eig(&net, &ds, 50, analyze::default_fd_step(&net), ck.seed)?;
            writeln!(out, "hessian_max_eig")?;
            writeln!(out, "{eig}")?;
        }
        AnalyzeCmd::Gap(args) => {
            // the checkpoint is opened to validate it, keeping the
            // command surface uniform
            load_network(&args.checkpoint)?;
            let metrics_path = args
                .metrics
                .as_ref()
                .ok_or_else(|| Error::Config("gap requires --metrics <metrics.csv>".into()))?;
            let alpha = args
                .alpha
                .ok_or_else(|| Error::Config("gap requires --alpha <threshold>".into()))?;
            let records = read_metrics(metrics_path)?;
            writeln!(out, "alpha,gap,status")?;
            match analyze::generalization_gap(&records, alpha) {
                Some(gap) => writeln!(out, "{alpha},{gap},ok")?,
                None => writeln!(out, "{alpha},,undefined")?,
            }
        }
        AnalyzeCmd::Lipschitz(args) => {
            let (net, ck) = load_network(&args.checkpoint)?;
            let ds = require_data(&args)?;
            let x = Tensor::new(ds.feature_shape.clone(), ds.sample(0).to_vec())?;
            let probe = analyze::lipschitz_probe(&net, &x, 200, 1e-3, ck.seed)?;
            writeln!(out, "empirical_max_ratio,sigma_product")?;
            writeln!(out, "{},{}", probe.empirical_max_ratio, probe.sigma_product)?;
        }
    }
    Ok(())
}

fn load_network(path: &Path) -> Result<(Network, Checkpoint)> {
    let ck = checkpoint::load_checkpoint(path)?;
    let mut net = build_network(&ck.arch, &ck.input_shape, ck.seed)?;
    ck.restore(&mut net)?;
    Ok((net, ck))
}

fn require_data(args: &AnalyzeArgs) -> Result<Dataset> {
    let path = args
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("this analysis requires --data <file.ds>".into()))?;
    checkpoint::load_dataset(path)
}

fn cmd_gen_data(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec = config::synthetic_spec_from_text(&text)?;
    let (train, test) = data::generate_synthetic(&spec)?;
    std::fs::create_dir_all(out_dir)?;
    checkpoint::save_dataset(&out_dir.join("train.ds"), &train)?;
    checkpoint::save_dataset(&out_dir.join("test.ds"), &test)?;
    Ok(())
}

pub const METRICS_HEADER: &str = "epoch,train_loss,test_loss,train_acc,test_acc,grad_norm_train,grad_norm_test,penalty,per_layer_sigma";

/// One CSV row; floats use Rust's shortest round-trip rendering, the
/// per-layer sigmas are ';'-joined inside the last field.
pub fn render_record(rec: &MetricsRecord) -> String {
    let sigmas: Vec<String> = rec.per_layer_sigma.iter().map(|s| s.to_string()).collect();
    format!(
        "{},{},{},{},{},{},{},{},{}",
        rec.epoch,
        rec.train_loss,
        rec.test_loss,
        rec.train_acc,
        rec.test_acc,
        rec.grad_norm_train,
        rec.grad_norm_test,
        rec.penalty,
        sigmas.join(";")
    )
}

/// Parses a metrics CSV written by `train`.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "{} does not start with the metrics header (got {other:?})",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Config(format!(
                "metrics row {}: expected 9 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Config(format!("metrics row {}: bad number '{s}'", i + 2)))
        };
        records.push(MetricsRecord {
            epoch: fields[0]
                .parse()
                .map_err(|_| Error::Config(format!("metrics row {}: bad epoch", i + 2)))?,
            train_loss: num(fields[1])?,
            test_loss: num(fields[2])?,
            train_acc: num(fields[3])?,
            test_acc: num(fields[4])?,
            grad_norm_train: num(fields[5])?,
            grad_norm_test: num(fields[6])?,
            penalty: num(fields[7])?,
            per_layer_sigma: if fields[8].is_empty() {
                vec![]
            } else {
                fields[8].split(';').map(num).collect::<Result<_>>()?
            },
        });
    }
    Ok(records)
}

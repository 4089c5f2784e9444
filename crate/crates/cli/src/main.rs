use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hsicd_core::change::{AdReduction, DifferenceOperator};
use hsicd_core::io::SceneSpec;
use hsicd_core::pipeline::{self, MseSource, RankOptions, RunConfig};
use hsicd_core::stats::{DEFAULT_NU, DEFAULT_Q_CRITICAL};

/// Unsupervised hyperspectral change detection with a feature-fusion
/// convolutional autoencoder.
#[derive(Debug, Parser)]
#[command(name = "hsicd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the autoencoder on an image pair.
    Train(RunArgs),
    /// Produce a change map from a trained checkpoint.
    Detect {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `checkpoint.ffcae` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a change map against ground truth.
    Evaluate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long = "ground-truth", alias = "gt")]
        ground_truth: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Rank methods from a score table and run the Tukey comparison.
    Rank {
        /// CSV with columns method,dataset,metric,value.
        #[arg(long)]
        scores: PathBuf,
        /// Samples per group; defaults to the number of metrics.
        #[arg(long)]
        n: Option<usize>,
        /// `auto` or a number.
        #[arg(long, default_value = "auto", value_parser = parse_mse)]
        mse: MseSource,
        #[arg(long, default_value_t = DEFAULT_NU)]
        nu: f64,
        #[arg(long = "q-critical", default_value_t = DEFAULT_Q_CRITICAL)]
        q_critical: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write a synthetic image pair with a planted change region.
    Synth {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        bands: usize,
        #[arg(long = "change-fraction", default_value_t = 0.15, value_parser = parse_fraction)]
        change_fraction: f64,
        #[arg(long = "noise-sigma", default_value_t = 0.02)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON or TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image1: Option<PathBuf>,
    #[arg(long)]
    image2: Option<PathBuf>,
    /// Overrides both the training and the clustering seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    operator: Option<Operator>,
    #[arg(long = "ad-reduction")]
    ad_reduction: Option<Reduction>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Operator {
    Ad,
    Sam,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Reduction {
    Vector,
    Norm,
}

fn parse_mse(s: &str) -> Result<MseSource, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(MseSource::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(MseSource::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("{v} is outside (0, 1)")),
        Err(e) => Err(e.to_string()),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match (&self.config, &self.image1, &self.image2) {
            (Some(path), _, _) => {
                RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?
            }
            (None, Some(a), Some(b)) => RunConfig::new(a, b, "out"),
            _ => bail!("either --config or both --image1 and --image2 are required"),
        };
        if self.config.is_some() {
            if let Some(a) = &self.image1 {
                config.image1 = a.clone();
            }
            if let Some(b) = &self.image2 {
                config.image2 = b.clone();
            }
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.ffcae.seed = seed;
        }
        if let Some(op) = self.operator {
            config.difference_operator = match op {
                Operator::Ad => DifferenceOperator::Ad,
                Operator::Sam => DifferenceOperator::Sam,
            };
        }
        if let Some(r) = self.ad_reduction {
            config.ad_reduction = match r {
                Reduction::Vector => AdReduction::Vector,
                Reduction::Norm => AdReduction::Norm,
            };
        }
        if let Some(epochs) = self.epochs {
            config.ffcae.epochs = epochs;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        Ok(config)
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("FFCAE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("FFCAE_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let outcome = pipeline::run_train(&config)?;
            if let Some(last) = outcome.history.epochs.last() {
                println!(
                    "trained {} epochs on {} bands; final loss {:.6} / {:.6}",
                    outcome.history.epochs.len(),
                    outcome.kept_bands.len(),
                    last.image1,
                    last.image2
                );
            }
            println!("checkpoint: {}", outcome.checkpoint.display());
        }
        Command::Detect { run, checkpoint } => {
            let config = run.resolve()?;
            let checkpoint = checkpoint.unwrap_or_else(|| config.checkpoint_path());
            let outcome = pipeline::run_detect(&config, &checkpoint)?;
            println!(
                "{} of {} feature maps kept; {} changed pixels",
                outcome.selection.kept().len(),
                outcome.selection.entropies.len(),
                outcome.map.changed_count()
            );
            println!(
                "change map: {}",
                config.output_dir.join(pipeline::CHANGE_MAP_FILE).display()
            );
        }
        Command::Evaluate { map, ground_truth, out } => {
            let eval = pipeline::run_evaluate(&map, &ground_truth, &out)?;
            print!("{}", eval.metrics.to_csv());
        }
        Command::Rank {
            scores,
            n,
            mse,
            nu,
            q_critical,
            out,
        } => {
            let options = RankOptions { n, mse, nu, q_critical };
            let outcome = pipeline::run_rank(&scores, &options, &out)?;
            print!("{}", outcome.ranks.to_csv());
            print!("{}", outcome.tukey.significance_report());
        }
        Command::Synth {
            height,
            width,
            bands,
            change_fraction,
            noise_sigma,
            seed,
            out,
        } => {
            let spec = SceneSpec {
                height,
                width,
                bands,
                change_fraction,
                noise_sigma,
                seed,
            };
            pipeline::run_synth(&spec, &out)?;
            println!("wrote synthetic pair to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

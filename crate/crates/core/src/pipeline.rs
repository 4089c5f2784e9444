//! File-level orchestration: synthesize, train, detect, evaluate, rank.
//!
//! Every function computes its results fully before writing, and every file
//! is written atomically.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::change::{detect_changes, select_feature_maps, AdReduction, DifferenceOperator, FeatureSelection};
use crate::error::{Error, Result};
use crate::ffcae::{extract_dfm, train, FfcaeConfig, FfcaeModel, LossHistory};
use crate::io::{
    load_cube, load_ground_truth, load_pgm, save_cube, save_pgm, synthesize_pair, write_atomic, ChangeMap, HyperCube,
    SceneSpec,
};
use crate::metrics::{compute_metrics, confusion, ConfusionMatrix, MetricReport};
use crate::stats::{mse_from_ranks, rank_methods, tukey_hsd, ErrorTerm, RankTable, ScoreCube, TukeyResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.ffcae";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHANGE_MAP_FILE: &str = "change_map.pgm";
pub const CHANNELS_FILE: &str = "selected_channels.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const RANKS_FILE: &str = "ranks.csv";
pub const TUKEY_FILE: &str = "tukey_q.csv";
pub const SIGNIFICANCE_FILE: &str = "significance.txt";
pub const IMAGE1_FILE: &str = "image1.json";
pub const IMAGE2_FILE: &str = "image2.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.pgm";

/// One pipeline run, read from a JSON or TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub image1: PathBuf,
    pub image2: PathBuf,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub ffcae: FfcaeConfig,
    #[serde(default = "default_operator")]
    pub difference_operator: DifferenceOperator,
    #[serde(default)]
    pub ad_reduction: AdReduction,
    /// Seeds the k-means decision.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_operator() -> DifferenceOperator {
    DifferenceOperator::Ad
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(image1: impl Into<PathBuf>, image2: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            image1: image1.into(),
            image2: image2.into(),
            ground_truth: None,
            ffcae: FfcaeConfig::default(),
            difference_operator: DifferenceOperator::Ad,
            ad_reduction: AdReduction::Vector,
            seed: 0,
            output_dir: output_dir.into(),
        }
    }

    /// Parses a `.toml` or JSON config; relative paths resolve against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.image1);
        resolve(&mut config.image2);
        resolve(&mut config.output_dir);
        if let Some(gt) = config.ground_truth.as_mut() {
            resolve(gt);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.ffcae.validate()?;
        for p in [&self.image1, &self.image2].into_iter().chain(self.ground_truth.as_ref()) {
            if !p.exists() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join(CHECKPOINT_FILE)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_input_cube(path: &Path) -> Result<HyperCube> {
    load_cube(path).map_err(|e| e.in_file(path))
}

/// Loads both images, checks they match, and drops bands that are constant
/// in both. Returns the reduced pair and the kept band indices.
pub fn load_pair(image1: &Path, image2: &Path) -> Result<(HyperCube, HyperCube, Vec<usize>)> {
    let a = load_input_cube(image1)?;
    let b = load_input_cube(image2)?;
    prepare_pair(&a, &b).map_err(|e| e.in_file(image2))
}

pub fn prepare_pair(a: &HyperCube, b: &HyperCube) -> Result<(HyperCube, HyperCube, Vec<usize>)> {
    if !a.same_dimensions(b) {
        return Err(Error::Dimensions(format!(
            "image pair differs: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.bands(),
            b.height(),
            b.width(),
            b.bands()
        )));
    }
    let kept: Vec<usize> = (0..a.bands())
        .filter(|&k| !(a.is_constant_band(k) && b.is_constant_band(k)))
        .collect();
    if kept.is_empty() {
        return Err(Error::NoInformativeBands);
    }
    Ok((a.select_bands(&kept)?, b.select_bands(&kept)?, kept))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FfcaeModel,
    pub history: LossHistory,
    pub kept_bands: Vec<usize>,
    pub checkpoint: PathBuf,
}

pub fn run_train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (a, b, kept_bands) = load_pair(&config.image1, &config.image2)?;
    let (model, history) = train(&a, &b, &config.ffcae)?;
    let bytes = model.to_checkpoint_bytes()?;

    ensure_dir(&config.output_dir)?;
    let checkpoint = config.checkpoint_path();
    write_atomic(&checkpoint, &bytes)?;
    write_atomic(&config.output_dir.join(LOSS_FILE), history.to_csv().as_bytes())?;
    Ok(TrainOutcome {
        model,
        history,
        kept_bands,
        checkpoint,
    })
}

#[derive(Debug, Clone)]
pub struct DetectOutcome {
    pub map: ChangeMap,
    pub selection: FeatureSelection,
    pub timings: Vec<(&'static str, f64)>,
}

/// Runs feature extraction, selection, differencing and the decision with an
/// in-memory model.
pub fn detect_with_model(
    model: &FfcaeModel,
    image1: &HyperCube,
    image2: &HyperCube,
    operator: DifferenceOperator,
    reduction: AdReduction,
    seed: u64,
) -> Result<DetectOutcome> {
    if image1.bands() != model.bands() {
        return Err(Error::Shape(format!(
            "checkpoint expects {} bands, images have {}",
            model.bands(),
            image1.bands()
        )));
    }
    let mut timings = Vec::new();
    let t = Instant::now();
    let (dfm1, dfm2) = extract_dfm(model, image1, image2)?;
    timings.push(("extract_features", t.elapsed().as_secs_f64()));
    let t = Instant::now();
    let selection = select_feature_maps(&dfm1, &dfm2)?;
    timings.push(("select_features", t.elapsed().as_secs_f64()));
    let t = Instant::now();
    let (map, _) = detect_changes(&selection, operator, reduction, seed)?;
    timings.push(("difference_and_cluster", t.elapsed().as_secs_f64()));
    Ok(DetectOutcome {
        map,
        selection,
        timings,
    })
}

pub fn run_detect(config: &RunConfig, checkpoint: &Path) -> Result<DetectOutcome> {
    config.validate()?;
    let start = Instant::now();
    let model = FfcaeModel::load(checkpoint).map_err(|e| e.in_file(checkpoint))?;
    let (a, b, _) = load_pair(&config.image1, &config.image2)?;
    let mut outcome = detect_with_model(
        &model,
        &a,
        &b,
        config.difference_operator,
        config.ad_reduction,
        config.seed,
    )
    .map_err(|e| e.in_file(checkpoint))?;
    outcome.timings.push(("total", start.elapsed().as_secs_f64()));

    let mut timing_csv = String::from("stage,seconds\n");
    for (stage, secs) in &outcome.timings {
        timing_csv.push_str(&format!("{stage},{secs:.6}\n"));
    }
    ensure_dir(&config.output_dir)?;
    save_pgm(&outcome.map, config.output_dir.join(CHANGE_MAP_FILE))?;
    write_atomic(&config.output_dir.join(CHANNELS_FILE), outcome.selection.to_csv().as_bytes())?;
    write_atomic(&config.output_dir.join(TIMING_FILE), timing_csv.as_bytes())?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
}

pub fn evaluate_maps(map: &ChangeMap, gt: &ChangeMap) -> Result<Evaluation> {
    let cm = confusion(map, gt)?;
    Ok(Evaluation {
        confusion: cm,
        metrics: compute_metrics(&cm)?,
    })
}

pub fn run_evaluate(map_path: &Path, gt_path: &Path, output_dir: &Path) -> Result<Evaluation> {
    let map = load_pgm(map_path).map_err(|e| e.in_file(map_path))?;
    let gt = load_ground_truth(gt_path, Some((map.height(), map.width()))).map_err(|e| e.in_file(gt_path))?;
    let eval = evaluate_maps(&map, &gt)?;
    let json = serde_json::to_string_pretty(&eval)? + "\n";
    ensure_dir(output_dir)?;
    write_atomic(&output_dir.join(METRICS_CSV_FILE), eval.metrics.to_csv().as_bytes())?;
    write_atomic(&output_dir.join(METRICS_JSON_FILE), json.as_bytes())?;
    Ok(eval)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MseSource {
    /// Estimate from the rank table's error sum of squares.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOptions {
    /// Samples per group; defaults to the number of metrics.
    pub n: Option<usize>,
    pub mse: MseSource,
    pub nu: f64,
    pub q_critical: f64,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            n: None,
            mse: MseSource::Auto,
            nu: crate::stats::DEFAULT_NU,
            q_critical: crate::stats::DEFAULT_Q_CRITICAL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankOutcome {
    pub ranks: RankTable,
    pub error_term: Option<ErrorTerm>,
    pub tukey: TukeyResult,
}

pub fn rank_cube(cube: &ScoreCube, options: &RankOptions) -> Result<RankOutcome> {
    let ranks = rank_methods(cube)?;
    let (mse, error_term) = match options.mse {
        MseSource::Fixed(v) => (v, None),
        MseSource::Auto => {
            let e = mse_from_ranks(&ranks, options.nu)?;
            (e.mse, Some(e))
        }
    };
    let n = options.n.unwrap_or(ranks.metrics().len());
    let tukey = tukey_hsd(&ranks, n, mse, options.q_critical)?;
    Ok(RankOutcome {
        ranks,
        error_term,
        tukey,
    })
}

pub fn run_rank(scores: &Path, options: &RankOptions, output_dir: &Path) -> Result<RankOutcome> {
    let text = std::fs::read_to_string(scores).map_err(|e| Error::io(scores, e))?;
    let cube = ScoreCube::from_csv(&text).map_err(|e| e.in_file(scores))?;
    let outcome = rank_cube(&cube, options)?;
    let mut report = String::new();
    if let Some(e) = &outcome.error_term {
        report.push_str(&format!("SSE = {:.4}, nu = {}, MSE = {:.4}\n", e.sse, e.nu, e.mse));
    }
    report.push_str(&outcome.tukey.significance_report());
    ensure_dir(output_dir)?;
    write_atomic(&output_dir.join(RANKS_FILE), outcome.ranks.to_csv().as_bytes())?;
    write_atomic(&output_dir.join(TUKEY_FILE), outcome.tukey.to_csv().as_bytes())?;
    write_atomic(&output_dir.join(SIGNIFICANCE_FILE), report.as_bytes())?;
    Ok(outcome)
}

/// Writes `image1.json`, `image2.json` (with `.raw` payloads) and
/// `ground_truth.pgm` into `output_dir`.
pub fn run_synth(spec: &SceneSpec, output_dir: &Path) -> Result<()> {
    let pair = synthesize_pair(spec)?;
    ensure_dir(output_dir)?;
    save_cube(&pair.image1, output_dir.join(IMAGE1_FILE))?;
    save_cube(&pair.image2, output_dir.join(IMAGE2_FILE))?;
    save_pgm(&pair.ground_truth, output_dir.join(GROUND_TRUTH_FILE))?;
    Ok(())
}

//! Command-line front end: `fairlens extract|distance|fit|fairness|train|report`.

pub mod config;
pub mod formats;

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::color::{load_image, load_mask, skin_distribution};
use crate::distance::distance_table;
use crate::distribution::{summary_features, SkinDistribution};
use crate::error::Error;
use crate::estimator::{batch_targets, make_batches, select_and_fit, EvalRecord, MetricKind};
use crate::fairness::{
    binary_demographic_parity, binary_equal_opportunity, binary_equalized_odds, distance_performance_correlation,
};
use crate::mitigation::LossConfig;
use crate::trainer::{
    continuous_reports, generate_synthetic, prepare, run_two_phase, seeded_rng, Architecture, BaselineChoice,
    Correlation, DeskModel, EstimatorSettings, FairnessEntry, FeatureScaler, LabeledSample, TrainConfig,
};
use config::{ArchitectureName, ConfigError, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

// Matches the trainer's baseline stream so both commands pick alike.
const BASELINE_STREAM: u64 = 2;
const CURVE_POINTS: usize = 101;

#[derive(Debug, Parser)]
#[command(name = "fairlens", version, about = "Skin-tone distribution fairness analysis")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed (falls back to the config file, then FAIRLENS_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn image/mask pairs into ITA distribution files.
    Extract(ExtractArgs),
    /// Signed Wasserstein distance of every distribution from a baseline.
    Distance(DistanceArgs),
    /// Fit performance estimators on evaluation records.
    Fit(FitArgs),
    /// Fairness metrics and distance/performance correlation.
    Fairness(FairnessArgs),
    /// Prior training, estimator fit and penalized posterior training.
    Train(TrainArgs),
    /// Summarise a training run or emit histogram plot data.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of PNG/JPEG images.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Directory of masks named like the images; non-zero pixels are skin.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Output directory for distribution files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    /// Directory of distribution files.
    #[arg(long)]
    pub distributions: Option<PathBuf>,
    /// Baseline sample id; drawn with the run seed when absent.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecordInputs {
    /// Evaluation records CSV (`sample_id,score,label[,predicted][,distance]`).
    #[arg(long)]
    pub records: PathBuf,
    /// Distances CSV joined on `sample_id`; required if records lack distances.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// Share of records per batch.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub inputs: RecordInputs,
    /// Metrics to fit (default: f1 and accuracy).
    #[arg(long = "metric")]
    pub metrics: Vec<MetricKind>,
    #[arg(long)]
    pub degree_min: Option<usize>,
    #[arg(long)]
    pub degree_max: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FairnessArgs {
    #[command(flatten)]
    pub inputs: RecordInputs,
    /// Fitted estimator; its predictions are added to the batch table.
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    /// `sample_id,group` CSV for the binary metrics.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    /// Output JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train on a synthetic dataset (default spec unless the config has one).
    #[arg(long)]
    pub synthetic: bool,
    /// Label-noise slope across the tone range.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Synthetic dataset size.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub distributions: Option<PathBuf>,
    /// `sample_id,label` CSV for the distribution files.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, value_enum)]
    pub architecture: Option<ArchitectureName>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Last epoch trained with plain cross-entropy.
    #[arg(long)]
    pub penalty_start: Option<usize>,
    #[arg(long)]
    pub penalty_weight: Option<f64>,
    /// Start posterior training from the prior weights.
    #[arg(long)]
    pub warm_start: bool,
    /// Also write every sample's distribution file.
    #[arg(long)]
    pub write_distributions: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Distribution directory for histogram export.
    #[arg(long)]
    pub distributions: Option<PathBuf>,
    #[arg(long, default_value_t = 36)]
    pub bins: usize,
    /// Histogram CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {source}")]
    Data {
        stage: &'static str,
        #[source]
        source: Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Data { .. } => EXIT_DATA,
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for crate::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Data { stage, source })
    }
}

/// Successful outcome; `partial` carries a note when some inputs were skipped.
#[derive(Debug, Default)]
pub struct Outcome {
    pub partial: Option<String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (including the program name) and runs the command, returning
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(Outcome { partial: None }) => EXIT_OK,
        Ok(Outcome { partial: Some(note) }) => {
            eprintln!("fairlens: partial success: {note}");
            EXIT_PARTIAL
        }
        Err(e) => {
            eprintln!("fairlens: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = cfg.resolve_seed(cli.seed)?;
    match &cli.command {
        Command::Extract(a) => cmd_extract(&cfg, a),
        Command::Distance(a) => cmd_distance(&cfg, a, seed),
        Command::Fit(a) => cmd_fit(&cfg, a),
        Command::Fairness(a) => cmd_fairness(&cfg, a),
        Command::Train(a) => cmd_train(&cfg, a, seed),
        Command::Report(a) => cmd_report(a),
    }
}

fn require(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| cfg.clone())
        .ok_or_else(|| usage(format!("missing `{name}` (flag or config)")))
}

fn output_dir(flag: &Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    require(flag, &cfg.output, "out")
}

fn files_with_ext(dir: &Path, exts: &[&str]) -> crate::Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)));
        if ok && p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn cmd_extract(cfg: &PipelineConfig, a: &ExtractArgs) -> Result<Outcome, CliError> {
    let images = require(&a.images, &cfg.data.images, "images")?;
    let masks = require(&a.masks, &cfg.data.masks, "masks")?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.data.distributions.clone())
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| usage("missing `out` (flag or config)"))?;

    let image_files = files_with_ext(&images, &["png", "jpg", "jpeg"]).stage("listing images")?;
    if image_files.is_empty() {
        return Err(CliError::Data {
            stage: "listing images",
            source: Error::EmptyInput("image directory"),
        });
    }
    let mask_files: HashMap<String, PathBuf> = files_with_ext(&masks, &["png"])
        .stage("listing masks")?
        .into_iter()
        .map(|p| (stem(&p), p))
        .collect();

    let results: Vec<Result<usize, String>> = image_files
        .par_iter()
        .map(|img_path| {
            let id = stem(img_path);
            let mask_path = mask_files
                .get(&id)
                .ok_or_else(|| format!("{id}: no mask with a matching name"))?;
            let run = || -> crate::Result<usize> {
                let img = load_image(img_path)?;
                let mask = load_mask(mask_path)?;
                let d = skin_distribution(&img, &mask, id.clone())?;
                formats::write_distribution(&out.join(format!("{id}.csv")), &d)?;
                Ok(d.len())
            };
            run().map_err(|e| format!("{id}: {e}"))
        })
        .collect();

    let mut written = 0;
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(_) => written += 1,
            Err(msg) => {
                log::warn!("skipped {msg}");
                skipped.push(msg);
            }
        }
    }
    println!(
        "extracted {written} of {} images into {} ({} skipped)",
        image_files.len(),
        out.display(),
        skipped.len()
    );
    if written == 0 {
        return Err(CliError::Data {
            stage: "extract",
            source: Error::Precondition(format!("no distribution produced: {}", skipped.join("; "))),
        });
    }
    Ok(Outcome {
        partial: (!skipped.is_empty()).then(|| format!("{} images skipped", skipped.len())),
    })
}

fn load_distributions(dir: &Path) -> crate::Result<Vec<SkinDistribution>> {
    let files = files_with_ext(dir, &["csv"])?;
    if files.is_empty() {
        return Err(Error::EmptyInput("distribution directory"));
    }
    files.par_iter().map(|p| formats::read_distribution(p)).collect()
}

fn pick_baseline(ids: &[&str], explicit: Option<&String>, seed: u64) -> String {
    match explicit {
        Some(id) => id.clone(),
        None => ids[seeded_rng(seed, BASELINE_STREAM).random_range(0..ids.len())].to_owned(),
    }
}

pub fn cmd_distance(cfg: &PipelineConfig, a: &DistanceArgs, seed: u64) -> Result<Outcome, CliError> {
    let dir = require(&a.distributions, &cfg.data.distributions, "distributions")?;
    let out = match (&a.out, &cfg.output) {
        (Some(p), _) => p.clone(),
        (None, Some(o)) => o.join("distances.csv"),
        (None, None) => return Err(usage("missing `out` (flag or config)")),
    };
    let dists = load_distributions(&dir).stage("reading distributions")?;
    let ids: Vec<&str> = dists.iter().map(|d| d.source_id()).collect();
    let base = pick_baseline(&ids, a.baseline.as_ref().or(cfg.baseline.id.as_ref()), seed);
    let rows = distance_table(&base, &dists).stage("distance")?;
    formats::write_distances(&out, &rows).stage("writing distances")?;
    println!("baseline {base}: {} distances written to {}", rows.len(), out.display());
    Ok(Outcome::default())
}

/// Records with distances attached, plus the baseline id when known.
fn joined_records(inputs: &RecordInputs, threshold: f64) -> Result<(Vec<EvalRecord>, Option<String>), CliError> {
    let rows = formats::read_records(&inputs.records, threshold).stage("reading records")?;
    match &inputs.distances {
        Some(p) => {
            let dist = formats::read_distances(p).stage("reading distances")?;
            let baseline = dist.first().map(|d| d.baseline_id.clone());
            let by_id: HashMap<&str, f64> = dist.iter().map(|d| (d.sample_id.as_str(), d.value)).collect();
            let mut out = Vec::with_capacity(rows.len());
            for (mut r, _) in rows {
                r.distance = *by_id.get(r.sample_id.as_str()).ok_or_else(|| CliError::Data {
                    stage: "joining records with distances",
                    source: Error::UnknownSample(r.sample_id.clone()),
                })?;
                out.push(r);
            }
            Ok((out, baseline))
        }
        None => {
            if rows.iter().any(|(_, has)| !has) {
                return Err(CliError::Data {
                    stage: "reading records",
                    source: Error::format(
                        &inputs.records,
                        "records lack a distance column and no distances file was given",
                    ),
                });
            }
            Ok((rows.into_iter().map(|(r, _)| r).collect(), None))
        }
    }
}

fn batch_fraction(inputs: &RecordInputs, cfg: &PipelineConfig) -> f64 {
    inputs.fraction.unwrap_or(cfg.estimator.batch_fraction)
}

pub fn cmd_fit(cfg: &PipelineConfig, a: &FitArgs) -> Result<Outcome, CliError> {
    let out = output_dir(&a.out, cfg)?;
    let (records, baseline) = joined_records(&a.inputs, cfg.loss.threshold)?;
    let metrics = if a.metrics.is_empty() {
        MetricKind::ALL.to_vec()
    } else {
        a.metrics.clone()
    };
    let lo = a.degree_min.unwrap_or(cfg.estimator.degree_min);
    let hi = a.degree_max.unwrap_or(cfg.estimator.degree_max);
    if lo < 1 || lo > hi {
        return Err(usage(format!("invalid degree range {lo}..={hi}")));
    }
    let batches = make_batches(&records, batch_fraction(&a.inputs, cfg)).stage("batching")?;
    let (dmin, dmax) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
        (a.min(r.distance), b.max(r.distance))
    });
    for metric in metrics {
        let (x, y, dropped) = batch_targets(&batches, metric);
        let est = select_and_fit(&x, &y, lo..=hi)
            .stage("fitting estimator")?
            .with_metadata(metric, baseline.clone(), dropped);
        formats::write_json(&out.join(format!("estimator_{metric}.json")), &est).stage("writing estimator")?;
        formats::write_curve(&out.join(format!("curve_{metric}.csv")), &est, dmin, dmax, CURVE_POINTS)
            .stage("writing curve")?;
        println!(
            "{metric}: degree {} from {} batches ({dropped} without a defined metric)",
            est.degree, est.n_observations
        );
    }
    Ok(Outcome::default())
}

#[derive(Debug, Serialize)]
struct BinaryEntry {
    metric: &'static str,
    value: Option<Vec<f64>>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct PredictedBatch {
    mean_distance: f64,
    observed: Option<f64>,
    predicted: f64,
}

#[derive(Debug, Serialize)]
struct FairnessFile {
    baseline_id: String,
    records_used: usize,
    batch_fraction: f64,
    batches: usize,
    continuous: Vec<FairnessEntry>,
    correlations: Vec<Correlation>,
    binary: Option<Vec<BinaryEntry>>,
    estimator: Option<Vec<PredictedBatch>>,
}

pub fn cmd_fairness(cfg: &PipelineConfig, a: &FairnessArgs) -> Result<Outcome, CliError> {
    let out = match (&a.out, &cfg.output) {
        (Some(p), _) => p.clone(),
        (None, Some(o)) => o.join("fairness.json"),
        (None, None) => return Err(usage("missing `out` (flag or config)")),
    };
    let (records, file_baseline) = joined_records(&a.inputs, cfg.loss.threshold)?;
    let est = match &a.estimator {
        Some(p) => Some(formats::read_estimator(p).stage("reading estimator")?),
        None => None,
    };
    let baseline = a
        .baseline
        .clone()
        .or(file_baseline)
        .or_else(|| est.as_ref().and_then(|e| e.baseline_id.clone()))
        .or_else(|| cfg.baseline.id.clone())
        .ok_or_else(|| usage("missing baseline id (flag, distances or estimator file, or config)"))?;
    let fraction = batch_fraction(&a.inputs, cfg);
    let batches = make_batches(&records, fraction).stage("batching")?;

    let correlations = MetricKind::ALL
        .iter()
        .map(|&metric| match distance_performance_correlation(&batches, metric) {
            Ok(r) => Correlation {
                metric,
                r: Some(r),
                error: None,
            },
            Err(e) => Correlation {
                metric,
                r: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let binary = match &a.groups {
        None => None,
        Some(p) => {
            let groups = formats::read_groups(p).stage("reading groups")?;
            let entry = |metric, r: crate::Result<Vec<f64>>| match r {
                Ok(v) => BinaryEntry {
                    metric,
                    value: Some(v),
                    error: None,
                },
                Err(e) => BinaryEntry {
                    metric,
                    value: None,
                    error: Some(e.to_string()),
                },
            };
            Some(vec![
                entry(
                    "equal_opportunity",
                    binary_equal_opportunity(&records, &groups).map(|v| vec![v]),
                ),
                entry(
                    "demographic_parity",
                    binary_demographic_parity(&records, &groups).map(|v| vec![v]),
                ),
                entry(
                    "equalized_odds",
                    binary_equalized_odds(&records, &groups).map(|(t, f)| vec![t, f]),
                ),
            ])
        }
    };

    let estimator = est.map(|est| {
        let metric = est.metric.unwrap_or(MetricKind::F1);
        batches
            .iter()
            .map(|b| PredictedBatch {
                mean_distance: b.mean_distance,
                observed: b.metric(metric),
                predicted: est.predict(b.mean_distance),
            })
            .collect()
    });

    let report = FairnessFile {
        continuous: continuous_reports(&batches, &baseline),
        baseline_id: baseline,
        records_used: records.len(),
        batch_fraction: fraction,
        batches: batches.len(),
        correlations,
        binary,
        estimator,
    };
    formats::write_json(&out, &report).stage("writing report")?;
    for c in &report.correlations {
        match c.r {
            Some(r) => println!("r(distance, {}) = {r:.4}", c.metric),
            None => println!(
                "r(distance, {}) unavailable: {}",
                c.metric,
                c.error.as_deref().unwrap_or("")
            ),
        }
    }
    Ok(Outcome::default())
}

#[derive(Debug, Serialize)]
struct ModelFile<'a> {
    model: &'a DeskModel,
    scaler: &'a FeatureScaler,
}

fn labeled_from_dir(dir: &Path, labels: &Path) -> crate::Result<Vec<LabeledSample>> {
    let labels = formats::read_labels(labels)?;
    load_distributions(dir)?
        .into_iter()
        .map(|d| {
            let label = *labels
                .get(d.source_id())
                .ok_or_else(|| Error::UnknownSample(d.source_id().to_owned()))?;
            Ok(LabeledSample { distribution: d, label })
        })
        .collect()
}

pub fn cmd_train(cfg: &PipelineConfig, a: &TrainArgs, seed: u64) -> Result<Outcome, CliError> {
    let out = output_dir(&a.out, cfg)?;
    let t = &cfg.trainer;
    let epochs = a.epochs.unwrap_or(t.epochs);
    let architecture = match a.architecture.unwrap_or(t.architecture) {
        ArchitectureName::Logistic => Architecture::Logistic,
        ArchitectureName::Mlp => Architecture::Mlp {
            hidden: a.hidden.unwrap_or(t.hidden),
        },
    };
    let train_cfg = TrainConfig {
        architecture,
        epochs,
        learning_rate: a.lr.unwrap_or(t.learning_rate),
        threshold: cfg.loss.threshold,
        floor: cfg.loss.floor,
        seed,
        warm_start: a.warm_start || t.warm_start,
    };
    let mut loss_cfg = LossConfig::for_epochs(epochs);
    loss_cfg.penalty_start_epoch = a
        .penalty_start
        .or(cfg.loss.penalty_start_epoch)
        .unwrap_or(loss_cfg.penalty_start_epoch);
    loss_cfg.penalty_weight = a.penalty_weight.unwrap_or(cfg.loss.penalty_weight);
    loss_cfg.threshold = cfg.loss.threshold;
    loss_cfg.floor = cfg.loss.floor;
    loss_cfg.validate().map_err(|e| usage(e.to_string()))?;
    train_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let est_cfg = EstimatorSettings {
        batch_fraction: cfg.estimator.batch_fraction,
        degrees: (cfg.estimator.degree_min..=cfg.estimator.degree_max).collect(),
        penalty_metric: cfg.estimator.penalty_metric,
    };
    if est_cfg.degrees.is_empty() || cfg.estimator.degree_min < 1 {
        return Err(usage("invalid estimator degree range"));
    }

    let distributions = a.distributions.clone().or_else(|| cfg.data.distributions.clone());
    let labels = a.labels.clone().or_else(|| cfg.data.labels.clone());
    let use_synthetic = a.synthetic || cfg.synthetic.is_some();
    let (samples, tones) = if use_synthetic {
        let mut spec = cfg.synthetic.clone().unwrap_or_default();
        spec.seed = seed;
        if let Some(k) = a.kappa {
            spec.kappa = k;
        }
        if let Some(n) = a.samples {
            spec.n_samples = n;
        }
        spec.validate().map_err(|e| usage(e.to_string()))?;
        let data = generate_synthetic(&spec).stage("generating synthetic data")?;
        let tones: Vec<f64> = data.iter().map(|s| s.tone).collect();
        (
            data.into_iter().map(LabeledSample::from).collect::<Vec<_>>(),
            Some(tones),
        )
    } else {
        match (distributions, labels) {
            (Some(d), Some(l)) => (labeled_from_dir(&d, &l).stage("loading dataset")?, None),
            _ => {
                return Err(usage(
                    "train needs a dataset: use --synthetic, a [synthetic] config section, \
                     or distributions plus labels",
                ))
            }
        }
    };

    let baseline = match a.baseline.clone().or_else(|| cfg.baseline.id.clone()) {
        Some(id) => BaselineChoice::Explicit(id),
        None => BaselineChoice::Random,
    };
    let data = prepare(&samples, t.train_fraction, &baseline, seed).stage("preparing data")?;
    let run = run_two_phase(&data, &train_cfg, &loss_cfg, &est_cfg).stage("training")?;

    let w = |name: &str| out.join(name);
    formats::write_distances(&w("distances.csv"), &data.distances).stage("writing outputs")?;
    formats::write_history(&w("prior_history.csv"), &run.prior_history).stage("writing outputs")?;
    formats::write_history(&w("posterior_history.csv"), &run.posterior_history).stage("writing outputs")?;
    formats::write_records(&w("prior_records.csv"), &run.prior_records).stage("writing outputs")?;
    formats::write_records(&w("posterior_records.csv"), &run.posterior_records).stage("writing outputs")?;
    formats::write_weights(&w("weights.csv"), &run.weights).stage("writing outputs")?;
    for est in &run.estimators {
        let m = est.metric.unwrap_or(MetricKind::F1);
        formats::write_json(&w(&format!("estimator_{m}.json")), est).stage("writing outputs")?;
        let (lo, hi) = run
            .prior_records
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
                (a.min(r.distance), b.max(r.distance))
            });
        formats::write_curve(&w(&format!("curve_{m}.csv")), est, lo, hi, CURVE_POINTS).stage("writing outputs")?;
    }
    formats::write_json(
        &w("prior_model.json"),
        &ModelFile {
            model: &run.prior_model,
            scaler: &data.scaler,
        },
    )
    .stage("writing outputs")?;
    formats::write_json(
        &w("posterior_model.json"),
        &ModelFile {
            model: &run.posterior_model,
            scaler: &data.scaler,
        },
    )
    .stage("writing outputs")?;
    formats::write_json(&w("prior_report.json"), &run.prior).stage("writing outputs")?;
    formats::write_json(&w("posterior_report.json"), &run.posterior).stage("writing outputs")?;
    formats::write_json(&w("comparison.json"), &run.comparison).stage("writing outputs")?;
    write_dataset(&w("dataset.csv"), &samples, tones.as_deref()).stage("writing outputs")?;
    if a.write_distributions {
        for s in &samples {
            let d = &s.distribution;
            formats::write_distribution(&w("distributions").join(format!("{}.csv", d.source_id())), d)
                .stage("writing outputs")?;
        }
    }

    print_comparison(&run.comparison);
    Ok(Outcome::default())
}

fn write_dataset(path: &Path, samples: &[LabeledSample], tones: Option<&[f64]>) -> crate::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(Error::from)?;
    w.write_record(formats::DATASET_HEADER)?;
    for (i, s) in samples.iter().enumerate() {
        let f = summary_features(&s.distribution);
        let tone = tones.map(|t| t[i].to_string()).unwrap_or_default();
        let mut row = vec![
            s.distribution.source_id().to_owned(),
            u8::from(s.label).to_string(),
            tone,
        ];
        row.extend(f.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:+.4}"))
}

fn print_comparison(c: &crate::trainer::Comparison) {
    println!("baseline: {}", c.baseline_id);
    println!("{:<10} {:>10} {:>10} {:>10}", "metric", "r_prior", "r_post", "change");
    for m in &c.metrics {
        println!(
            "{:<10} {:>10} {:>10} {:>10}",
            m.metric.name(),
            fmt_opt(m.r_prior),
            fmt_opt(m.r_posterior),
            fmt_opt(m.change)
        );
    }
    println!("val f1: {} -> {}", fmt_opt(c.f1_prior), fmt_opt(c.f1_posterior));
    println!("val accuracy: {:.4} -> {:.4}", c.accuracy_prior, c.accuracy_posterior);
}

pub fn cmd_report(a: &ReportArgs) -> Result<Outcome, CliError> {
    if a.run.is_none() && a.distributions.is_none() {
        return Err(usage("report needs --run and/or --distributions"));
    }
    if let Some(dir) = &a.run {
        let c: crate::trainer::Comparison =
            formats::read_json(&dir.join("comparison.json")).stage("reading comparison")?;
        print_comparison(&c);
    }
    if let Some(dir) = &a.distributions {
        let out = a.out.clone().ok_or_else(|| usage("histogram export needs --out"))?;
        if a.bins == 0 {
            return Err(usage("--bins must be positive"));
        }
        let dists = load_distributions(dir).stage("reading distributions")?;
        formats::write_histograms(&out, &dists, a.bins).stage("writing histograms")?;
        println!("{} histograms written to {}", dists.len(), out.display());
    }
    Ok(Outcome::default())
}

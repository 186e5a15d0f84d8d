//! Desk-scale two-phase training: plain prior training, estimator fitting on
//! validation output, then posterior training with the distance loss.

pub mod model;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{distance_table, SignedDistance};
use crate::distribution::{summary_features, SkinDistribution};
use crate::error::{Error, Result};
use crate::estimator::{
    batch_targets, make_batches, select_and_fit, BayesEstimator, Confusion, EvalRecord, MetricKind, PerformanceBatch,
};
use crate::fairness::{
    baseline_batch_of, continuous_demographic_parity, continuous_equal_opportunity, continuous_equalized_odds,
    distance_performance_correlation, FairnessReport,
};
use crate::mitigation::{
    bce_is_active, distance_loss, estimator_weights, mean_bce, weight_table, weighted_bce, LossConfig, WeightRow,
    DEFAULT_FLOOR,
};

pub use model::{Architecture, DeskModel};
pub use synthetic::{generate_synthetic, NoiseDirection, SyntheticSample, SyntheticSpec};

// Independent RNG streams derived from one seed.
const STREAM_SPLIT: u64 = 1;
const STREAM_BASELINE: u64 = 2;
const STREAM_INIT: u64 = 3;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub distribution: SkinDistribution,
    pub label: bool,
}

impl From<SyntheticSample> for LabeledSample {
    fn from(s: SyntheticSample) -> Self {
        Self {
            distribution: s.distribution,
            label: s.label,
        }
    }
}

/// Model-ready samples: standardized features, labels and signed distances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub distances: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    fn fit(rows: &[[f64; 5]]) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; 5];
        let mut scale = vec![0.0; 5];
        for k in 0..5 {
            mean[k] = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
            scale[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn apply(&self, raw: &[f64; 5]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineChoice {
    /// Use this sample id.
    Explicit(String),
    /// Draw uniformly from the validation split.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: SampleSet,
    pub val: SampleSet,
    pub baseline_id: String,
    pub scaler: FeatureScaler,
    /// One entry per input sample, in input order.
    pub distances: Vec<SignedDistance>,
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

/// Splits, picks the baseline, scores distances and builds standardized
/// features (scaled on the training split).
pub fn prepare(
    samples: &[LabeledSample],
    train_fraction: f64,
    baseline: &BaselineChoice,
    seed: u64,
) -> Result<PreparedData> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = samples.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::EmptyInput("train or validation split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, STREAM_SPLIT));
    let (train_idx, val_idx) = order.split_at(n_train);

    let baseline_id = match baseline {
        BaselineChoice::Explicit(id) => id.clone(),
        BaselineChoice::Random => {
            let k = seeded_rng(seed, STREAM_BASELINE).random_range(0..val_idx.len());
            samples[val_idx[k]].distribution.source_id().to_owned()
        }
    };

    let dists: Vec<SkinDistribution> = samples.iter().map(|s| s.distribution.clone()).collect();
    let distances = distance_table(&baseline_id, &dists)?;
    let raw: Vec<[f64; 5]> = samples.iter().map(|s| summary_features(&s.distribution)).collect();
    let train_raw: Vec<[f64; 5]> = train_idx.iter().map(|&i| raw[i]).collect();
    let scaler = FeatureScaler::fit(&train_raw);

    let build = |idx: &[usize]| SampleSet {
        ids: idx
            .iter()
            .map(|&i| samples[i].distribution.source_id().to_owned())
            .collect(),
        features: idx.iter().map(|&i| scaler.apply(&raw[i])).collect(),
        labels: idx.iter().map(|&i| samples[i].label).collect(),
        distances: idx.iter().map(|&i| distances[i].value).collect(),
    };
    Ok(PreparedData {
        train: build(train_idx),
        val: build(val_idx),
        baseline_id,
        scaler,
        distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub floor: f64,
    pub seed: u64,
    /// Start posterior training from the prior model instead of a fresh init.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Logistic,
            epochs: 120,
            learning_rate: 1.0,
            threshold: 0.5,
            floor: DEFAULT_FLOOR,
            seed: 0,
            warm_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// A fresh model for `inputs` features, seeded by `self.seed`.
    pub fn init_model(&self, inputs: usize) -> Result<DeskModel> {
        DeskModel::new(self.architecture, inputs, &mut seeded_rng(self.seed, STREAM_INIT))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: Option<f64>,
    pub val_accuracy: f64,
    pub penalized: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

/// Per-sample loss scaling for one epoch.
enum Phase<'a> {
    Mean,
    Penalized { weights: &'a [f64], alpha: f64 },
}

fn scores_of(model: &DeskModel, set: &SampleSet) -> Vec<f64> {
    set.features.iter().map(|x| model.score(x)).collect()
}

fn phase_loss(scores: &[f64], labels: &[bool], phase: &Phase<'_>, floor: f64) -> Result<f64> {
    match phase {
        Phase::Mean => mean_bce(scores, labels, floor),
        Phase::Penalized { weights, alpha } => weighted_bce(scores, labels, weights, *alpha, floor),
    }
}

fn phase_gradient(model: &DeskModel, set: &SampleSet, scores: &[f64], phase: &Phase<'_>, floor: f64) -> Vec<f64> {
    let n = set.len() as f64;
    let mut grad = vec![0.0; model.params().len()];
    for (i, (x, &s)) in set.features.iter().zip(scores).enumerate() {
        if !bce_is_active(s, floor) {
            continue;
        }
        let y = if set.labels[i] { 1.0 } else { 0.0 };
        let g = match phase {
            Phase::Mean => (s - y) / n,
            Phase::Penalized { weights, alpha } => (s - y) * weights[i] * alpha,
        };
        model.accumulate_gradient(x, g, &mut grad);
    }
    grad
}

/// One record per sample with `predicted = score >= threshold`.
pub fn evaluate(model: &DeskModel, set: &SampleSet, threshold: f64) -> Vec<EvalRecord> {
    set.ids
        .iter()
        .zip(&set.features)
        .zip(set.labels.iter().zip(&set.distances))
        .map(|((id, x), (&label, &d))| EvalRecord::new(id.clone(), model.score(x), label, d, threshold))
        .collect()
}

struct Schedule<'a> {
    epochs: usize,
    lr: f64,
    threshold: f64,
    floor: f64,
    penalty: Option<(&'a [f64], &'a LossConfig)>,
}

fn run_epochs(
    mut model: DeskModel,
    train: &SampleSet,
    val: &SampleSet,
    s: &Schedule<'_>,
) -> Result<(DeskModel, TrainHistory)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("training or validation set"));
    }
    let mut history = TrainHistory::default();
    for epoch in 0..s.epochs {
        let phase = match s.penalty {
            Some((weights, cfg)) if cfg.is_penalized(epoch) => Phase::Penalized {
                weights,
                alpha: cfg.penalty_weight,
            },
            _ => Phase::Mean,
        };
        let scores = scores_of(&model, train);
        let loss = phase_loss(&scores, &train.labels, &phase, s.floor)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        let vc = Confusion::of(&evaluate(&model, val, s.threshold));
        history.rows.push(HistoryRow {
            epoch,
            loss,
            val_f1: vc.f1(),
            val_accuracy: vc.accuracy(),
            penalized: matches!(phase, Phase::Penalized { .. }),
        });
        let grad = phase_gradient(&model, train, &scores, &phase, s.floor);
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= s.lr * g;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
    }
    Ok((model, history))
}

/// Mean-BCE gradient descent; returns the model, its history and the
/// validation records of the final model.
pub fn train_prior(
    model: DeskModel,
    train: &SampleSet,
    val: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(DeskModel, TrainHistory, Vec<EvalRecord>)> {
    cfg.validate()?;
    let schedule = Schedule {
        epochs: cfg.epochs,
        lr: cfg.learning_rate,
        threshold: cfg.threshold,
        floor: cfg.floor,
        penalty: None,
    };
    let (model, history) = run_epochs(model, train, val, &schedule)?;
    let records = evaluate(&model, val, cfg.threshold);
    Ok((model, history, records))
}

/// Same loop as [`train_prior`] with the gated distance loss; penalty weights
/// come from the frozen estimator over the training distances.
pub fn train_posterior(
    model: DeskModel,
    train: &SampleSet,
    val: &SampleSet,
    est: &BayesEstimator,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<(DeskModel, TrainHistory)> {
    cfg.validate()?;
    loss.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let weights = estimator_weights(&train.distances, est)?;
    let schedule = Schedule {
        epochs: cfg.epochs,
        lr: cfg.learning_rate,
        threshold: loss.threshold,
        floor: loss.floor,
        penalty: Some((&weights, loss)),
    };
    run_epochs(model, train, val, &schedule)
}

/// Analytic gradient of the distance loss at `epoch` with respect to the model
/// parameters.
pub fn loss_gradient(
    model: &DeskModel,
    batch: &SampleSet,
    epoch: usize,
    cfg: &LossConfig,
    est: &BayesEstimator,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Precondition("gradient check needs a non-empty batch".into()));
    }
    let weights;
    let phase = if cfg.is_penalized(epoch) {
        weights = estimator_weights(&batch.distances, est)?;
        Phase::Penalized {
            weights: &weights,
            alpha: cfg.penalty_weight,
        }
    } else {
        Phase::Mean
    };
    let scores = scores_of(model, batch);
    Ok(phase_gradient(model, batch, &scores, &phase, cfg.floor))
}

/// Largest per-parameter relative error between [`loss_gradient`] and central
/// differences of [`distance_loss`] (step 1e-5). Magnitudes below 1e-6 are
/// compared on an absolute 1e-6 scale.
pub fn gradient_check(
    model: &DeskModel,
    batch: &SampleSet,
    cfg: &LossConfig,
    est: &BayesEstimator,
    epoch: usize,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let analytic = loss_gradient(model, batch, epoch, cfg, est)?;
    let mut probe = model.clone();
    let loss_at = |m: &DeskModel| distance_loss(&scores_of(m, batch), &batch.labels, &batch.distances, epoch, cfg, est);
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + STEP;
        let up = loss_at(&probe)?;
        probe.params_mut()[k] = orig - STEP;
        let down = loss_at(&probe)?;
        probe.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSettings {
    pub batch_fraction: f64,
    pub degrees: Vec<usize>,
    /// Metric whose estimator drives the penalty.
    pub penalty_metric: MetricKind,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            batch_fraction: crate::estimator::DEFAULT_BATCH_FRACTION,
            degrees: crate::estimator::DEFAULT_DEGREES.collect(),
            penalty_metric: MetricKind::F1,
        }
    }
}

/// Fits one estimator on distance batches of `records`.
pub fn fit_on_records(
    records: &[EvalRecord],
    metric: MetricKind,
    settings: &EstimatorSettings,
    baseline_id: &str,
) -> Result<BayesEstimator> {
    let batches = make_batches(records, settings.batch_fraction)?;
    let (x, y, dropped) = batch_targets(&batches, metric);
    Ok(select_and_fit(&x, &y, settings.degrees.iter().copied())?.with_metadata(
        metric,
        Some(baseline_id.to_owned()),
        dropped,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub metric: MetricKind,
    pub r: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub f1: Option<f64>,
    pub accuracy: f64,
    pub correlations: Vec<Correlation>,
    pub fairness: Vec<FairnessEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessEntry {
    pub metric: String,
    pub report: Option<FairnessReport>,
    pub error: Option<String>,
}

impl PhaseSummary {
    pub fn r(&self, metric: MetricKind) -> Option<f64> {
        self.correlations.iter().find(|c| c.metric == metric).and_then(|c| c.r)
    }
}

/// Correlations and continuous fairness metrics of one set of records.
pub fn summarize(records: &[EvalRecord], batch_fraction: f64, baseline_id: &str) -> Result<PhaseSummary> {
    let overall = Confusion::of(records);
    let batches = make_batches(records, batch_fraction)?;
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
    Ok(PhaseSummary {
        f1: overall.f1(),
        accuracy: overall.accuracy(),
        correlations,
        fairness: continuous_reports(&batches, baseline_id),
    })
}

/// Continuous EO, DP and both equalized-odds components, each reported on its
/// own so one failing precondition leaves the rest intact.
pub fn continuous_reports(batches: &[PerformanceBatch], baseline_id: &str) -> Vec<FairnessEntry> {
    let entry = |name: &str, r: Result<FairnessReport>| match r {
        Ok(report) => FairnessEntry {
            metric: name.into(),
            report: Some(report),
            error: None,
        },
        Err(e) => FairnessEntry {
            metric: name.into(),
            report: None,
            error: Some(e.to_string()),
        },
    };
    let base = match baseline_batch_of(batches, baseline_id) {
        Ok(b) => b,
        Err(e) => {
            return [
                "equal_opportunity",
                "demographic_parity",
                "equalized_odds_tpr",
                "equalized_odds_fpr",
            ]
            .iter()
            .map(|n| entry(n, Err(Error::Precondition(format!("baseline batch: {e}")))))
            .collect()
        }
    };
    let wrap = |name: &str, m: Result<crate::fairness::ContinuousMetric>| {
        entry(
            name,
            m.map(|m| FairnessReport::from_metric(name, m, baseline_id, batches)),
        )
    };
    let mut out = vec![
        wrap("equal_opportunity", continuous_equal_opportunity(batches, base)),
        wrap("demographic_parity", continuous_demographic_parity(batches, base)),
    ];
    match continuous_equalized_odds(batches, base) {
        Ok((p, n)) => {
            out.push(wrap("equalized_odds_tpr", Ok(p)));
            out.push(wrap("equalized_odds_fpr", Ok(n)));
        }
        Err(e) => {
            let msg = e.to_string();
            out.push(entry("equalized_odds_tpr", Err(Error::Precondition(msg.clone()))));
            out.push(entry("equalized_odds_fpr", Err(Error::Precondition(msg))));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricChange {
    pub metric: MetricKind,
    pub r_prior: Option<f64>,
    pub r_posterior: Option<f64>,
    /// `|r_prior| - |r_posterior|`; positive when the correlation weakened.
    pub change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_id: String,
    pub penalty_metric: MetricKind,
    pub f1_prior: Option<f64>,
    pub f1_posterior: Option<f64>,
    pub accuracy_prior: f64,
    pub accuracy_posterior: f64,
    pub metrics: Vec<MetricChange>,
}

impl Comparison {
    pub fn change(&self, metric: MetricKind) -> Option<&MetricChange> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Everything a two-phase run produces.
#[derive(Debug, Clone)]
pub struct TwoPhaseRun {
    pub baseline_id: String,
    pub prior_model: DeskModel,
    pub posterior_model: DeskModel,
    pub prior_history: TrainHistory,
    pub posterior_history: TrainHistory,
    pub prior_records: Vec<EvalRecord>,
    pub posterior_records: Vec<EvalRecord>,
    pub estimators: Vec<BayesEstimator>,
    pub weights: Vec<WeightRow>,
    pub prior: PhaseSummary,
    pub posterior: PhaseSummary,
    pub comparison: Comparison,
}

/// Prior training, estimator fit on validation output, posterior training.
pub fn run_two_phase(
    data: &PreparedData,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    est_cfg: &EstimatorSettings,
) -> Result<TwoPhaseRun> {
    let inputs = data.train.features.first().map_or(0, Vec::len);
    let init = train_cfg.init_model(inputs)?;
    let (prior_model, prior_history, prior_records) = train_prior(init.clone(), &data.train, &data.val, train_cfg)?;

    let mut estimators = Vec::new();
    for metric in MetricKind::ALL {
        match fit_on_records(&prior_records, metric, est_cfg, &data.baseline_id) {
            Ok(e) => estimators.push(e),
            Err(e) if metric == est_cfg.penalty_metric => return Err(e),
            Err(e) => log::warn!("estimator for {metric} not fitted: {e}"),
        }
    }
    let est = estimators
        .iter()
        .find(|e| e.metric == Some(est_cfg.penalty_metric))
        .expect("penalty estimator fitted")
        .clone();

    let start = if train_cfg.warm_start {
        prior_model.clone()
    } else {
        init
    };
    let (posterior_model, posterior_history) =
        train_posterior(start, &data.train, &data.val, &est, loss_cfg, train_cfg)?;
    let posterior_records = evaluate(&posterior_model, &data.val, loss_cfg.threshold);
    let weights = weight_table(&data.train.ids, &data.train.distances, &est)?;

    let prior = summarize(&prior_records, est_cfg.batch_fraction, &data.baseline_id)?;
    let posterior = summarize(&posterior_records, est_cfg.batch_fraction, &data.baseline_id)?;
    let comparison = Comparison {
        baseline_id: data.baseline_id.clone(),
        penalty_metric: est_cfg.penalty_metric,
        f1_prior: prior.f1,
        f1_posterior: posterior.f1,
        accuracy_prior: prior.accuracy,
        accuracy_posterior: posterior.accuracy,
        metrics: MetricKind::ALL
            .iter()
            .map(|&metric| {
                let (a, b) = (prior.r(metric), posterior.r(metric));
                MetricChange {
                    metric,
                    r_prior: a,
                    r_posterior: b,
                    change: a.zip(b).map(|(a, b)| a.abs() - b.abs()),
                }
            })
            .collect(),
    };
    Ok(TwoPhaseRun {
        baseline_id: data.baseline_id.clone(),
        prior_model,
        posterior_model,
        prior_history,
        posterior_history,
        prior_records,
        posterior_records,
        estimators,
        weights,
        prior,
        posterior,
        comparison,
    })
}

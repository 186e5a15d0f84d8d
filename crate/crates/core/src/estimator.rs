//! Distance batching, batch metrics and the Bayesian polynomial performance
//! estimator.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default share of records per batch.
pub const DEFAULT_BATCH_FRACTION: f64 = 0.01;
pub const DEFAULT_DEGREES: std::ops::RangeInclusive<usize> = 1..=6;

const EVIDENCE_TOL: f64 = 1e-6;
const EVIDENCE_MAX_ITER: usize = 200;
const PRECISION_MIN: f64 = 1e-10;
const PRECISION_MAX: f64 = 1e10;

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub score: f64,
    pub predicted: bool,
    pub label: bool,
    pub distance: f64,
}

impl EvalRecord {
    /// Builds a record with `predicted = score >= threshold`.
    pub fn new(sample_id: impl Into<String>, score: f64, label: bool, distance: f64, threshold: f64) -> Self {
        Self {
            sample_id: sample_id.into(),
            score,
            predicted: score >= threshold,
            label,
            distance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    F1,
    Accuracy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 2] = [MetricKind::F1, MetricKind::Accuracy];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::F1 => "f1",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1" => Ok(MetricKind::F1),
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            other => Err(Error::InvalidParameter(format!("unknown metric `{other}`"))),
        }
    }
}

/// Confusion counts over a set of records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Self {
        let mut c = Confusion::default();
        for r in records {
            match (r.label, r.predicted) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    pub fn predicted_positives(&self) -> usize {
        self.tp + self.fp
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// `None` when there are no true positives and no predicted positives.
    pub fn f1(&self) -> Option<f64> {
        if self.tp == 0 && self.predicted_positives() == 0 {
            return None;
        }
        // 2PR/(P+R) simplifies to 2tp/(2tp+fp+fn).
        Some(2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceBatch {
    pub records: Vec<EvalRecord>,
    pub mean_distance: f64,
    pub f1: Option<f64>,
    pub accuracy: f64,
}

impl PerformanceBatch {
    pub fn new(records: Vec<EvalRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("batch records"));
        }
        let mean_distance = records.iter().map(|r| r.distance).sum::<f64>() / records.len() as f64;
        let (f1, accuracy) = batch_metrics(&records);
        Ok(Self {
            records,
            mean_distance,
            f1,
            accuracy,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn metric(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::F1 => self.f1,
            MetricKind::Accuracy => Some(self.accuracy),
        }
    }

    pub fn confusion(&self) -> Confusion {
        Confusion::of(&self.records)
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.records.iter().any(|r| r.sample_id == sample_id)
    }
}

/// `(f1, accuracy)`; F1 is `None` when nothing was predicted positive.
pub fn batch_metrics(records: &[EvalRecord]) -> (Option<f64>, f64) {
    let c = Confusion::of(records);
    (c.f1(), c.accuracy())
}

/// Sorts by distance and cuts into batches of `max(1, round(fraction * n))`
/// records; the final batch absorbs any remainder.
pub fn make_batches(records: &[EvalRecord], fraction: f64) -> Result<Vec<PerformanceBatch>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("evaluation records"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "batch fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let n = sorted.len();
    let size = ((fraction * n as f64).round() as usize).max(1);
    let count = n / size;
    let mut out = Vec::with_capacity(count);
    let mut rest = sorted.into_iter();
    for k in 0..count {
        let take = if k + 1 == count { n - size * k } else { size };
        out.push(PerformanceBatch::new(rest.by_ref().take(take).collect())?);
    }
    Ok(out)
}

/// Batch mean distances and metric values, dropping batches whose metric is
/// missing. The third element counts the dropped batches.
pub fn batch_targets(batches: &[PerformanceBatch], kind: MetricKind) -> (Vec<f64>, Vec<f64>, usize) {
    let mut xs = Vec::with_capacity(batches.len());
    let mut ys = Vec::with_capacity(batches.len());
    for b in batches {
        if let Some(m) = b.metric(kind) {
            xs.push(b.mean_distance);
            ys.push(m);
        }
    }
    let dropped = batches.len() - xs.len();
    (xs, ys, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self { mean: 0.0, scale: 1.0 }
    }

    /// Z-score parameters (population standard deviation).
    pub fn fit(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("standardizer inputs"));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let scale = var.sqrt();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Singular("all distances are equal; cannot standardize".into()));
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }
}

fn features(z: f64, degree: usize) -> DVector<f64> {
    let mut row = DVector::zeros(degree + 1);
    let mut p = 1.0;
    for k in 0..=degree {
        row[k] = p;
        p *= z;
    }
    row
}

/// Rows `[1, z, z^2, ..., z^g]` with `z` the standardized distance.
pub fn design_matrix(distances: &[f64], degree: usize, s: &Standardizer) -> Result<DMatrix<f64>> {
    if degree < 1 {
        return Err(Error::InvalidParameter("polynomial degree must be >= 1".into()));
    }
    let mut m = DMatrix::zeros(distances.len(), degree + 1);
    for (i, &d) in distances.iter().enumerate() {
        m.set_row(i, &features(s.apply(d), degree).transpose());
    }
    Ok(m)
}

/// Fitted Gaussian posterior over polynomial coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesEstimator {
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub prior_precision: f64,
    pub noise_precision: f64,
    pub standardizer: Standardizer,
    /// Row-major `(degree + 1)^2` entries.
    pub posterior_covariance: Vec<f64>,
    pub log_evidence: f64,
    pub n_observations: usize,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub metric: Option<MetricKind>,
    #[serde(default)]
    pub baseline_id: Option<String>,
    #[serde(default)]
    pub excluded_batches: usize,
}

struct Posterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    log_det_a: f64,
}

fn posterior(gram: &DMatrix<f64>, phi_t: &DVector<f64>, lambda: f64, beta: f64) -> Result<Posterior> {
    let m = gram.nrows();
    let a = DMatrix::identity(m, m) * lambda + gram * beta;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("posterior precision is not positive definite".into()))?;
    let cov = chol.inverse();
    let mean = &cov * phi_t * beta;
    let log_det_a = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(Posterior { mean, cov, log_det_a })
}

fn clamp_precision(v: f64) -> f64 {
    if v.is_nan() {
        PRECISION_MAX
    } else {
        v.clamp(PRECISION_MIN, PRECISION_MAX)
    }
}

/// Fits the posterior for degree `degree`. With `hyper = Some((lambda, beta))`
/// the precisions are held fixed; otherwise they are chosen by evidence
/// maximization.
pub fn fit_bayes(
    distances: &[f64],
    targets: &[f64],
    degree: usize,
    hyper: Option<(f64, f64)>,
) -> Result<BayesEstimator> {
    if distances.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "distances vs targets",
            left: distances.len(),
            right: targets.len(),
        });
    }
    if degree < 1 {
        return Err(Error::InvalidParameter("polynomial degree must be >= 1".into()));
    }
    let n = targets.len();
    if n < degree + 2 {
        return Err(Error::InsufficientBatches {
            needed: degree + 2,
            have: n,
        });
    }
    if targets.iter().chain(distances).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite fit input".into()));
    }
    if let Some((l, b)) = hyper {
        if !(l > 0.0 && b > 0.0 && l.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "precisions must be positive, got ({l}, {b})"
            )));
        }
    }
    let standardizer = Standardizer::fit(distances)?;
    let phi = design_matrix(distances, degree, &standardizer)?;
    let t = DVector::from_column_slice(targets);
    let gram = phi.transpose() * &phi;
    let phi_t = phi.transpose() * &t;
    let m = degree + 1;

    let (mut lambda, mut beta) = match hyper {
        Some(h) => h,
        None => {
            let mean = t.mean();
            let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            (1.0, clamp_precision(if var > 0.0 { 1.0 / var } else { 1.0 }))
        }
    };

    let mut post = posterior(&gram, &phi_t, lambda, beta)?;
    let mut iterations = 0;
    let mut converged = hyper.is_some();
    if hyper.is_none() {
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        while iterations < EVIDENCE_MAX_ITER {
            iterations += 1;
            let gamma: f64 = eig
                .iter()
                .map(|&e| {
                    let e = beta * e.max(0.0);
                    e / (e + lambda)
                })
                .sum();
            let wtw = post.mean.norm_squared();
            let resid = (&t - &phi * &post.mean).norm_squared();
            let new_lambda = clamp_precision(gamma / wtw);
            let new_beta = clamp_precision((n as f64 - gamma) / resid);
            let change = ((new_lambda / lambda).ln().abs()).max((new_beta / beta).ln().abs());
            lambda = new_lambda;
            beta = new_beta;
            post = posterior(&gram, &phi_t, lambda, beta)?;
            if change < EVIDENCE_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            log::debug!("evidence iteration for degree {degree} hit the {EVIDENCE_MAX_ITER}-step cap");
        }
    }

    let resid = (&t - &phi * &post.mean).norm_squared();
    let e_w = 0.5 * beta * resid + 0.5 * lambda * post.mean.norm_squared();
    let log_evidence = 0.5 * m as f64 * lambda.ln() + 0.5 * n as f64 * beta.ln()
        - e_w
        - 0.5 * post.log_det_a
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let cov = 0.5 * (&post.cov + post.cov.transpose());
    Ok(BayesEstimator {
        degree,
        coefficients: post.mean.iter().copied().collect(),
        prior_precision: lambda,
        noise_precision: beta,
        standardizer,
        posterior_covariance: cov.transpose().iter().copied().collect(),
        log_evidence,
        n_observations: n,
        iterations,
        converged,
        metric: None,
        baseline_id: None,
        excluded_batches: 0,
    })
}

/// Fits every admissible degree in `degrees` by evidence maximization and
/// returns the best one; ties go to the smaller degree.
pub fn select_and_fit(
    distances: &[f64],
    targets: &[f64],
    degrees: impl IntoIterator<Item = usize>,
) -> Result<BayesEstimator> {
    let mut best: Option<BayesEstimator> = None;
    let mut tried = false;
    let mut smallest_needed = usize::MAX;
    for g in degrees {
        tried = true;
        smallest_needed = smallest_needed.min(g + 2);
        if g < 1 || g + 2 > targets.len() {
            continue;
        }
        let est = fit_bayes(distances, targets, g, None)?;
        if best.as_ref().is_none_or(|b| est.log_evidence > b.log_evidence) {
            best = Some(est);
        }
    }
    if !tried {
        return Err(Error::InvalidParameter("empty degree range".into()));
    }
    best.ok_or(Error::InsufficientBatches {
        needed: smallest_needed,
        have: targets.len(),
    })
}

/// Degree with the highest log evidence in `degrees`.
pub fn select_degree(distances: &[f64], targets: &[f64], degrees: impl IntoIterator<Item = usize>) -> Result<usize> {
    select_and_fit(distances, targets, degrees).map(|e| e.degree)
}

impl BayesEstimator {
    fn phi(&self, d: f64) -> DVector<f64> {
        features(self.standardizer.apply(d), self.degree)
    }

    fn covariance(&self) -> DMatrix<f64> {
        let m = self.degree + 1;
        DMatrix::from_row_slice(m, m, &self.posterior_covariance)
    }

    /// Predictive mean before clamping.
    pub fn predict_raw(&self, d: f64) -> f64 {
        self.phi(d).iter().zip(&self.coefficients).map(|(p, w)| p * w).sum()
    }

    /// Predicted performance, clamped to `[0, 1]`.
    pub fn predict(&self, d: f64) -> f64 {
        self.predict_raw(d).clamp(0.0, 1.0)
    }

    /// `phi^T S phi + 1 / noise_precision`.
    pub fn predictive_variance(&self, d: f64) -> f64 {
        let phi = self.phi(d);
        (phi.transpose() * self.covariance() * &phi)[(0, 0)] + 1.0 / self.noise_precision
    }

    pub fn with_metadata(mut self, metric: MetricKind, baseline_id: Option<String>, excluded: usize) -> Self {
        self.metric = Some(metric);
        self.baseline_id = baseline_id;
        self.excluded_batches = excluded;
        self
    }

    /// Checks shape and positivity invariants, e.g. after deserializing.
    pub fn validate(&self) -> Result<()> {
        let m = self.degree + 1;
        let bad = |why: &str| Err(Error::InvalidParameter(format!("estimator: {why}")));
        if self.degree < 1 {
            return bad("degree must be >= 1");
        }
        if self.coefficients.len() != m {
            return bad("coefficient count does not match degree");
        }
        if self.posterior_covariance.len() != m * m {
            return bad("covariance size does not match degree");
        }
        if !(self.prior_precision > 0.0 && self.noise_precision > 0.0) {
            return bad("precisions must be positive");
        }
        if !(self.standardizer.scale > 0.0) {
            return bad("standardizer scale must be positive");
        }
        if self
            .coefficients
            .iter()
            .chain(&self.posterior_covariance)
            .any(|v| !v.is_finite())
        {
            return bad("non-finite parameter");
        }
        if self.covariance().cholesky().is_none() {
            return bad("covariance is not positive definite");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Self = serde_json::from_str(s)?;
        e.validate()?;
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(d: f64, label: bool, predicted: bool) -> EvalRecord {
        EvalRecord {
            sample_id: format!("s{d}"),
            score: if predicted { 0.9 } else { 0.1 },
            predicted,
            label,
            distance: d,
        }
    }

    #[test]
    fn batch_partition_rule() {
        let recs: Vec<_> = (0..205).map(|i| rec(f64::from(204 - i), true, true)).collect();
        let b = make_batches(&recs, 0.01).unwrap();
        assert_eq!(b.len(), 102);
        assert!(b[..101].iter().all(|x| x.len() == 2));
        assert_eq!(b[101].len(), 3);
        assert!(b.windows(2).all(|w| w[0].mean_distance <= w[1].mean_distance));

        let recs: Vec<_> = (0..100).map(|i| rec(f64::from(i), true, true)).collect();
        assert_eq!(make_batches(&recs, 0.01).unwrap().len(), 100);
        assert_eq!(make_batches(&recs[..5], 1.0).unwrap().len(), 1);
        assert!(make_batches(&[], 0.5).is_err());
        assert!(make_batches(&recs, 0.0).is_err());
    }

    #[test]
    fn metric_examples() {
        let all_right = [
            rec(0., true, true),
            rec(0., true, true),
            rec(0., false, false),
            rec(0., false, false),
        ];
        assert_eq!(batch_metrics(&all_right), (Some(1.0), 1.0));
        let (f1, acc) = batch_metrics(&[rec(0., true, true), rec(0., true, false)]);
        assert!((f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc, 0.5);
        assert_eq!(
            batch_metrics(&[rec(0., false, false), rec(0., false, false)]),
            (None, 1.0)
        );
    }

    #[test]
    fn design_matrix_examples() {
        let id = Standardizer::identity();
        assert_eq!(
            design_matrix(&[0.0], 2, &id).unwrap(),
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0])
        );
        assert_eq!(
            design_matrix(&[1.0, 2.0], 1, &id).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0])
        );
        let s = Standardizer { mean: 1.0, scale: 2.0 };
        assert_eq!(
            design_matrix(&[3.0], 3, &s).unwrap(),
            DMatrix::from_row_slice(1, 4, &[1.0; 4])
        );
        assert!(design_matrix(&[1.0], 0, &id).is_err());
    }

    #[test]
    fn constant_targets() {
        let d: Vec<f64> = (0..30).map(|i| f64::from(i) - 15.0).collect();
        let t = vec![0.8; 30];
        let e = fit_bayes(&d, &t, 1, None).unwrap();
        for x in [-40.0, 0.0, 3.3, 12.0] {
            assert!((e.predict(x) - 0.8).abs() <= 1e-6, "{}", e.predict(x));
        }
        e.validate().unwrap();
    }

    #[test]
    fn insufficient_and_singular() {
        assert!(matches!(
            fit_bayes(&[], &[], 1, Some((1.0, 1.0))),
            Err(Error::InsufficientBatches { .. })
        ));
        assert!(matches!(
            fit_bayes(&[2.0; 5], &[0.1, 0.2, 0.3, 0.4, 0.5], 1, None),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn noiseless_line_selects_degree_one() {
        let d: Vec<f64> = (0..40).map(|i| f64::from(i) * 0.5 - 10.0).collect();
        let t: Vec<f64> = d.iter().map(|x| 0.7 - 0.01 * x).collect();
        assert_eq!(select_degree(&d, &t, DEFAULT_DEGREES).unwrap(), 1);
    }

    #[test]
    fn small_inputs_skip_large_degrees() {
        let d = [-3.0, -1.0, 1.0, 3.0];
        let t = [0.5, 0.6, 0.65, 0.7];
        let e = select_and_fit(&d, &t, 1..=6).unwrap();
        assert!(e.degree <= 2);
        assert!(matches!(
            select_and_fit(&d[..2], &t[..2], 1..=6),
            Err(Error::InsufficientBatches { .. })
        ));
    }

    #[test]
    fn clamp_and_variance() {
        let e = BayesEstimator {
            degree: 1,
            coefficients: vec![1.07, 0.0],
            prior_precision: 1.0,
            noise_precision: 4.0,
            standardizer: Standardizer::identity(),
            posterior_covariance: vec![0.5, 0.0, 0.0, 0.5],
            log_evidence: 0.0,
            n_observations: 3,
            iterations: 0,
            converged: true,
            metric: None,
            baseline_id: None,
            excluded_batches: 0,
        };
        assert_eq!(e.predict(0.0), 1.0);
        assert!((e.predictive_variance(2.0) - (0.5 + 2.0 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let d: Vec<f64> = (0..20).map(f64::from).collect();
        let t: Vec<f64> = d.iter().map(|x| 0.5 + 0.01 * x - 0.0004 * x * x).collect();
        let e = fit_bayes(&d, &t, 2, None)
            .unwrap()
            .with_metadata(MetricKind::F1, Some("b".into()), 1);
        let back = BayesEstimator::from_json(&e.to_json().unwrap()).unwrap();
        assert_eq!(back, e);
        let mut broken = e.clone();
        broken.coefficients.pop();
        assert!(BayesEstimator::from_json(&serde_json::to_string(&broken).unwrap()).is_err());
    }
}

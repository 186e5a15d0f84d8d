//! Group fairness gaps for a binary attribute, their continuous-attribute
//! counterparts over distance batches, and distance/performance correlation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Confusion, EvalRecord, MetricKind, PerformanceBatch};

fn split_groups(records: &[EvalRecord], group: &HashMap<String, u8>) -> Result<(Confusion, Confusion)> {
    let mut members: [Vec<&EvalRecord>; 2] = [Vec::new(), Vec::new()];
    for r in records {
        let k = *group
            .get(&r.sample_id)
            .ok_or_else(|| Error::UnknownSample(r.sample_id.clone()))?;
        if k > 1 {
            return Err(Error::InvalidParameter(format!(
                "group of `{}` must be 0 or 1, got {k}",
                r.sample_id
            )));
        }
        members[k as usize].push(r);
    }
    let [g0, g1] = members;
    Ok((Confusion::of(g0), Confusion::of(g1)))
}

impl Confusion {
    fn tpr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.tp as f64 / self.positives() as f64)
    }

    fn fpr(&self) -> Option<f64> {
        (self.negatives() > 0).then(|| self.fp as f64 / self.negatives() as f64)
    }

    fn positive_rate(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.predicted_positives() as f64 / self.total() as f64)
    }
}

fn need(v: Option<f64>, what: &str, g: usize) -> Result<f64> {
    v.ok_or_else(|| Error::Precondition(format!("group {g} has no {what}")))
}

/// `TPR(group 0) - TPR(group 1)`.
pub fn binary_equal_opportunity(records: &[EvalRecord], group: &HashMap<String, u8>) -> Result<f64> {
    let (g0, g1) = split_groups(records, group)?;
    Ok(need(g0.tpr(), "positive labels", 0)? - need(g1.tpr(), "positive labels", 1)?)
}

/// `P(pred = 1 | group 0) - P(pred = 1 | group 1)`.
pub fn binary_demographic_parity(records: &[EvalRecord], group: &HashMap<String, u8>) -> Result<f64> {
    let (g0, g1) = split_groups(records, group)?;
    Ok(need(g0.positive_rate(), "records", 0)? - need(g1.positive_rate(), "records", 1)?)
}

/// `(TPR gap, FPR gap)`, each as group 0 minus group 1.
pub fn binary_equalized_odds(records: &[EvalRecord], group: &HashMap<String, u8>) -> Result<(f64, f64)> {
    let (g0, g1) = split_groups(records, group)?;
    let tpr = need(g0.tpr(), "positive labels", 0)? - need(g1.tpr(), "positive labels", 1)?;
    let fpr = need(g0.fpr(), "negative labels", 0)? - need(g1.fpr(), "negative labels", 1)?;
    Ok((tpr, fpr))
}

/// Per-batch input to [`weighted_rate_gap`]: a rate and the count it was
/// estimated from, or `None` when the stratum is absent from the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRate {
    pub mean_distance: f64,
    pub rate: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub batch: usize,
    pub mean_distance: f64,
    pub relative_distance: f64,
    pub metric: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousMetric {
    pub value: f64,
    /// `value / sum(weight * |relative_distance|)`; absent when that sum is 0.
    pub normalized: Option<f64>,
    pub baseline_batch: usize,
    /// Batch whose rate served as the reference, if it differs from `baseline_batch`.
    pub substituted_baseline: Option<usize>,
    pub excluded_batches: Vec<usize>,
    pub rows: Vec<BatchRow>,
}

/// `sum_i p_i * D_i * (rate_i - rate_0)` over batches with a defined rate, where
/// `p_i` is the batch's share of the total count and `D_i` its mean distance
/// minus that of the baseline batch.
pub fn weighted_rate_gap(rates: &[BatchRate], baseline_batch: usize) -> Result<ContinuousMetric> {
    let base = rates.get(baseline_batch).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "baseline batch {baseline_batch} out of range ({} batches)",
            rates.len()
        ))
    })?;
    let origin = base.mean_distance;
    let reference = if base.rate.is_some() {
        baseline_batch
    } else {
        rates
            .iter()
            .enumerate()
            .filter(|(_, r)| r.rate.is_some())
            .min_by(|(i, a), (j, b)| {
                let da = (a.mean_distance - origin).abs();
                let db = (b.mean_distance - origin).abs();
                da.total_cmp(&db).then(i.cmp(j))
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Precondition("no batch contains the required stratum".into()))?
    };
    let rate0 = rates[reference].rate.expect("reference has a rate");
    let total: usize = rates.iter().filter(|r| r.rate.is_some()).map(|r| r.count).sum();
    if total == 0 {
        return Err(Error::Precondition("stratum has zero records overall".into()));
    }

    let mut value = 0.0;
    let mut spread = 0.0;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (i, r) in rates.iter().enumerate() {
        let Some(rate) = r.rate else {
            excluded.push(i);
            continue;
        };
        let p = r.count as f64 / total as f64;
        let d = r.mean_distance - origin;
        value += p * d * (rate - rate0);
        spread += p * d.abs();
        rows.push(BatchRow {
            batch: i,
            mean_distance: r.mean_distance,
            relative_distance: d,
            metric: rate,
            weight: p,
        });
    }
    let value = value + 0.0;
    Ok(ContinuousMetric {
        value,
        normalized: (spread > 0.0).then(|| value / spread + 0.0),
        baseline_batch,
        substituted_baseline: (reference != baseline_batch).then_some(reference),
        excluded_batches: excluded,
        rows,
    })
}

fn rates_by(batches: &[PerformanceBatch], f: impl Fn(&Confusion) -> (Option<f64>, usize)) -> Vec<BatchRate> {
    batches
        .iter()
        .map(|b| {
            let (rate, count) = f(&b.confusion());
            BatchRate {
                mean_distance: b.mean_distance,
                rate,
                count,
            }
        })
        .collect()
}

/// Index of the batch holding `sample_id`.
pub fn baseline_batch_of(batches: &[PerformanceBatch], sample_id: &str) -> Result<usize> {
    batches
        .iter()
        .position(|b| b.contains(sample_id))
        .ok_or_else(|| Error::UnknownSample(sample_id.to_owned()))
}

/// Batch-discretized equal opportunity: TPR gaps weighted by positive share
/// and relative distance.
pub fn continuous_equal_opportunity(batches: &[PerformanceBatch], baseline_batch: usize) -> Result<ContinuousMetric> {
    weighted_rate_gap(&rates_by(batches, |c| (c.tpr(), c.positives())), baseline_batch)
}

/// Positive-prediction-rate gaps weighted by batch size share.
pub fn continuous_demographic_parity(batches: &[PerformanceBatch], baseline_batch: usize) -> Result<ContinuousMetric> {
    if batches.is_empty() {
        return Err(Error::EmptyInput("batches"));
    }
    weighted_rate_gap(&rates_by(batches, |c| (c.positive_rate(), c.total())), baseline_batch)
}

/// The equal-opportunity estimator conditioned on `y = 1` (TPR) and on
/// `y = 0` (FPR).
pub fn continuous_equalized_odds(
    batches: &[PerformanceBatch],
    baseline_batch: usize,
) -> Result<(ContinuousMetric, ContinuousMetric)> {
    let pos = continuous_equal_opportunity(batches, baseline_batch)?;
    let neg = weighted_rate_gap(&rates_by(batches, |c| (c.fpr(), c.negatives())), baseline_batch)?;
    Ok((pos, neg))
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "pearson inputs",
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::ZeroVariance("distance"));
    }
    if !(syy > 0.0) {
        return Err(Error::ZeroVariance("metric"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r between batch mean distance and batch metric, over batches where
/// the metric is defined.
pub fn distance_performance_correlation(batches: &[PerformanceBatch], metric: MetricKind) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = batches
        .iter()
        .filter_map(|b| b.metric(metric).map(|m| (b.mean_distance, m)))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InsufficientBatches {
            needed: 3,
            have: x.len(),
        });
    }
    pearson(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub metric: String,
    pub value: f64,
    pub normalized: Option<f64>,
    pub baseline_id: String,
    pub records_used: usize,
    pub baseline_batch: usize,
    pub substituted_baseline: Option<usize>,
    pub excluded_batches: Vec<usize>,
    pub notes: Vec<String>,
    pub batches: Vec<BatchRow>,
}

impl FairnessReport {
    pub fn from_metric(
        name: impl Into<String>,
        m: ContinuousMetric,
        baseline_id: impl Into<String>,
        batches: &[PerformanceBatch],
    ) -> Self {
        let records_used = m.rows.iter().map(|r| batches[r.batch].len()).sum();
        let mut notes = Vec::new();
        if let Some(s) = m.substituted_baseline {
            notes.push(format!(
                "baseline batch {} lacks the stratum; reference rate taken from batch {s}",
                m.baseline_batch
            ));
        }
        if !m.excluded_batches.is_empty() {
            notes.push(format!(
                "{} batches excluded for lacking the stratum",
                m.excluded_batches.len()
            ));
        }
        Self {
            metric: name.into(),
            value: m.value,
            normalized: m.normalized,
            baseline_id: baseline_id.into(),
            records_used,
            baseline_batch: m.baseline_batch,
            substituted_baseline: m.substituted_baseline,
            excluded_batches: m.excluded_batches,
            notes,
            batches: m.rows,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: bool, predicted: bool, d: f64) -> EvalRecord {
        EvalRecord {
            sample_id: id.into(),
            score: if predicted { 0.8 } else { 0.2 },
            predicted,
            label,
            distance: d,
        }
    }

    fn groups(pairs: &[(&str, u8)]) -> HashMap<String, u8> {
        pairs.iter().map(|(k, v)| ((*k).to_owned(), *v)).collect()
    }

    #[test]
    fn binary_equal_opportunity_cases() {
        let r = [
            rec("a", true, true, 0.),
            rec("b", true, true, 0.),
            rec("c", true, true, 0.),
            rec("d", true, false, 0.),
        ];
        let g = groups(&[("a", 0), ("b", 0), ("c", 1), ("d", 1)]);
        assert_eq!(binary_equal_opportunity(&r, &g).unwrap(), 0.5);
        let g = groups(&[("a", 0), ("b", 1), ("c", 0), ("d", 1)]);
        assert_eq!(binary_equal_opportunity(&r[..3], &g).unwrap(), 0.0);
        let r2 = [rec("a", true, true, 0.), rec("b", false, true, 0.)];
        let g2 = groups(&[("a", 0), ("b", 1)]);
        assert!(matches!(
            binary_equal_opportunity(&r2, &g2),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn binary_demographic_parity_cases() {
        let mut r = Vec::new();
        let mut g = HashMap::new();
        for i in 0..4 {
            r.push(rec(&format!("x{i}"), false, i < 3, 0.));
            g.insert(format!("x{i}"), 0);
            r.push(rec(&format!("y{i}"), false, i < 1, 0.));
            g.insert(format!("y{i}"), 1);
        }
        assert_eq!(binary_demographic_parity(&r, &g).unwrap(), 0.5);
        let only0: Vec<_> = r.iter().filter(|x| x.sample_id.starts_with('x')).cloned().collect();
        assert!(binary_demographic_parity(&only0, &g).is_err());
    }

    #[test]
    fn binary_equalized_odds_cases() {
        let r = [
            rec("a", true, true, 0.),
            rec("b", true, true, 0.),
            rec("c", false, false, 0.),
            rec("d", true, true, 0.),
            rec("e", true, false, 0.),
            rec("f", false, true, 0.),
            rec("g", false, false, 0.),
        ];
        let g = groups(&[("a", 0), ("b", 0), ("c", 0), ("d", 1), ("e", 1), ("f", 1), ("g", 1)]);
        assert_eq!(binary_equalized_odds(&r, &g).unwrap(), (0.5, -0.5));
        assert!(binary_equalized_odds(&r[..2], &g).is_err());
    }

    #[test]
    fn hand_evaluated_gap() {
        // p = (0, 0.5, 0.5) by construction, D = (0, -10, +10), rate offsets (-0.2, +0.2).
        let rates = [
            BatchRate {
                mean_distance: 0.0,
                rate: Some(0.5),
                count: 0,
            },
            BatchRate {
                mean_distance: -10.0,
                rate: Some(0.3),
                count: 5,
            },
            BatchRate {
                mean_distance: 10.0,
                rate: Some(0.7),
                count: 5,
            },
        ];
        let m = weighted_rate_gap(&rates, 0).unwrap();
        assert!((m.value - 2.0).abs() < 1e-12);
        assert!((m.normalized.unwrap() - 0.2).abs() < 1e-12);
    }

    fn batch(d: f64, outcomes: &[(bool, bool)]) -> PerformanceBatch {
        PerformanceBatch::new(
            outcomes
                .iter()
                .enumerate()
                .map(|(i, &(l, p))| rec(&format!("{d}-{i}"), l, p, d))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn three_batch_fixture() {
        // TPRs 0.3 / 0.5 / 0.7 with ten positives each, so p = 1/3 per batch.
        let tp = |k: usize| -> Vec<(bool, bool)> { (0..10).map(|i| (true, i < k)).collect() };
        let b = vec![batch(-10.0, &tp(3)), batch(0.0, &tp(5)), batch(10.0, &tp(7))];
        let m = continuous_equal_opportunity(&b, 1).unwrap();
        assert!((m.value - 4.0 / 3.0).abs() < 1e-12, "{}", m.value);
        let dp = continuous_demographic_parity(&b, 1).unwrap();
        assert!((dp.value - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_substitution() {
        let b = vec![
            batch(-5.0, &[(true, true), (true, false)]),
            batch(0.0, &[(false, false)]),
            batch(4.0, &[(true, true)]),
        ];
        let m = continuous_equal_opportunity(&b, 1).unwrap();
        assert_eq!(m.substituted_baseline, Some(2));
        assert_eq!(m.excluded_batches, vec![1]);
        // -5 * (0.5 - 1.0) * 2/3
        assert!((m.value - 5.0 / 3.0).abs() < 1e-12);
        let report = FairnessReport::from_metric("eo", m, "base", &b);
        assert_eq!(report.records_used, 3);
        assert_eq!(report.notes.len(), 2);
    }

    #[test]
    fn constant_rates_are_exactly_zero() {
        let o = [(true, true), (true, false), (false, true), (false, false)];
        let b: Vec<_> = [-7.0, -1.0, 0.0, 3.5, 20.0].iter().map(|&d| batch(d, &o)).collect();
        assert_eq!(continuous_equal_opportunity(&b, 2).unwrap().value, 0.0);
        assert_eq!(continuous_demographic_parity(&b, 2).unwrap().value, 0.0);
        let (p, n) = continuous_equalized_odds(&b, 2).unwrap();
        assert_eq!((p.value, n.value), (0.0, 0.0));
    }

    #[test]
    fn equalized_odds_positive_part_matches_eo() {
        let b = vec![
            batch(-3.0, &[(true, true), (false, true), (true, false)]),
            batch(0.0, &[(true, true), (false, false)]),
            batch(6.0, &[(true, false), (false, true), (false, false)]),
        ];
        let eo = continuous_equal_opportunity(&b, 1).unwrap();
        let (p, n) = continuous_equalized_odds(&b, 1).unwrap();
        assert_eq!(p, eo);
        // FPR: 1.0, 0.0, 0.5 with negatives 1, 1, 2.
        assert!((n.value - (0.25 * -3.0 * 1.0 + 0.5 * 6.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [0.9, 0.7, 0.5, 0.3];
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[0.5; 4]), Err(Error::ZeroVariance("metric"))));
        let b: Vec<_> = [0.0, 1.0].iter().map(|&d| batch(d, &[(true, true)])).collect();
        assert!(matches!(
            distance_performance_correlation(&b, MetricKind::F1),
            Err(Error::InsufficientBatches { .. })
        ));
    }
}

//! Softmax penalty weights over predicted performance and the
//! distance-weighted cross-entropy loss with epoch gating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::BayesEstimator;

pub const DEFAULT_FLOOR: f64 = 1e-7;
pub const DEFAULT_PENALTY_WEIGHT: f64 = 1.0;
pub const DEFAULT_PENALTY_START_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Epochs `e <= penalty_start_epoch` use plain mean BCE.
    pub penalty_start_epoch: usize,
    pub penalty_weight: f64,
    pub threshold: f64,
    pub floor: f64,
}

impl LossConfig {
    /// Defaults with the penalty starting after 30% of `epochs`.
    pub fn for_epochs(epochs: usize) -> Self {
        Self {
            penalty_start_epoch: (epochs as f64 * DEFAULT_PENALTY_START_FRACTION).floor() as usize,
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
            threshold: 0.5,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_weight > 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalty weight must be positive, got {}",
                self.penalty_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidParameter(format!(
                "decision threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if !(self.floor > 0.0 && self.floor <= 1e-3) {
            return Err(Error::InvalidParameter(format!(
                "log floor must lie in (0, 1e-3], got {}",
                self.floor
            )));
        }
        Ok(())
    }

    pub fn is_penalized(&self, epoch: usize) -> bool {
        epoch > self.penalty_start_epoch
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::for_epochs(0)
    }
}

/// `w_i = exp(1 - eps_i) / sum_j exp(1 - eps_j)`.
pub fn penalty_weights(epsilons: &[f64]) -> Result<Vec<f64>> {
    if epsilons.is_empty() {
        return Err(Error::EmptyInput("predicted performances"));
    }
    if epsilons.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidParameter("non-finite predicted performance".into()));
    }
    let inv: Vec<f64> = epsilons.iter().map(|e| 1.0 - e).collect();
    let top = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = inv.iter().map(|v| (v - top).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|v| v / sum).collect())
}

/// Binary cross-entropy with the score clamped to `[floor, 1 - floor]`.
pub fn bce(score: f64, label: bool, floor: f64) -> f64 {
    let s = score.clamp(floor, 1.0 - floor);
    if label {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

/// Whether `score` lies strictly inside the clamp range, so the loss has a
/// non-zero derivative in it.
pub fn bce_is_active(score: f64, floor: f64) -> bool {
    score > floor && score < 1.0 - floor
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "scores vs labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    Ok(())
}

pub fn mean_bce(scores: &[f64], labels: &[bool], floor: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    let sum: f64 = scores.iter().zip(labels).map(|(&s, &y)| bce(s, y, floor)).sum();
    Ok(sum / scores.len() as f64)
}

/// `alpha * sum_i BCE_i * p_i` for precomputed penalty weights `p`.
pub fn weighted_bce(scores: &[f64], labels: &[bool], weights: &[f64], alpha: f64, floor: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    if weights.len() != scores.len() {
        return Err(Error::LengthMismatch {
            what: "scores vs penalty weights",
            left: scores.len(),
            right: weights.len(),
        });
    }
    Ok(scores
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&s, &y), &p)| bce(s, y, floor) * p * alpha)
        .sum())
}

/// Penalty weights of a batch from the frozen estimator's predictions.
pub fn estimator_weights(distances: &[f64], est: &BayesEstimator) -> Result<Vec<f64>> {
    let eps: Vec<f64> = distances.iter().map(|&d| est.predict(d)).collect();
    penalty_weights(&eps)
}

/// Gated loss: mean BCE while `epoch <= pe`, the penalty-weighted sum after.
pub fn distance_loss(
    scores: &[f64],
    labels: &[bool],
    distances: &[f64],
    epoch: usize,
    cfg: &LossConfig,
    est: &BayesEstimator,
) -> Result<f64> {
    check_lengths(scores, labels)?;
    if distances.len() != scores.len() {
        return Err(Error::LengthMismatch {
            what: "scores vs distances",
            left: scores.len(),
            right: distances.len(),
        });
    }
    if !cfg.is_penalized(epoch) {
        return mean_bce(scores, labels, cfg.floor);
    }
    let w = estimator_weights(distances, est)?;
    weighted_bce(scores, labels, &w, cfg.penalty_weight, cfg.floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub sample_id: String,
    pub distance: f64,
    pub epsilon: f64,
    pub penalty_weight: f64,
}

/// Weight table for external training loops.
pub fn weight_table(ids: &[String], distances: &[f64], est: &BayesEstimator) -> Result<Vec<WeightRow>> {
    if ids.len() != distances.len() {
        return Err(Error::LengthMismatch {
            what: "ids vs distances",
            left: ids.len(),
            right: distances.len(),
        });
    }
    let eps: Vec<f64> = distances.iter().map(|&d| est.predict(d)).collect();
    let w = penalty_weights(&eps)?;
    Ok(ids
        .iter()
        .zip(distances)
        .zip(eps.iter().zip(w))
        .map(|((id, &distance), (&epsilon, penalty_weight))| WeightRow {
            sample_id: id.clone(),
            distance,
            epsilon,
            penalty_weight,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::Standardizer;

    fn linear_estimator(b0: f64, b1: f64) -> BayesEstimator {
        BayesEstimator {
            degree: 1,
            coefficients: vec![b0, b1],
            prior_precision: 1.0,
            noise_precision: 100.0,
            standardizer: Standardizer::identity(),
            posterior_covariance: vec![1e-3, 0.0, 0.0, 1e-3],
            log_evidence: 0.0,
            n_observations: 10,
            iterations: 1,
            converged: true,
            metric: None,
            baseline_id: None,
            excluded_batches: 0,
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(penalty_weights(&[0.3; 4]).unwrap(), vec![0.25; 4]);
        let w = penalty_weights(&[1.0, 1.0 - 3f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        let w = penalty_weights(&[0.9, 0.2, 0.5]).unwrap();
        assert!(w[1] > w[2] && w[2] > w[0]);
        assert!(penalty_weights(&[]).is_err());
        assert!(penalty_weights(&[f64::NAN]).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((bce(0.5, true, DEFAULT_FLOOR) - 2f64.ln()).abs() < 1e-15);
        assert!((bce(0.9, false, DEFAULT_FLOOR) - 10f64.ln()).abs() < 1e-12);
        let near_one = bce(1.0, true, DEFAULT_FLOOR);
        assert!(near_one > 0.0 && near_one <= 1.1 * DEFAULT_FLOOR);
        assert!(bce(0.0, true, DEFAULT_FLOOR).is_finite());
    }

    #[test]
    fn gate_and_uniform_penalty() {
        let est = linear_estimator(0.8, 0.0);
        let scores = [0.2, 0.7, 0.55, 0.9];
        let labels = [false, true, false, true];
        let d = [-3.0, 0.0, 7.0, 12.0];
        let cfg = LossConfig {
            penalty_start_epoch: 2,
            penalty_weight: 0.95,
            ..LossConfig::default()
        };
        let plain = mean_bce(&scores, &labels, cfg.floor).unwrap();
        for e in 0..=2 {
            assert_eq!(distance_loss(&scores, &labels, &d, e, &cfg, &est).unwrap(), plain);
        }
        let pen = distance_loss(&scores, &labels, &d, 3, &cfg, &est).unwrap();
        assert!((pen - 0.95 * plain).abs() < 1e-12);
    }

    #[test]
    fn composed_softmax_example() {
        // Penalties (0, ln 3) give weights (1/4, 3/4).
        let w = penalty_weights(&[1.0, 1.0 - 3f64.ln()]).unwrap();
        let s = (-1.0f64).exp();
        let loss = weighted_bce(&[s, s], &[true, true], &w, 0.97, DEFAULT_FLOOR).unwrap();
        assert!((loss - 0.97).abs() < 1e-12, "{loss}");

        // Through the estimator the clamp keeps eps in [0, 1]; equal BCE terms
        // still sum to alpha whatever the weights.
        let est = linear_estimator(0.9, -0.6);
        let cfg = LossConfig {
            penalty_start_epoch: 0,
            penalty_weight: 0.97,
            ..LossConfig::default()
        };
        let loss = distance_loss(&[s, s], &[true, true], &[0.0, 1.0], 1, &cfg, &est).unwrap();
        assert!((loss - 0.97).abs() < 1e-12, "{loss}");
        let w = estimator_weights(&[0.0, 1.0], &est).unwrap();
        assert!((w[1] / w[0] - 0.6f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn length_checks() {
        let est = linear_estimator(0.5, 0.0);
        let cfg = LossConfig::default();
        assert!(distance_loss(&[], &[], &[], 0, &cfg, &est).is_err());
        assert!(distance_loss(&[0.5], &[true, false], &[0.0], 0, &cfg, &est).is_err());
        assert!(distance_loss(&[0.5], &[true], &[0.0, 1.0], 5, &cfg, &est).is_err());
    }

    #[test]
    fn config_validation() {
        assert_eq!(LossConfig::for_epochs(100).penalty_start_epoch, 30);
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            floor: 0.1,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            penalty_weight: 0.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn weight_rows() {
        let est = linear_estimator(0.8, -0.01);
        let ids = vec!["a".to_owned(), "b".to_owned()];
        let rows = weight_table(&ids, &[-10.0, 10.0], &est).unwrap();
        assert!(rows[1].penalty_weight > rows[0].penalty_weight);
        assert!((rows[0].penalty_weight + rows[1].penalty_weight - 1.0).abs() < 1e-12);
        assert!((rows[0].epsilon - 0.9).abs() < 1e-12);
    }
}

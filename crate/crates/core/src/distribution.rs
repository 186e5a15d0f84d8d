//! Empirical distributions of ITA samples.

use crate::error::{Error, Result};

/// Sorted, finite, non-empty multiset of ITA samples for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinDistribution {
    source_id: String,
    samples: Vec<f64>,
}

impl SkinDistribution {
    pub fn new(source_id: impl Into<String>, mut samples: Vec<f64>) -> Result<Self> {
        let source_id = source_id.into();
        if samples.is_empty() {
            return Err(Error::EmptyDistribution(Some(source_id)));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(Some(source_id)));
        }
        samples.sort_by(f64::total_cmp);
        // -0.0 and 0.0 compare equal but sort apart; normalise so the ECDF sees one value.
        for v in &mut samples {
            if *v == 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self { source_id, samples })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Samples in ascending order.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Middle sample for odd `n`, mean of the middle pair for even `n`.
    pub fn median(&self) -> f64 {
        let n = self.samples.len();
        if n % 2 == 1 {
            self.samples[n / 2]
        } else {
            0.5 * (self.samples[n / 2 - 1] + self.samples[n / 2])
        }
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.samples.len() as f64;
        var.sqrt()
    }

    pub fn ecdf(&self) -> Ecdf {
        Ecdf::from_sorted(&self.samples)
    }

    /// Shorthand for `self.ecdf().quantile(p)` without building the ECDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        let n = self.samples.len();
        // Smallest k (1-based) with k / n >= p.
        let frac = |k: usize| k as f64 / n as f64;
        let mut k = ((p * n as f64).ceil() as usize).clamp(1, n);
        while k > 1 && frac(k - 1) >= p {
            k -= 1;
        }
        while k < n && frac(k) < p {
            k += 1;
        }
        Ok(self.samples[k - 1])
    }

    /// Counts of samples in `bins` equal-width bins over `[lo, hi]`.
    /// Samples outside the range are clamped into the edge bins.
    pub fn histogram(&self, bins: usize, lo: f64, hi: f64) -> Result<Vec<HistogramBin>> {
        if bins == 0 || !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "histogram needs bins > 0 and lo < hi, got {bins} bins over [{lo}, {hi}]"
            )));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in &self.samples {
            let i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[i] += 1;
        }
        let n = self.samples.len() as f64;
        Ok(counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                lo: lo + i as f64 * width,
                hi: lo + (i + 1) as f64 * width,
                count,
                density: count as f64 / (n * width),
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange(p))
    }
}

/// Right-continuous step function over distinct support points.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    support: Vec<f64>,
    cumulative: Vec<usize>,
    n: usize,
}

impl Ecdf {
    fn from_sorted(sorted: &[f64]) -> Self {
        let mut support = Vec::new();
        let mut cumulative = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            if support.last() == Some(&v) {
                *cumulative.last_mut().unwrap() = i + 1;
            } else {
                support.push(v);
                cumulative.push(i + 1);
            }
        }
        Self {
            support,
            cumulative,
            n: sorted.len(),
        }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    /// Cumulative probability at each support point; the last entry is exactly 1.
    pub fn probabilities(&self) -> Vec<f64> {
        self.cumulative.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.n
    }

    /// `F(x) = #{samples <= x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.support.partition_point(|&v| v <= x);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1] as f64 / self.n as f64
        }
    }

    /// Generalized inverse `inf { x : F(x) >= p }`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        let n = self.n as f64;
        let i = self
            .cumulative
            .partition_point(|&c| (c as f64 / n) < p)
            .min(self.support.len() - 1);
        Ok(self.support[i])
    }
}

/// Features fed to the desk models: mean, std, median, and the lower and
/// upper spreads `median - q10` and `q90 - median`.
pub fn summary_features(d: &SkinDistribution) -> [f64; 5] {
    let med = d.median();
    let q10 = d.quantile(0.1).expect("probability in range");
    let q90 = d.quantile(0.9).expect("probability in range");
    [d.mean(), d.std(), med, med - q10, q90 - med]
}

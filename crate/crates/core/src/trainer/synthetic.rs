//! Synthetic skin-tone datasets with tone-dependent label noise.
//!
//! Each sample has a tone `tau` (its ITA median) and two latent shape
//! variables `u1, u2` that set the spread of the lower and upper halves of a
//! two-piece normal ITA distribution. The clean label follows a logistic rule
//! on `u1` for dark tones and on a rotated combination of `u1, u2` for light
//! tones, with a smooth switch at mid-tone. A model must read the
//! distribution shape and trade the two tone regimes off against each other.
//! Labels are then flipped with a probability that grows linearly with tone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distribution::SkinDistribution;
use crate::error::{Error, Result};
use crate::trainer::model::sigmoid;

/// Which end of the tone range receives the extra label noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDirection {
    Lighter,
    Darker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub tone_min: f64,
    pub tone_max: f64,
    pub pixels_min: usize,
    pub pixels_max: usize,
    /// Base spread of each half of the ITA distribution, in degrees.
    pub spread: f64,
    /// Log-scale variation of the two half-spreads across samples.
    pub shape_variation: f64,
    pub sharpness: f64,
    /// Width of the dark/light regime switch, as a fraction of the tone range.
    pub regime_width: f64,
    /// Angle in degrees between the latent directions that decide the label
    /// for dark and for light tones; above 90 the two rules conflict.
    pub regime_angle: f64,
    pub kappa: f64,
    pub rho0: f64,
    pub noise_direction: NoiseDirection,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            tone_min: -30.0,
            tone_max: 60.0,
            pixels_min: 192,
            pixels_max: 320,
            spread: 5.0,
            shape_variation: 0.4,
            sharpness: 20.0,
            regime_width: 0.1,
            regime_angle: 130.0,
            kappa: 0.3,
            rho0: 0.05,
            noise_direction: NoiseDirection::Lighter,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub distribution: SkinDistribution,
    pub label: bool,
    pub tone: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("synthetic spec: {m}")));
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if !(self.tone_min < self.tone_max) || self.tone_min <= -90.0 || self.tone_max >= 90.0 {
            return bad(format!(
                "tone range [{}, {}] must be increasing and inside (-90, 90)",
                self.tone_min, self.tone_max
            ));
        }
        if self.pixels_min == 0 || self.pixels_min > self.pixels_max {
            return bad("pixel count range must satisfy 1 <= min <= max".into());
        }
        if !(self.spread > 0.0) || !(self.shape_variation >= 0.0) || !(self.regime_width > 0.0) {
            return bad("spread and regime width must be positive, shape variation non-negative".into());
        }
        if !self.sharpness.is_finite() || !(0.0..=180.0).contains(&self.regime_angle) {
            return bad("sharpness must be finite and the regime angle within [0, 180]".into());
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa must be >= 0, got {}", self.kappa));
        }
        if !(0.0..0.5).contains(&self.rho0) {
            return bad(format!("rho0 must lie in [0, 0.5), got {}", self.rho0));
        }
        if self.rho0 + self.kappa > 1.0 {
            return bad("rho0 + kappa must not exceed 1".into());
        }
        Ok(())
    }

    /// Flip probability at tone `tau`.
    pub fn flip_probability(&self, tau: f64) -> f64 {
        let h = (tau - self.tone_min) / (self.tone_max - self.tone_min);
        let h = match self.noise_direction {
            NoiseDirection::Lighter => h,
            NoiseDirection::Darker => 1.0 - h,
        };
        self.rho0 + self.kappa * h
    }
}

fn half_normal_draw<R: Rng>(rng: &mut R, tau: f64, lo: f64, hi: f64) -> f64 {
    loop {
        let a: f64 = StandardNormal.sample(rng);
        let a = a.abs();
        let v = if rng.random_bool(0.5) {
            tau + a * hi
        } else {
            tau - a * lo
        };
        if v > -90.0 && v < 90.0 {
            return v;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = (spec.n_samples - 1).to_string().len();
    let mut out = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let tau = rng.random_range(spec.tone_min..=spec.tone_max);
        let u1: f64 = StandardNormal.sample(&mut rng);
        let u2: f64 = StandardNormal.sample(&mut rng);
        let lo = spec.spread * (spec.shape_variation * u1).exp();
        let hi = spec.spread * (spec.shape_variation * u2).exp();
        let pixels = rng.random_range(spec.pixels_min..=spec.pixels_max);
        let samples: Vec<f64> = (0..pixels).map(|_| half_normal_draw(&mut rng, tau, lo, hi)).collect();

        let h = (tau - spec.tone_min) / (spec.tone_max - spec.tone_min);
        let m = sigmoid((h - 0.5) / spec.regime_width);
        let (sin, cos) = spec.regime_angle.to_radians().sin_cos();
        let light = cos * u1 + sin * u2;
        let clean = rng.random_bool(sigmoid(spec.sharpness * ((1.0 - m) * u1 + m * light)));
        let flip = rng.random_bool(spec.flip_probability(tau).clamp(0.0, 1.0));

        out.push(SyntheticSample {
            distribution: SkinDistribution::new(format!("syn{i:0width$}"), samples)?,
            label: clean ^ flip,
            tone: tau,
        });
    }
    Ok(out)
}

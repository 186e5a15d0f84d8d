use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Logistic,
    Mlp {
        hidden: usize,
    },
}

/// Logistic regression or a one-hidden-layer tanh perceptron with a logistic
/// output, parameters stored flat.
///
/// Layout: logistic `[w.., b]`; perceptron `[W1 (hidden x inputs, row-major),
/// b1 (hidden), w2 (hidden), b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskModel {
    arch: Architecture,
    inputs: usize,
    params: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl DeskModel {
    /// Logistic weights start at zero; perceptron weights are drawn from
    /// `N(0, 1/fan_in)` with zero biases.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, inputs: usize, rng: &mut R) -> Result<Self> {
        if inputs == 0 {
            return Err(Error::Precondition("model needs at least one input".into()));
        }
        let params = match arch {
            Architecture::Logistic => vec![0.0; inputs + 1],
            Architecture::Mlp { hidden: 0 } => {
                return Err(Error::Precondition("hidden layer must be non-empty".into()))
            }
            Architecture::Mlp { hidden } => {
                let mut p = vec![0.0; hidden * inputs + 2 * hidden + 1];
                let n1 = Normal::new(0.0, 1.0 / (inputs as f64).sqrt()).expect("valid std");
                let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("valid std");
                for v in &mut p[..hidden * inputs] {
                    *v = n1.sample(rng);
                }
                let w2 = hidden * inputs + hidden;
                for v in &mut p[w2..w2 + hidden] {
                    *v = n2.sample(rng);
                }
                p
            }
        };
        Ok(Self { arch, inputs, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.inputs);
        let p = &self.params;
        match self.arch {
            Architecture::Logistic => {
                let d = self.inputs;
                p[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[d]
            }
            Architecture::Mlp { hidden } => {
                let d = self.inputs;
                let (w1, rest) = p.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut out = b2[0];
                for j in 0..hidden {
                    let z: f64 = w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum();
                    out += w2[j] * (z + b1[j]).tanh();
                }
                out
            }
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Adds `dlogit * d(logit)/d(params)` into `grad`.
    pub fn accumulate_gradient(&self, x: &[f64], dlogit: f64, grad: &mut [f64]) {
        let p = &self.params;
        let d = self.inputs;
        match self.arch {
            Architecture::Logistic => {
                for (g, v) in grad[..d].iter_mut().zip(x) {
                    *g += dlogit * v;
                }
                grad[d] += dlogit;
            }
            Architecture::Mlp { hidden } => {
                let b1_at = hidden * d;
                let w2_at = b1_at + hidden;
                let b2_at = w2_at + hidden;
                for j in 0..hidden {
                    let z: f64 = p[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[b1_at + j];
                    let a = z.tanh();
                    grad[w2_at + j] += dlogit * a;
                    let gz = dlogit * p[w2_at + j] * (1.0 - a * a);
                    for (g, v) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += gz * v;
                    }
                    grad[b1_at + j] += gz;
                }
                grad[b2_at] += dlogit;
            }
        }
    }
}

//! Initial laws for the rescaled coordinate, shared by all three layers.
//!
//! The law describes `X_hat(0-)`: the discrete-event layer rounds
//! `sqrt(n)` times a draw to an integer queue length, the particle layer
//! uses draws directly, and the tail solver evaluates the law's tail on its
//! grid.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::TailCurve;
use crate::rng::RngState;

/// A probability law on `[0, infinity)` for the rescaled initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw {
    /// Point mass at `x0 >= 0`.
    Dirac { x0: f64 },
    /// Uniform on `[lo, hi)`, `0 <= lo < hi`.
    Uniform { lo: f64, hi: f64 },
    /// The law with the given (nonincreasing) tail function.
    FromTail(TailCurve),
    /// Empirical law of explicit rescaled values. The discrete-event layer
    /// assigns entry `i` to queue `i` and requires length `n`; sampling
    /// draws uniformly from the list.
    FromSamples(Vec<f64>),
}

/// Residual service policy for queues that start busy. The head-of-line job
/// of a busy queue gets a fresh full service draw; prelimit services are
/// `O(1/mu_n)`, so this vanishes at the diffusion scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualLaw {
    #[default]
    FreshServiceDraw,
}

/// Initial condition: the law of the rescaled state plus the residual
/// policy.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub law: InitLaw,
    pub residual_law: ResidualLaw,
}

impl From<InitLaw> for InitialCondition {
    fn from(law: InitLaw) -> Self {
        Self {
            law,
            residual_law: ResidualLaw::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum InitError {
    #[error("dirac point must be finite and nonnegative, got {0}")]
    BadDirac(f64),
    #[error("uniform bounds must satisfy 0 <= lo < hi, got [{lo}, {hi})")]
    BadUniform { lo: f64, hi: f64 },
    #[error("sample {index} is {value}; initial samples must be finite and nonnegative")]
    BadSample { index: usize, value: f64 },
    #[error("empty sample list")]
    NoSamples,
    #[error("initial law has {got} samples but the system has {want} queues")]
    SampleCount { got: usize, want: usize },
}

impl InitLaw {
    pub fn validate(&self) -> Result<(), InitError> {
        match self {
            InitLaw::Dirac { x0 } => {
                if x0.is_finite() && *x0 >= 0.0 {
                    Ok(())
                } else {
                    Err(InitError::BadDirac(*x0))
                }
            }
            InitLaw::Uniform { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && *lo >= 0.0 && hi > lo {
                    Ok(())
                } else {
                    Err(InitError::BadUniform { lo: *lo, hi: *hi })
                }
            }
            InitLaw::FromTail(_) => Ok(()),
            InitLaw::FromSamples(samples) => {
                if samples.is_empty() {
                    return Err(InitError::NoSamples);
                }
                for (index, &value) in samples.iter().enumerate() {
                    if !value.is_finite() || value < 0.0 {
                        return Err(InitError::BadSample { index, value });
                    }
                }
                Ok(())
            }
        }
    }

    /// Open tail `P(X > x)` of the law.
    pub fn tail(&self, x: f64) -> f64 {
        match self {
            InitLaw::Dirac { x0 } => {
                if x < *x0 {
                    1.0
                } else {
                    0.0
                }
            }
            InitLaw::Uniform { lo, hi } => {
                if x < *lo {
                    1.0
                } else if x >= *hi {
                    0.0
                } else {
                    (hi - x) / (hi - lo)
                }
            }
            InitLaw::FromTail(curve) => curve.eval(x),
            InitLaw::FromSamples(samples) => {
                let above = samples.iter().filter(|&&s| s > x).count();
                above as f64 / samples.len() as f64
            }
        }
    }

    /// Largest point that can carry mass (`infinity` for curves that never
    /// reach zero).
    pub fn support_max(&self) -> f64 {
        match self {
            InitLaw::Dirac { x0 } => *x0,
            InitLaw::Uniform { hi, .. } => *hi,
            InitLaw::FromTail(curve) => {
                if *curve.values().last().unwrap() > 0.0 {
                    f64::INFINITY
                } else {
                    curve.x_end()
                }
            }
            InitLaw::FromSamples(samples) => samples.iter().copied().fold(0.0, f64::max),
        }
    }

    /// One draw from the law.
    pub fn sample(&self, rng: &mut RngState) -> f64 {
        match self {
            InitLaw::Dirac { x0 } => *x0,
            InitLaw::Uniform { lo, hi } => {
                let u: f64 = rng.random();
                lo + (hi - lo) * u
            }
            InitLaw::FromTail(curve) => {
                let u: f64 = rng.random();
                curve.inverse(u)
            }
            InitLaw::FromSamples(samples) => {
                let k = rng.random_range(0..samples.len());
                samples[k]
            }
        }
    }

    /// The value assigned to index `i` of `n` under this law: explicit
    /// samples are assigned positionally, anything else is drawn.
    pub fn assign(&self, i: usize, n: usize, rng: &mut RngState) -> Result<f64, InitError> {
        match self {
            InitLaw::FromSamples(samples) => {
                if samples.len() != n {
                    return Err(InitError::SampleCount {
                        got: samples.len(),
                        want: n,
                    });
                }
                Ok(samples[i])
            }
            _ => Ok(self.sample(rng)),
        }
    }
}

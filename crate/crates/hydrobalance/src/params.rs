//! Model parameters and the limit-regime constants they induce.
//!
//! The prelimit system with `n` servers runs at rates
//!
//! ```text
//! lambda_n  = n*lambda + sqrt(n)*lambda_hat     (dedicated arrivals, per queue)
//! lambda0_n = b * n^(3/2)                       (load balancing stream, total)
//! mu_n      = n*mu + sqrt(n)*mu_hat             (service rate, per server)
//! ```
//!
//! under the critical load condition `lambda == mu`. The induced limit
//! constants are collected in [`DerivedConstants`]; every other module works
//! in terms of those.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngState;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// How the load balancing stream samples its `ell` candidate queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    /// `ell` distinct queues, uniform over subsets.
    Without,
    /// `ell` independent uniform picks; duplicates allowed.
    With,
}

impl std::fmt::Display for Replacement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Replacement::Without => write!(f, "without"),
            Replacement::With => write!(f, "with"),
        }
    }
}

/// Service time distribution, normalized to mean 1.
///
/// Prelimit service times are draws from this law divided by `mu_n`.
/// Each variant fixes its shape parameters so that the mean is exactly 1,
/// there is no atom at 0, and the variance `sigma_ser^2` is finite and
/// known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceDist {
    /// Exponential with rate 1 (`sigma_ser = 1`).
    Exponential,
    /// Constant 1 (`sigma_ser = 0`).
    Deterministic,
    /// Lognormal with `ln X ~ N(-s^2/2, s^2)`, `s^2 = ln(1 + sigma_ser^2)`.
    Lognormal { sigma_ser: f64 },
    /// Balanced-means two-phase hyperexponential; requires `sigma_ser >= 1`.
    Hyperexp2 { sigma_ser: f64 },
    /// Uniform on `[1 - half_width, 1 + half_width]`, `0 < half_width <= 1`
    /// (`sigma_ser = half_width / sqrt(3)`).
    UniformShifted { half_width: f64 },
}

impl ServiceDist {
    /// Standard deviation of the unscaled service law, in closed form.
    pub fn sigma_ser(&self) -> f64 {
        match *self {
            ServiceDist::Exponential => 1.0,
            ServiceDist::Deterministic => 0.0,
            ServiceDist::Lognormal { sigma_ser } => sigma_ser,
            ServiceDist::Hyperexp2 { sigma_ser } => sigma_ser,
            ServiceDist::UniformShifted { half_width } => half_width / 3.0_f64.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        match *self {
            ServiceDist::Exponential | ServiceDist::Deterministic => Ok(()),
            ServiceDist::Lognormal { sigma_ser } => {
                if sigma_ser.is_finite() && sigma_ser > 0.0 {
                    Ok(())
                } else {
                    Err(ParamsError::Service(
                        "lognormal requires finite sigma_ser > 0".into(),
                    ))
                }
            }
            ServiceDist::Hyperexp2 { sigma_ser } => {
                if sigma_ser.is_finite() && sigma_ser >= 1.0 {
                    Ok(())
                } else {
                    Err(ParamsError::Service(
                        "hyperexp2 requires sigma_ser >= 1 (squared CV >= 1)".into(),
                    ))
                }
            }
            ServiceDist::UniformShifted { half_width } => {
                if half_width.is_finite() && half_width > 0.0 && half_width <= 1.0 {
                    Ok(())
                } else {
                    Err(ParamsError::Service(
                        "uniform_shifted requires 0 < half_width <= 1".into(),
                    ))
                }
            }
        }
    }

    /// One draw from the unscaled (mean-1) law.
    #[inline]
    pub fn sample(&self, rng: &mut RngState) -> f64 {
        match *self {
            ServiceDist::Exponential => {
                let e: f64 = Exp1.sample(rng);
                e
            }
            ServiceDist::Deterministic => 1.0,
            ServiceDist::Lognormal { sigma_ser } => {
                let s2 = (1.0 + sigma_ser * sigma_ser).ln();
                let z: f64 = StandardNormal.sample(rng);
                (-0.5 * s2 + s2.sqrt() * z).exp()
            }
            ServiceDist::Hyperexp2 { sigma_ser } => {
                // Balanced means: p1/r1 = p2/r2 = 1/2, so mean = 1 and the
                // squared coefficient of variation is sigma_ser^2.
                let c2 = sigma_ser * sigma_ser;
                let p1 = 0.5 * (1.0 + ((c2 - 1.0) / (c2 + 1.0)).sqrt());
                let e: f64 = Exp1.sample(rng);
                let u: f64 = rng.random();
                if u < p1 {
                    e / (2.0 * p1)
                } else {
                    e / (2.0 * (1.0 - p1))
                }
            }
            ServiceDist::UniformShifted { half_width } => {
                let u: f64 = rng.random();
                1.0 - half_width + 2.0 * half_width * u
            }
        }
    }
}

/// Prelimit parameters of the `n`-server system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Number of servers.
    pub n: u32,
    /// Base per-server arrival rate (first-order coefficient of `lambda_n`).
    pub lambda: f64,
    /// `sqrt(n)`-order arrival perturbation.
    pub lambda_hat: f64,
    /// Load balancing stream intensity coefficient (`lambda0_n = b*n^(3/2)`).
    pub b: f64,
    /// Base service rate; must equal `lambda` (critical load).
    pub mu: f64,
    /// `sqrt(n)`-order service perturbation.
    pub mu_hat: f64,
    /// Number of queues sampled per load-balanced arrival; at least 2.
    pub ell: u32,
    /// Candidate sampling mode.
    pub replacement: Replacement,
    /// Service time law (mean 1, scaled by `1/mu_n` at runtime).
    pub service: ServiceDist,
    /// Run seed; see [`crate::rng`] for the stream derivation.
    pub seed: u64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        fn positive(field: &'static str, value: f64) -> Result<(), ParamsError> {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(ParamsError::NotPositive { field, value })
            }
        }
        fn finite(field: &'static str, value: f64) -> Result<(), ParamsError> {
            if value.is_finite() {
                Ok(())
            } else {
                Err(ParamsError::NotFinite { field, value })
            }
        }

        if self.n == 0 {
            return Err(ParamsError::NoServers);
        }
        positive("lambda", self.lambda)?;
        positive("mu", self.mu)?;
        finite("lambda_hat", self.lambda_hat)?;
        finite("mu_hat", self.mu_hat)?;
        finite("b", self.b)?;
        // b = 0 is the uncoupled system (no load balancing stream); it is
        // allowed and used as a reference case.
        if self.b < 0.0 {
            return Err(ParamsError::NotPositive {
                field: "b",
                value: self.b,
            });
        }
        if self.lambda != self.mu {
            return Err(ParamsError::NotCriticallyLoaded {
                lambda: self.lambda,
                mu: self.mu,
            });
        }
        if self.ell < 2 {
            return Err(ParamsError::EllTooSmall(self.ell));
        }
        if self.replacement == Replacement::Without && u64::from(self.ell) > u64::from(self.n) {
            return Err(ParamsError::EllExceedsN {
                ell: self.ell,
                n: self.n,
            });
        }
        self.service.validate()
    }
}

/// Limit-regime constants induced by a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    /// Dedicated arrival rate per queue: `n*lambda + sqrt(n)*lambda_hat`.
    pub lambda_n: f64,
    /// Load balancing stream rate: `b * n^(3/2)`.
    pub lambda0_n: f64,
    /// Service rate per server: `n*mu + sqrt(n)*mu_hat`.
    pub mu_n: f64,
    /// Load parameter `(lambda_hat + b - mu_hat) / lambda`; negative means stable.
    pub rho: f64,
    /// `lambda_hat - mu_hat`; constant drift of a rescaled queue.
    pub b1: f64,
    /// `-b1 = -lambda*rho + b`; advection coefficient of the tail equation.
    pub c1: f64,
    /// `b * ell`; strength of the selection drift.
    pub b0: f64,
    /// Service time standard deviation.
    pub sigma_ser: f64,
    /// `lambda * (1 + sigma_ser^2)`; diffusion variance.
    pub sigma2: f64,
    /// `sigma2 / 2`; viscosity of the tail equation.
    pub a: f64,
}

/// Compute every limit constant from validated parameters.
///
/// Deterministic and pure; rejects inputs whose derived values would not be
/// finite.
pub fn derive(params: &ModelParams) -> Result<DerivedConstants, ParamsError> {
    params.validate()?;
    let n = f64::from(params.n);
    let sqrt_n = n.sqrt();
    let lambda_n = n * params.lambda + sqrt_n * params.lambda_hat;
    let lambda0_n = params.b * n * sqrt_n;
    let mu_n = n * params.mu + sqrt_n * params.mu_hat;
    let rho = (params.lambda_hat + params.b - params.mu_hat) / params.lambda;
    let b1 = params.lambda_hat - params.mu_hat;
    let c1 = params.mu_hat - params.lambda_hat;
    let b0 = params.b * f64::from(params.ell);
    let sigma_ser = params.service.sigma_ser();
    let sigma2 = params.lambda * (1.0 + sigma_ser * sigma_ser);
    let a = sigma2 / 2.0;

    let derived = DerivedConstants {
        lambda_n,
        lambda0_n,
        mu_n,
        rho,
        b1,
        c1,
        b0,
        sigma_ser,
        sigma2,
        a,
    };
    for (field, value) in [
        ("lambda_n", lambda_n),
        ("lambda0_n", lambda0_n),
        ("mu_n", mu_n),
        ("rho", rho),
        ("b1", b1),
        ("c1", c1),
        ("b0", b0),
        ("sigma2", sigma2),
        ("a", a),
    ] {
        if !value.is_finite() {
            return Err(ParamsError::NotFinite { field, value });
        }
    }
    if lambda_n <= 0.0 {
        return Err(ParamsError::NotPositive {
            field: "lambda_n",
            value: lambda_n,
        });
    }
    if mu_n <= 0.0 {
        return Err(ParamsError::NotPositive {
            field: "mu_n",
            value: mu_n,
        });
    }
    debug_assert!(a > 0.0);
    debug_assert!((c1 - (-params.lambda * rho + params.b)).abs() <= 1e-12 * c1.abs().max(1.0));
    Ok(derived)
}

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("server count n must be at least 1")]
    NoServers,
    #[error("critical load requires lambda == mu, got lambda={lambda} mu={mu}")]
    NotCriticallyLoaded { lambda: f64, mu: f64 },
    #[error("sample size ell must be at least 2, got {0}")]
    EllTooSmall(u32),
    #[error("ell={ell} exceeds n={n} when sampling without replacement")]
    EllExceedsN { ell: u32, n: u32 },
    #[error("{field} must be positive and finite, got {value}")]
    NotPositive { field: &'static str, value: f64 },
    #[error("{field} must be finite, got {value}")]
    NotFinite { field: &'static str, value: f64 },
    #[error("service distribution: {0}")]
    Service(String),
}

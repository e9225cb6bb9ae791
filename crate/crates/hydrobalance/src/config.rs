//! TOML configuration schema shared by the command-line tools.
//!
//! One document configures everything; each subcommand reads the sections
//! it needs. Unknown fields are rejected everywhere. A run writes its
//! fully resolved configuration back out as `manifest.toml` (plus the
//! seeds it used and the crate version), and that manifest is itself a
//! valid `--config` input: re-running from it reproduces every data file
//! byte for byte.
//!
//! ```toml
//! [model]
//! n = 2000
//! lambda = 1.0
//! lambda_hat = 0.0
//! b = 0.2
//! mu = 1.0
//! mu_hat = 0.21
//! ell = 4
//! replacement = "without"
//! seed = 1729
//!
//! [model.service]
//! kind = "exponential"          # deterministic | lognormal | hyperexp2 | uniform_shifted
//!
//! [init]
//! kind = "uniform"              # dirac | uniform | from_samples | from_tail
//! lo = 0.0
//! hi = 10.0
//!
//! [sim]
//! snapshots = [1.0, 5.0]
//! replications = 1
//!
//! [pde]
//! dx = 0.01                     # x_max defaults to a multiple of the decay scale
//!
//! [mv]
//! particles = 100000
//! dt = 0.001
//! mode = "pde-fed"
//! snapshots = [1.0]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::init::{InitLaw, InitialCondition};
use crate::io::{read_tail_csv, IoError};
use crate::params::{ModelParams, Replacement, ServiceDist};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelParams,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub mv: MvConfig,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
    /// Present in manifests; records how the file came to be.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    Dirac {
        x0: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    FromSamples {
        samples: Vec<f64>,
    },
    /// Tail read from a CSV with `x,v` columns (e.g. a profile file written
    /// by the `pde` subcommand).
    FromTail {
        file: String,
    },
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Uniform { lo: 0.0, hi: 10.0 }
    }
}

impl InitConfig {
    /// Resolve to an initial condition, reading referenced files relative
    /// to `base`.
    pub fn resolve(&self, base: &Path) -> Result<InitialCondition, ConfigError> {
        let law = match self {
            InitConfig::Dirac { x0 } => InitLaw::Dirac { x0: *x0 },
            InitConfig::Uniform { lo, hi } => InitLaw::Uniform { lo: *lo, hi: *hi },
            InitConfig::FromSamples { samples } => InitLaw::FromSamples(samples.clone()),
            InitConfig::FromTail { file } => {
                let path = base.join(file);
                InitLaw::FromTail(read_tail_csv(&path)?)
            }
        };
        law.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(InitialCondition::from(law))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Snapshot times, sorted.
    pub snapshots: Vec<f64>,
    pub replications: usize,
    /// Record the selection-stream rank histogram.
    pub record_ranks: bool,
    /// Queue indices whose rescaled paths are written out.
    pub tracked: Vec<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            snapshots: vec![1.0, 5.0],
            replications: 1,
            record_ranks: false,
            tracked: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    /// Cell width.
    pub dx: f64,
    /// Domain size; 0 means "derive from the coefficients and the initial
    /// support".
    pub x_max: f64,
    pub cfl: f64,
    /// Hard cap on the time step; 0 means `dx / 2`.
    pub dt_max: f64,
    /// Output times.
    pub times: Vec<f64>,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            dx: 0.01,
            x_max: 0.0,
            cfl: 0.5,
            dt_max: 0.0,
            times: vec![1.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MvMode {
    PdeFed,
    #[serde(rename = "self")]
    SelfConsistent,
    Stationary,
}

impl std::fmt::Display for MvMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MvMode::PdeFed => write!(f, "pde-fed"),
            MvMode::SelfConsistent => write!(f, "self"),
            MvMode::Stationary => write!(f, "stationary"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MvConfig {
    pub particles: usize,
    pub dt: f64,
    pub mode: MvMode,
    pub snapshots: Vec<f64>,
}

impl Default for MvConfig {
    fn default() -> Self {
        Self {
            particles: 100_000,
            dt: 1e-3,
            mode: MvMode::PdeFed,
            snapshots: vec![1.0],
        }
    }
}

/// Named cross-layer experiments; see the harness module for what each one
/// runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Hydro,
    MvVsPde,
    StationaryLimits,
    RoutingCheck,
    Invariance,
    VarianceTracking,
}

impl std::fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentName::Hydro => "hydro",
            ExperimentName::MvVsPde => "mv_vs_pde",
            ExperimentName::StationaryLimits => "stationary_limits",
            ExperimentName::RoutingCheck => "routing_check",
            ExperimentName::Invariance => "invariance",
            ExperimentName::VarianceTracking => "variance_tracking",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    /// Comparison server count for the improving-in-n check (hydro).
    #[serde(default = "default_alt_n")]
    pub alt_n: u32,
    /// Tolerances; each experiment reads the ones it understands.
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Chaos-diagnostic ensemble sizes (mv_vs_pde).
    #[serde(default = "default_chaos_sizes")]
    pub chaos_sizes: Vec<usize>,
    /// Chaos-diagnostic replications (mv_vs_pde).
    #[serde(default = "default_chaos_replications")]
    pub chaos_replications: usize,
    /// Sweep of selection intensities (stationary_limits).
    #[serde(default = "default_b_sweep")]
    pub b_sweep: Vec<f64>,
    /// Candidate-set sizes checked by routing_check, as (n, ell) pairs.
    #[serde(default = "default_routing_cases")]
    pub routing_cases: Vec<(u32, u32)>,
}

impl ExperimentConfig {
    /// The named experiment with default knobs.
    pub fn named(name: ExperimentName) -> Self {
        Self {
            name,
            alt_n: default_alt_n(),
            tolerances: Tolerances::default(),
            chaos_sizes: default_chaos_sizes(),
            chaos_replications: default_chaos_replications(),
            b_sweep: default_b_sweep(),
            routing_cases: default_routing_cases(),
        }
    }
}

fn default_alt_n() -> u32 {
    500
}

fn default_chaos_sizes() -> Vec<usize> {
    vec![1000, 10_000]
}

fn default_chaos_replications() -> usize {
    32
}

fn default_b_sweep() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
}

fn default_routing_cases() -> Vec<(u32, u32)> {
    vec![(6, 3), (8, 2), (10, 4)]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Mean KS between empirical and profile tails (hydro).
    pub mean_ks: f64,
    /// Relative error of the replicated spread vs the profile spread
    /// (hydro, variance_tracking).
    pub sigma_rel: f64,
    /// KS between profile-fed particles and the profile (mv_vs_pde).
    pub mv_ks: f64,
    /// KS between self-consistent and profile-fed ensembles (mv_vs_pde).
    pub mv_mode_gap_ks: f64,
    /// Sup distance to the exponential small-b limit (stationary_limits).
    pub small_b_sup: f64,
    /// Mean bound in the large-b collapse (stationary_limits).
    pub large_b_mean: f64,
    /// Law-vs-oracle absolute error (routing_check).
    pub law_abs: f64,
    /// Pairwise KS between service laws (invariance).
    pub pairwise_ks: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mean_ks: 0.05,
            sigma_rel: 0.10,
            mv_ks: 0.01,
            mv_mode_gap_ks: 0.02,
            small_b_sup: 0.01,
            large_b_mean: 0.05,
            law_abs: 1e-12,
            pairwise_ks: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub version: String,
    pub command: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// The manifest for a finished run: this configuration, fully
    /// resolved, plus provenance. Re-reading it as a config reproduces the
    /// run.
    pub fn manifest(&self, command: &str, seeds: Vec<u64>) -> Config {
        let mut resolved = self.clone();
        resolved.manifest = Some(ManifestInfo {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seeds,
        });
        resolved
    }

    /// Reference parameter set used as the default experiment baseline:
    /// critical unit rates, `rho = -0.01`, `c1 = 0.21`, `b = 0.2`,
    /// `ell = 4`, unit viscosity, exponential service.
    pub fn reference() -> Self {
        Config {
            model: ModelParams {
                n: 2000,
                lambda: 1.0,
                lambda_hat: 0.0,
                b: 0.2,
                mu: 1.0,
                mu_hat: 0.21,
                ell: 4,
                replacement: Replacement::Without,
                service: ServiceDist::Exponential,
                seed: 1729,
            },
            init: InitConfig::default(),
            sim: SimConfig::default(),
            pde: PdeConfig::default(),
            mv: MvConfig::default(),
            experiment: None,
            manifest: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trips() {
        let cfg = Config::reference();
        let text = cfg.to_toml().unwrap();
        let back = Config::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut text = Config::reference().to_toml().unwrap();
        text.push_str("\n[model_extras]\nfoo = 1\n");
        assert!(Config::from_toml_str(&text).is_err());

        let text = Config::reference()
            .to_toml()
            .unwrap()
            .replace("lambda_hat", "lambda_hta");
        assert!(Config::from_toml_str(&text).is_err());
    }

    #[test]
    fn manifest_is_a_valid_config() {
        let cfg = Config::reference();
        let manifest = cfg.manifest("sim", vec![1, 2, 3]);
        let text = manifest.to_toml().unwrap();
        let back = Config::from_toml_str(&text).unwrap();
        assert_eq!(back.model, cfg.model);
        assert_eq!(back.manifest.unwrap().seeds, vec![1, 2, 3]);
    }

    #[test]
    fn init_kinds_parse() {
        let text = r#"
[model]
n = 10
lambda = 1.0
lambda_hat = 0.0
b = 0.2
mu = 1.0
mu_hat = 0.21
ell = 4
replacement = "with"
seed = 7

[model.service]
kind = "lognormal"
sigma_ser = 1.0

[init]
kind = "dirac"
x0 = 3.0
"#;
        let cfg = Config::from_toml_str(text).unwrap();
        assert_eq!(cfg.init, InitConfig::Dirac { x0: 3.0 });
        assert_eq!(cfg.model.replacement, Replacement::With);
        let ic = cfg.init.resolve(Path::new(".")).unwrap();
        assert_eq!(ic.law, InitLaw::Dirac { x0: 3.0 });
    }
}

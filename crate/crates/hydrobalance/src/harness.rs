//! Named cross-layer experiments and their reports.
//!
//! Each experiment runs a fixed pipeline, compares layers with the metrics
//! from [`crate::measure`], and returns a [`Report`] of metric rows with
//! pass/fail status against its tolerances. Reports serialize to
//! `report.csv` plus plot-ready per-metric files, along with a manifest
//! that reproduces the run bit for bit.
//!
//! Layer agreement is always judged at fixed snapshot times with KS and L1
//! distances between tails — a practical surrogate for convergence of the
//! whole measure-valued path, not a path-space metric.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Config, ExperimentConfig, ExperimentName, PdeConfig, Tolerances};
use crate::des::{self, DesError, SnapshotPlan, SnapshotSummary};
use crate::init::{InitLaw, InitialCondition};
use crate::io::{self, IoError};
use crate::measure::{EmpiricalMeasure, MeasureError, TailCurve};
use crate::mv::{self, ChaosDiagnostic, DriftSource, MvCoeffs, MvError};
use crate::params::{derive, ModelParams, ParamsError, Replacement, ServiceDist};
use crate::pde::{stationary, GridSpec, MacroStats, PdeCoeffs, PdeError, TailGrid, TailHistory};
use crate::rng::{domain, RngState};
use crate::routing::{enumerate_selection_law, rank, rank_law, select_direct, RoutingError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{stage}: {source}")]
    Des {
        stage: &'static str,
        source: DesError,
    },
    #[error("{stage}: {source}")]
    Pde {
        stage: &'static str,
        source: PdeError,
    },
    #[error("{stage}: {source}")]
    Mv {
        stage: &'static str,
        source: MvError,
    },
    #[error("{stage}: {source}")]
    Routing {
        stage: &'static str,
        source: RoutingError,
    },
    #[error("{stage}: {source}")]
    Measure {
        stage: &'static str,
        source: MeasureError,
    },
    #[error("{stage}: {source}")]
    Params {
        stage: &'static str,
        source: ParamsError,
    },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("config: {0}")]
    Config(String),
}

/// One metric row of a report. `t` and `tolerance` are NaN when not
/// applicable.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub metric: String,
    pub t: f64,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl MetricRow {
    fn le(metric: impl Into<String>, t: f64, value: f64, tolerance: f64) -> Self {
        Self {
            metric: metric.into(),
            t,
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    fn info(metric: impl Into<String>, t: f64, value: f64) -> Self {
        Self {
            metric: metric.into(),
            t,
            value,
            tolerance: f64::NAN,
            pass: true,
        }
    }

    fn check(metric: impl Into<String>, t: f64, value: f64, pass: bool) -> Self {
        Self {
            metric: metric.into(),
            t,
            value,
            tolerance: f64::NAN,
            pass,
        }
    }
}

/// An extra plot-ready CSV bundled with a report.
#[derive(Debug, Clone)]
pub struct ExtraCsv {
    pub name: String,
    pub header: String,
    pub rows: Vec<Vec<f64>>,
}

/// Result of an experiment: metric rows, overall pass, and the manifest
/// that reproduces it.
#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: String,
    pub rows: Vec<MetricRow>,
    pub pass: bool,
    pub manifest: Config,
    pub extras: Vec<ExtraCsv>,
}

impl Report {
    fn new(experiment: String, manifest: Config) -> Self {
        Self {
            experiment,
            rows: Vec::new(),
            pass: true,
            manifest,
            extras: Vec::new(),
        }
    }

    fn push(&mut self, row: MetricRow) {
        self.pass &= row.pass;
        self.rows.push(row);
    }
}

fn des_stage(stage: &'static str) -> impl Fn(DesError) -> HarnessError {
    move |source| HarnessError::Des { stage, source }
}

fn pde_stage(stage: &'static str) -> impl Fn(PdeError) -> HarnessError {
    move |source| HarnessError::Pde { stage, source }
}

fn mv_stage(stage: &'static str) -> impl Fn(MvError) -> HarnessError {
    move |source| HarnessError::Mv { stage, source }
}

/// Replication seeds for a base seed: consecutive offsets, each keying an
/// independent stream. Identical entries would give identical
/// replications, which is permitted and sometimes useful.
pub fn replication_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|r| base.wrapping_add(r)).collect()
}

/// Resolve the grid for a model/initial-condition pair: explicit `x_max`
/// if given, otherwise a multiple of the decay scale past the initial
/// support.
pub fn grid_for(
    coeffs: &PdeCoeffs,
    law: &InitLaw,
    pde_cfg: &PdeConfig,
) -> Result<GridSpec, HarnessError> {
    let x_max = if pde_cfg.x_max > 0.0 {
        pde_cfg.x_max
    } else {
        let support = law.support_max();
        let support = if support.is_finite() { support } else { 0.0 };
        GridSpec::default_x_max(coeffs, support)
    };
    let cells = (x_max / pde_cfg.dx).round().max(8.0) as usize;
    GridSpec::new(cells as f64 * pde_cfg.dx, cells).map_err(pde_stage("grid setup"))
}

fn solver_with_options(
    law: &InitLaw,
    coeffs: PdeCoeffs,
    spec: GridSpec,
    pde_cfg: &PdeConfig,
) -> Result<TailGrid, HarnessError> {
    let mut grid = TailGrid::init_tail(law, coeffs, spec).map_err(pde_stage("profile init"))?;
    if pde_cfg.cfl > 0.0 {
        grid.cfl = pde_cfg.cfl.min(0.5);
    }
    if pde_cfg.dt_max > 0.0 {
        grid.dt_max = pde_cfg.dt_max;
    }
    Ok(grid)
}

/// Simulated-versus-profile comparison for one parameter set.
#[derive(Debug, Clone)]
pub struct HydroRun {
    pub times: Vec<f64>,
    /// `ks[k][r]`: KS distance of replication `r` against the profile at
    /// time `k`.
    pub ks: Vec<Vec<f64>>,
    pub w1: Vec<Vec<f64>>,
    /// Worst-case empirical mass beyond the profile domain, per time.
    pub mass_beyond: Vec<f64>,
    pub summary: Vec<SnapshotSummary>,
    pub macro_stats: Vec<MacroStats>,
    /// All replications pooled, per time.
    pub pooled: Vec<EmpiricalMeasure>,
    pub curves: Vec<TailCurve>,
}

/// Run replications of the discrete-event system and the tail equation
/// from the same initial law, and compare their tails at the given times.
pub fn run_hydro(
    model: &ModelParams,
    law: &InitLaw,
    times: &[f64],
    seeds: &[u64],
    pde_cfg: &PdeConfig,
) -> Result<HydroRun, HarnessError> {
    let derived = derive(model).map_err(|source| HarnessError::Params {
        stage: "derive constants",
        source,
    })?;
    let coeffs = PdeCoeffs::new(model, &derived);
    let spec = grid_for(&coeffs, law, pde_cfg)?;
    let mut grid = solver_with_options(law, coeffs, spec, pde_cfg)?;

    let mut curves = Vec::with_capacity(times.len());
    let mut macro_stats = Vec::with_capacity(times.len());
    for &t in times {
        grid.evolve(t).map_err(pde_stage("profile evolution"))?;
        curves.push(grid.tail_curve());
        macro_stats.push(grid.macro_stats().map_err(pde_stage("profile moments"))?);
    }

    let ic = InitialCondition::from(law.clone());
    let plan = SnapshotPlan::at_times(times.to_vec());
    let replicated = des::run_replications(model, &ic, &plan, seeds)
        .map_err(des_stage("prelimit replications"))?;

    let mut ks = vec![Vec::with_capacity(seeds.len()); times.len()];
    let mut w1 = vec![Vec::with_capacity(seeds.len()); times.len()];
    let mut mass_beyond = vec![0.0f64; times.len()];
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); times.len()];
    for run in &replicated.runs {
        for (k, snap) in run.snapshots.iter().enumerate() {
            let measure = snap.measure.as_ref().expect("plan records measures");
            ks[k].push(measure.ks_distance(&curves[k]));
            w1[k].push(measure.w1_distance(&curves[k]));
            mass_beyond[k] = mass_beyond[k].max(measure.tail(curves[k].x_end()));
            pooled[k].extend_from_slice(measure.samples());
        }
    }
    let pooled = pooled
        .into_iter()
        .map(|samples| {
            EmpiricalMeasure::from_samples(samples).map_err(|source| HarnessError::Measure {
                stage: "pooling replications",
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(HydroRun {
        times: times.to_vec(),
        ks,
        w1,
        mass_beyond,
        summary: replicated.summary,
        macro_stats,
        pooled,
        curves,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// The profile-fed and self-consistent particle runs against the profile.
#[derive(Debug, Clone)]
pub struct MvVsPdeRun {
    pub t: f64,
    pub ks_pde_fed: f64,
    pub ks_between_modes: f64,
    pub chaos: Vec<(usize, ChaosDiagnostic)>,
}

pub fn run_mv_vs_pde(
    model: &ModelParams,
    law: &InitLaw,
    cfg: &Config,
    exp: &ExperimentConfig,
) -> Result<MvVsPdeRun, HarnessError> {
    let derived = derive(model).map_err(|source| HarnessError::Params {
        stage: "derive constants",
        source,
    })?;
    let coeffs = PdeCoeffs::new(model, &derived);
    let mv_coeffs = MvCoeffs::new(model, &derived);
    let t_end = cfg
        .mv
        .snapshots
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .max(cfg.mv.dt);

    let spec = grid_for(&coeffs, law, &cfg.pde)?;
    let mut grid = solver_with_options(law, coeffs, spec, &cfg.pde)?;
    let mut history = TailHistory::default();
    grid.evolve_recording(t_end, &mut history)
        .map_err(pde_stage("profile evolution"))?;
    let curve = grid.tail_curve();

    let fed = mv::run(
        cfg.mv.particles,
        law,
        &DriftSource::PdeFed {
            history: &history,
            dx: grid.dx(),
        },
        cfg.mv.dt,
        &[t_end],
        mv_coeffs,
        model.seed,
        0,
    )
    .map_err(mv_stage("profile-fed particles"))?;
    let ks_pde_fed = fed.snapshots[0].measure.ks_distance(&curve);

    let selfc = mv::run(
        cfg.mv.particles,
        law,
        &DriftSource::SelfConsistent,
        cfg.mv.dt,
        &[t_end],
        mv_coeffs,
        model.seed,
        1,
    )
    .map_err(mv_stage("self-consistent particles"))?;
    let ks_between_modes = selfc.snapshots[0]
        .measure
        .ks_distance(&fed.snapshots[0].measure.tail_curve(curve.x_end()));

    // Pairwise-indicator chaos diagnostic on self-consistent ensembles of
    // increasing size. A coarser step is enough: the O(1/N) coupling is
    // what is being measured.
    let chaos_dt = (cfg.mv.dt * 10.0).min(0.01);
    let steps = (t_end / chaos_dt).round().max(1.0);
    let chaos_dt = t_end / steps;
    let threshold = curve.inverse(0.5);
    let mut chaos = Vec::new();
    for &size in &exp.chaos_sizes {
        let ensembles: Vec<Vec<f64>> = (0..exp.chaos_replications as u64)
            .into_par_iter()
            .map(|lane| {
                mv::run(
                    size,
                    law,
                    &DriftSource::SelfConsistent,
                    chaos_dt,
                    &[t_end],
                    mv_coeffs,
                    model.seed,
                    2 + lane,
                )
                .map(|out| out.snapshots[0].measure.samples().to_vec())
            })
            .collect::<Result<_, _>>()
            .map_err(mv_stage("chaos ensembles"))?;
        let views: Vec<&[f64]> = ensembles.iter().map(|e| e.as_slice()).collect();
        chaos.push((
            size,
            mv::chaos_diagnostic(&views, threshold).map_err(mv_stage("chaos diagnostic"))?,
        ));
    }

    Ok(MvVsPdeRun {
        t: t_end,
        ks_pde_fed,
        ks_between_modes,
        chaos,
    })
}

/// One row of the stationary-profile sweep over the selection intensity.
#[derive(Debug, Clone, Copy)]
pub struct StationarySweepRow {
    pub b: f64,
    pub alpha: f64,
    /// Sup distance to the small-b exponential limit on [0, 200].
    pub sup_err_exponential: f64,
    pub m_mac: f64,
}

/// Evaluate the closed-form stationary profile across selection
/// intensities at fixed `(lambda, rho, a, ell)`.
pub fn stationary_sweep(
    lambda: f64,
    rho: f64,
    a: f64,
    ell: u32,
    bs: &[f64],
) -> Result<Vec<StationarySweepRow>, HarnessError> {
    let rate = lambda * rho.abs() / a;
    bs.iter()
        .map(|&b| {
            let coeffs = PdeCoeffs {
                a,
                c1: -lambda * rho + b,
                b,
                ell,
            };
            let profile = stationary(coeffs).map_err(pde_stage("stationary profile"))?;
            let mut sup: f64 = 0.0;
            let mut x = 0.0;
            while x <= 200.0 {
                sup = sup.max((profile.v(x) - (-rate * x).exp()).abs());
                x += 0.01;
            }
            Ok(StationarySweepRow {
                b,
                alpha: profile.alpha,
                sup_err_exponential: sup,
                m_mac: profile.m_mac(),
            })
        })
        .collect()
}

/// Law-versus-oracle rows for one `(n, ell, replacement)` on the canonical
/// strictly-sorted queue vector (so index `i` has rank `i + 1`).
#[derive(Debug, Clone, Copy)]
pub struct RoutingCheckRow {
    pub r: usize,
    pub p_paper: f64,
    pub p_oracle: f64,
    pub abs_err: f64,
}

pub fn routing_check(
    n: usize,
    ell: u32,
    replacement: Replacement,
) -> Result<Vec<RoutingCheckRow>, HarnessError> {
    let stage = |source| HarnessError::Routing {
        stage: "routing check",
        source,
    };
    let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let law = rank_law(n, ell, replacement).map_err(stage)?;
    let oracle = enumerate_selection_law(&x, ell, replacement).map_err(stage)?;
    Ok((0..n)
        .map(|i| RoutingCheckRow {
            r: i + 1,
            p_paper: law.probs[i],
            p_oracle: oracle[i],
            abs_err: (law.probs[i] - oracle[i]).abs(),
        })
        .collect())
}

/// Empirical selection frequencies versus the enumerated law on a tied
/// vector; returns the worst z-score over indices.
pub fn routing_check_empirical(
    n: usize,
    ell: u32,
    replacement: Replacement,
    trials: u64,
    seed: u64,
) -> Result<f64, HarnessError> {
    let stage = |source| HarnessError::Routing {
        stage: "routing empirical check",
        source,
    };
    // Values with ties to exercise the rank tie-breaking.
    let x: Vec<f64> = (0..n).map(|i| f64::from((i % 3) as u32)).collect();
    let oracle = enumerate_selection_law(&x, ell, replacement).map_err(stage)?;
    let mut rng = RngState::stream(seed, domain::CHECK, n as u64, u64::from(ell));
    let mut counts = vec![0u64; n];
    for _ in 0..trials {
        counts[select_direct(&x, ell, replacement, &mut rng)] += 1;
    }
    let mut worst_z: f64 = 0.0;
    for i in 0..n {
        let p = oracle[i];
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        if se > 0.0 {
            worst_z = worst_z.max((counts[i] as f64 / trials as f64 - p).abs() / se);
        } else if counts[i] != 0 && p == 0.0 {
            worst_z = f64::INFINITY;
        }
    }
    let _ = rank(0, &x); // the rank map is part of the checked contract
    Ok(worst_z)
}

/// Dispatch a named experiment from a resolved configuration.
pub fn run_experiment(cfg: &Config) -> Result<Report, HarnessError> {
    let exp = cfg
        .experiment
        .clone()
        .ok_or_else(|| HarnessError::Config("missing [experiment] section".into()))?;
    let tol = exp.tolerances;
    let seeds = replication_seeds(cfg.model.seed, cfg.sim.replications.max(1));
    let manifest = cfg.manifest(&format!("experiment {}", exp.name), seeds.clone());
    let mut report = Report::new(exp.name.to_string(), manifest);

    match exp.name {
        ExperimentName::Hydro | ExperimentName::VarianceTracking => {
            let law = resolve_law(cfg)?;
            let main = run_hydro(&cfg.model, &law, &cfg.sim.snapshots, &seeds, &cfg.pde)?;
            hydro_rows(&mut report, &main, &tol, exp.name);
            if exp.name == ExperimentName::Hydro && exp.alt_n > 0 && exp.alt_n != cfg.model.n {
                let mut alt_model = cfg.model.clone();
                alt_model.n = exp.alt_n;
                let alt = run_hydro(&alt_model, &law, &cfg.sim.snapshots, &seeds, &cfg.pde)?;
                let k = main.times.len() - 1;
                let med_main = median(&main.ks[k]);
                let med_alt = median(&alt.ks[k]);
                report.push(MetricRow::check(
                    format!("median_ks_gap_n{}_minus_n{}", exp.alt_n, cfg.model.n),
                    main.times[k],
                    med_alt - med_main,
                    med_main < med_alt,
                ));
                let mut rows = Vec::new();
                for (k, t) in alt.times.iter().enumerate() {
                    for (r, &ks) in alt.ks[k].iter().enumerate() {
                        rows.push(vec![f64::from(exp.alt_n), *t, r as f64, ks, alt.w1[k][r]]);
                    }
                }
                report.extras.push(ExtraCsv {
                    name: format!("hydro_ks_n{}.csv", exp.alt_n),
                    header: "n,t,replication,ks,w1".into(),
                    rows,
                });
            }
            let mut rows = Vec::new();
            for (k, t) in main.times.iter().enumerate() {
                for (r, &ks) in main.ks[k].iter().enumerate() {
                    rows.push(vec![
                        f64::from(cfg.model.n),
                        *t,
                        r as f64,
                        ks,
                        main.w1[k][r],
                    ]);
                }
            }
            report.extras.push(ExtraCsv {
                name: format!("hydro_ks_n{}.csv", cfg.model.n),
                header: "n,t,replication,ks,w1".into(),
                rows,
            });
        }
        ExperimentName::MvVsPde => {
            let law = resolve_law(cfg)?;
            let run = run_mv_vs_pde(&cfg.model, &law, cfg, &exp)?;
            report.push(MetricRow::le(
                "ks_pde_fed",
                run.t,
                run.ks_pde_fed,
                tol.mv_ks,
            ));
            report.push(MetricRow::le(
                "ks_self_vs_fed",
                run.t,
                run.ks_between_modes,
                tol.mv_mode_gap_ks,
            ));
            let mut rows = Vec::new();
            for w in run.chaos.windows(2) {
                report.push(MetricRow::check(
                    format!("chaos_decreasing_{}_{}", w[0].0, w[1].0),
                    run.t,
                    w[1].1.estimate.abs() - w[0].1.estimate.abs(),
                    w[1].1.estimate.abs() < w[0].1.estimate.abs(),
                ));
            }
            for (size, diag) in &run.chaos {
                report.push(MetricRow::info(
                    format!("chaos_estimate_{size}"),
                    run.t,
                    diag.estimate,
                ));
                rows.push(vec![*size as f64, diag.estimate, diag.std_error]);
            }
            report.extras.push(ExtraCsv {
                name: "chaos.csv".into(),
                header: "particles,estimate,std_error".into(),
                rows,
            });
        }
        ExperimentName::StationaryLimits => {
            // The sweep fixes (lambda, rho, a, ell) and varies b; rho comes
            // from the model perturbations with b removed so that the
            // b -> 0 limit target exp(-lambda|rho|x/a) is meaningful.
            let derived = derive(&cfg.model).map_err(|source| HarnessError::Params {
                stage: "derive constants",
                source,
            })?;
            let rho0 = (cfg.model.lambda_hat - cfg.model.mu_hat) / cfg.model.lambda;
            if rho0 >= 0.0 {
                return Err(HarnessError::Config(
                    "stationary_limits needs lambda_hat - mu_hat < 0".into(),
                ));
            }
            let rows = stationary_sweep(
                cfg.model.lambda,
                rho0,
                derived.a,
                cfg.model.ell,
                &exp.b_sweep,
            )?;
            let b_lo = rows
                .iter()
                .cloned()
                .reduce(|a, b| if a.b <= b.b { a } else { b })
                .expect("nonempty sweep");
            let b_hi = rows
                .iter()
                .cloned()
                .reduce(|a, b| if a.b >= b.b { a } else { b })
                .expect("nonempty sweep");
            report.push(MetricRow::le(
                format!("small_b_sup_err_b{}", io::fmt_g(b_lo.b)),
                f64::NAN,
                b_lo.sup_err_exponential,
                tol.small_b_sup,
            ));
            report.push(MetricRow::le(
                format!("large_b_m_mac_b{}", io::fmt_g(b_hi.b)),
                f64::NAN,
                b_hi.m_mac,
                tol.large_b_mean,
            ));
            report.extras.push(ExtraCsv {
                name: "stationary_sweep.csv".into(),
                header: "b,alpha,sup_err_exponential,m_mac".into(),
                rows: rows
                    .iter()
                    .map(|r| vec![r.b, r.alpha, r.sup_err_exponential, r.m_mac])
                    .collect(),
            });
        }
        ExperimentName::RoutingCheck => {
            for &(n, ell) in &exp.routing_cases {
                for replacement in [Replacement::Without, Replacement::With] {
                    if replacement == Replacement::Without && ell > n {
                        continue;
                    }
                    let rows = routing_check(n as usize, ell, replacement)?;
                    let worst = rows.iter().map(|r| r.abs_err).fold(0.0, f64::max);
                    report.push(MetricRow::le(
                        format!("law_abs_err_n{n}_ell{ell}_{replacement}"),
                        f64::NAN,
                        worst,
                        tol.law_abs,
                    ));
                    let z = routing_check_empirical(
                        n as usize,
                        ell,
                        replacement,
                        1_000_000,
                        cfg.model.seed,
                    )?;
                    report.push(MetricRow::le(
                        format!("empirical_worst_z_n{n}_ell{ell}_{replacement}"),
                        f64::NAN,
                        z,
                        4.0,
                    ));
                    report.extras.push(ExtraCsv {
                        name: format!("routing_n{n}_ell{ell}_{replacement}.csv"),
                        header: "r,p_paper,p_oracle,abs_err".into(),
                        rows: rows
                            .iter()
                            .map(|r| vec![r.r as f64, r.p_paper, r.p_oracle, r.abs_err])
                            .collect(),
                    });
                }
            }
        }
        ExperimentName::Invariance => {
            let law = resolve_law(cfg)?;
            let sigma_ser = cfg.model.service.sigma_ser();
            if !sigma_ser.is_finite() || sigma_ser <= 0.0 {
                return Err(HarnessError::Config(
                    "invariance needs a service law with positive variance".into(),
                ));
            }
            let mut partner_model = cfg.model.clone();
            partner_model.service = ServiceDist::Lognormal { sigma_ser };
            if partner_model.service == cfg.model.service {
                partner_model.service = ServiceDist::Exponential;
            }
            let a = run_hydro(&cfg.model, &law, &cfg.sim.snapshots, &seeds, &cfg.pde)?;
            let b = run_hydro(&partner_model, &law, &cfg.sim.snapshots, &seeds, &cfg.pde)?;
            let k = a.times.len() - 1;
            let gap = a.pooled[k].ks_distance(&b.pooled[k].tail_curve(a.curves[k].x_end()));
            report.push(MetricRow::le(
                "pairwise_ks_service_laws",
                a.times[k],
                gap,
                tol.pairwise_ks,
            ));
            for (label, run) in [("base", &a), ("partner", &b)] {
                for (kk, t) in run.times.iter().enumerate() {
                    report.push(MetricRow::info(
                        format!("mean_ks_vs_profile_{label}"),
                        *t,
                        mean(&run.ks[kk]),
                    ));
                }
            }
        }
    }
    Ok(report)
}

fn resolve_law(cfg: &Config) -> Result<InitLaw, HarnessError> {
    cfg.init
        .resolve(Path::new("."))
        .map(|ic| ic.law)
        .map_err(|e| HarnessError::Config(e.to_string()))
}

fn hydro_rows(report: &mut Report, run: &HydroRun, tol: &Tolerances, name: ExperimentName) {
    for (k, &t) in run.times.iter().enumerate() {
        if name == ExperimentName::Hydro {
            report.push(MetricRow::le("mean_ks", t, mean(&run.ks[k]), tol.mean_ks));
            report.push(MetricRow::info("median_ks", t, median(&run.ks[k])));
            report.push(MetricRow::info("mean_w1", t, mean(&run.w1[k])));
            report.push(MetricRow::info("mass_beyond_domain", t, run.mass_beyond[k]));
        }
        let sigma_n = run.summary[k].variance.max(0.0).sqrt();
        let sigma_se = if sigma_n > 0.0 {
            run.summary[k].variance_se / (2.0 * sigma_n)
        } else {
            0.0
        };
        let sigma_mac = run.macro_stats[k].sigma_mac;
        report.push(MetricRow::info("sigma_n", t, sigma_n));
        report.push(MetricRow::info("sigma_n_se", t, sigma_se));
        report.push(MetricRow::info("sigma_mac", t, sigma_mac));
        let rel = (sigma_n - sigma_mac).abs() / sigma_mac;
        if name == ExperimentName::VarianceTracking && k == run.times.len() - 1 {
            report.push(MetricRow::le("sigma_rel_err", t, rel, tol.sigma_rel));
        } else {
            report.push(MetricRow::info("sigma_rel_err", t, rel));
        }
    }
}

/// Write `report.csv`, the extra per-metric CSVs and the manifest; returns
/// the overall pass flag (the CLI exit status).
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<bool, HarnessError> {
    io::create_dir_all(out_dir)?;
    let mut text = String::from("metric,t,value,tolerance,pass\n");
    for row in &report.rows {
        let t = if row.t.is_nan() {
            String::new()
        } else {
            io::fmt_g(row.t)
        };
        let tolerance = if row.tolerance.is_nan() {
            String::new()
        } else {
            io::fmt_g(row.tolerance)
        };
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            row.metric,
            t,
            io::fmt_g(row.value),
            tolerance,
            row.pass
        ));
    }
    io::write_text(&out_dir.join("report.csv"), &text)?;
    for extra in &report.extras {
        io::write_csv(&out_dir.join(&extra.name), &extra.header, &extra.rows)?;
    }
    let manifest_text = report
        .manifest
        .to_toml()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    io::write_text(&out_dir.join("manifest.toml"), &manifest_text)?;
    Ok(report.pass)
}

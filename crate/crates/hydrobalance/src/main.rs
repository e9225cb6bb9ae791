//! Command-line front end: simulate the prelimit system, solve the tail
//! equation, run the particle dynamics, and drive the cross-layer
//! experiments. Every run writes a `manifest.toml` that can be passed back
//! as `--config` to reproduce the output byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hydrobalance::config::{Config, ExperimentConfig, ExperimentName, MvMode};
use hydrobalance::des::{self, SnapshotPlan};
use hydrobalance::harness::{self, replication_seeds};
use hydrobalance::init::InitLaw;
use hydrobalance::io::{self, fmt_g, fmt_time_label};
use hydrobalance::measure::EmpiricalMeasure;
use hydrobalance::mv::{self, DriftSource, MvCoeffs};
use hydrobalance::params::{derive, Replacement};
use hydrobalance::pde::{stationary, stationary_ode_oracle, PdeCoeffs, TailGrid, TailHistory};

#[derive(Parser)]
#[command(
    name = "hydrobalance",
    version,
    about = "Randomized load balancing in heavy traffic: prelimit simulation, tail-equation solver, particle dynamics, and cross-layer experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML configuration (a manifest.toml from a previous run also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker-thread cap (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the n-server system and write rescaled snapshots.
    Sim {
        #[command(flatten)]
        common: CommonArgs,
        /// Override snapshot times, comma separated.
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<f64>>,
        /// Override the replication count.
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Solve the tail equation and write profile snapshots.
    Pde {
        #[command(flatten)]
        common: CommonArgs,
        /// Override output times, comma separated.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
    /// Run the reflected-particle dynamics.
    Mv {
        #[command(flatten)]
        common: CommonArgs,
        /// Drift source: pde-fed, self, or stationary.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Evaluate the closed-form stationary profile and its ODE cross-check.
    Stationary {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare the rank law against the exact enumeration oracle.
    RoutingCheck {
        /// Number of queues.
        #[arg(long)]
        n: usize,
        /// Sample size.
        #[arg(long)]
        ell: u32,
        /// "without" or "with".
        #[arg(long, default_value = "without")]
        replacement: String,
        /// Output directory (omit to print to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named cross-layer experiment and write its report.
    Experiment {
        #[command(flatten)]
        common: CommonArgs,
        /// hydro | mv_vs_pde | stationary_limits | routing_check |
        /// invariance | variance_tracking
        #[arg(long)]
        name: Option<String>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(pass) => {
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Sim {
            common,
            snapshots,
            replications,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(times) = snapshots {
                cfg.sim.snapshots = times;
            }
            if let Some(r) = replications {
                cfg.sim.replications = r;
            }
            init_pool(common.jobs)?;
            cmd_sim(&cfg, &common.out)?;
            Ok(true)
        }
        Command::Pde { common, times } => {
            let mut cfg = load_config(&common)?;
            if let Some(times) = times {
                cfg.pde.times = times;
            }
            init_pool(common.jobs)?;
            cmd_pde(&cfg, &common.out)?;
            Ok(true)
        }
        Command::Mv { common, mode } => {
            let mut cfg = load_config(&common)?;
            if let Some(mode) = mode {
                cfg.mv.mode = parse_mode(&mode)?;
            }
            init_pool(common.jobs)?;
            cmd_mv(&cfg, &common.out)?;
            Ok(true)
        }
        Command::Stationary { common } => {
            let cfg = load_config(&common)?;
            cmd_stationary(&cfg, &common.out)?;
            Ok(true)
        }
        Command::RoutingCheck {
            n,
            ell,
            replacement,
            out,
        } => {
            let replacement = parse_replacement(&replacement)?;
            cmd_routing_check(n, ell, replacement, out.as_deref())?;
            Ok(true)
        }
        Command::Experiment { common, name } => {
            let mut cfg = load_config(&common)?;
            if let Some(name) = name {
                let name = parse_experiment(&name)?;
                match cfg.experiment.as_mut() {
                    Some(e) => e.name = name,
                    None => cfg.experiment = Some(ExperimentConfig::named(name)),
                }
            }
            init_pool(common.jobs)?;
            let report = harness::run_experiment(&cfg)?;
            let pass = harness::emit_report(&report, &common.out)?;
            for row in &report.rows {
                println!(
                    "{} {} = {}{}",
                    if row.pass { "PASS" } else { "FAIL" },
                    row.metric,
                    fmt_g(row.value),
                    if row.tolerance.is_nan() {
                        String::new()
                    } else {
                        format!(" (tolerance {})", fmt_g(row.tolerance))
                    }
                );
            }
            Ok(pass)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_path(path).context("loading config")?,
        None => Config::reference(),
    };
    if let Some(seed) = common.seed {
        cfg.model.seed = seed;
    }
    cfg.manifest = None;
    Ok(cfg)
}

fn init_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("initializing worker pool")?;
    }
    Ok(())
}

fn parse_mode(s: &str) -> Result<MvMode> {
    Ok(match s {
        "pde-fed" => MvMode::PdeFed,
        "self" => MvMode::SelfConsistent,
        "stationary" => MvMode::Stationary,
        other => bail!("unknown mode {other:?} (expected pde-fed, self or stationary)"),
    })
}

fn parse_replacement(s: &str) -> Result<Replacement> {
    Ok(match s {
        "without" => Replacement::Without,
        "with" => Replacement::With,
        other => bail!("unknown replacement {other:?} (expected without or with)"),
    })
}

fn parse_experiment(s: &str) -> Result<ExperimentName> {
    Ok(match s {
        "hydro" => ExperimentName::Hydro,
        "mv_vs_pde" => ExperimentName::MvVsPde,
        "stationary_limits" => ExperimentName::StationaryLimits,
        "routing_check" => ExperimentName::RoutingCheck,
        "invariance" => ExperimentName::Invariance,
        "variance_tracking" => ExperimentName::VarianceTracking,
        other => bail!("unknown experiment {other:?}"),
    })
}

fn cmd_sim(cfg: &Config, out: &Path) -> Result<()> {
    io::create_dir_all(out)?;
    let ic = cfg.init.resolve(Path::new("."))?;
    let mut plan = SnapshotPlan::at_times(cfg.sim.snapshots.clone());
    plan.record_ranks = cfg.sim.record_ranks;
    plan.tracked = cfg.sim.tracked.clone();
    let seeds = replication_seeds(cfg.model.seed, cfg.sim.replications.max(1));
    let result = des::run_replications(&cfg.model, &ic, &plan, &seeds)?;

    for (k, &t) in plan.times.iter().enumerate() {
        let mut samples = Vec::new();
        for run in &result.runs {
            samples.extend_from_slice(
                run.snapshots[k]
                    .measure
                    .as_ref()
                    .expect("measures recorded")
                    .samples(),
            );
        }
        let pooled = EmpiricalMeasure::from_samples(samples)?;
        io::write_measure_csv(
            &out.join(format!("snapshot_{}.csv", fmt_time_label(t))),
            &pooled,
        )?;
    }

    let stat_rows: Vec<Vec<f64>> = result
        .summary
        .iter()
        .map(|s| vec![s.t, s.mean, s.second_moment, s.variance, s.mean_se])
        .collect();
    io::write_csv(&out.join("stats.csv"), "t,mean,m2,var,stderr", &stat_rows)?;

    if cfg.sim.record_ranks {
        let mut totals = vec![0u64; cfg.model.n as usize];
        for run in &result.runs {
            if let Some(h) = &run.rank_histogram {
                for (r, c) in h.iter().enumerate() {
                    totals[r] += c;
                }
            }
        }
        let rows: Vec<Vec<f64>> = totals
            .iter()
            .enumerate()
            .map(|(r, &c)| vec![(r + 1) as f64, c as f64])
            .collect();
        io::write_csv(&out.join("ranks.csv"), "r,count", &rows)?;
    }

    if !cfg.sim.tracked.is_empty() {
        let mut rows = Vec::new();
        for (rep, run) in result.runs.iter().enumerate() {
            for path in &run.tracked {
                for (k, &t) in plan.times.iter().enumerate() {
                    rows.push(vec![
                        rep as f64,
                        path.index as f64,
                        t,
                        path.queue[k],
                        path.idleness[k],
                    ]);
                }
            }
        }
        io::write_csv(
            &out.join("tracked.csv"),
            "replication,queue,t,x_hat,l_hat",
            &rows,
        )?;
    }

    let manifest = cfg.manifest("sim", seeds);
    io::write_text(&out.join("manifest.toml"), &manifest.to_toml()?)?;
    Ok(())
}

fn cmd_pde(cfg: &Config, out: &Path) -> Result<()> {
    io::create_dir_all(out)?;
    let derived = derive(&cfg.model)?;
    let coeffs = PdeCoeffs::new(&cfg.model, &derived);
    let ic = cfg.init.resolve(Path::new("."))?;
    let spec = harness::grid_for(&coeffs, &ic.law, &cfg.pde)?;
    let mut grid = TailGrid::init_tail(&ic.law, coeffs, spec)?;
    if cfg.pde.cfl > 0.0 {
        grid.cfl = cfg.pde.cfl.min(0.5);
    }
    if cfg.pde.dt_max > 0.0 {
        grid.dt_max = cfg.pde.dt_max;
    }

    let mut macro_rows = Vec::new();
    let mut times = cfg.pde.times.clone();
    times.sort_by(f64::total_cmp);
    for &t in &times {
        grid.evolve(t)?;
        let density = grid.density();
        let rows: Vec<Vec<f64>> = (0..=grid.cells())
            .map(|j| vec![grid.node_x(j), grid.v()[j], density.u[j]])
            .collect();
        io::write_csv(
            &out.join(format!("v_{}.csv", fmt_time_label(t))),
            "x,v,u",
            &rows,
        )?;
        let m = grid.macro_stats()?;
        macro_rows.push(vec![t, m.m_mac, m.sigma_mac]);
    }
    io::write_csv(&out.join("macro.csv"), "t,m_mac,sigma_mac", &macro_rows)?;

    if let Ok(profile) = stationary(coeffs) {
        let rows: Vec<Vec<f64>> = (0..=grid.cells())
            .map(|j| {
                let x = grid.node_x(j);
                vec![x, profile.v(x), profile.u(x)]
            })
            .collect();
        io::write_csv(&out.join("stationary.csv"), "x,v,u", &rows)?;
    }

    let manifest = cfg.manifest("pde", vec![]);
    io::write_text(&out.join("manifest.toml"), &manifest.to_toml()?)?;
    Ok(())
}

fn cmd_mv(cfg: &Config, out: &Path) -> Result<()> {
    io::create_dir_all(out)?;
    let derived = derive(&cfg.model)?;
    let coeffs = PdeCoeffs::new(&cfg.model, &derived);
    let mv_coeffs = MvCoeffs::new(&cfg.model, &derived);
    let ic = cfg.init.resolve(Path::new("."))?;
    let t_end = cfg.mv.snapshots.iter().copied().fold(0.0f64, f64::max);

    let mut history = TailHistory::default();
    let profile;
    let drift = match cfg.mv.mode {
        MvMode::PdeFed => {
            let spec = harness::grid_for(&coeffs, &ic.law, &cfg.pde)?;
            let mut grid = TailGrid::init_tail(&ic.law, coeffs, spec)?;
            grid.evolve_recording(t_end, &mut history)?;
            DriftSource::PdeFed {
                history: &history,
                dx: grid.dx(),
            }
        }
        MvMode::SelfConsistent => DriftSource::SelfConsistent,
        MvMode::Stationary => {
            profile = stationary(coeffs)?;
            DriftSource::Stationary(&profile)
        }
    };

    let output = mv::run(
        cfg.mv.particles,
        &ic.law,
        &drift,
        cfg.mv.dt,
        &cfg.mv.snapshots,
        mv_coeffs,
        cfg.model.seed,
        0,
    )?;

    let mut stat_rows = Vec::new();
    for snap in &output.snapshots {
        io::write_measure_csv(
            &out.join(format!("snapshot_{}.csv", fmt_time_label(snap.t))),
            &snap.measure,
        )?;
        let stats = snap.measure.stats();
        stat_rows.push(vec![
            snap.t,
            stats.mean,
            stats.second_moment,
            stats.variance,
            snap.mean_local_time,
        ]);
    }
    io::write_csv(
        &out.join("stats.csv"),
        "t,mean,m2,var,mean_local_time",
        &stat_rows,
    )?;

    let manifest = cfg.manifest(&format!("mv {}", cfg.mv.mode), vec![cfg.model.seed]);
    io::write_text(&out.join("manifest.toml"), &manifest.to_toml()?)?;
    Ok(())
}

fn cmd_stationary(cfg: &Config, out: &Path) -> Result<()> {
    io::create_dir_all(out)?;
    let derived = derive(&cfg.model)?;
    let coeffs = PdeCoeffs::new(&cfg.model, &derived);
    let profile = stationary(coeffs)?;
    let law = InitLaw::Dirac { x0: 0.0 };
    let spec = harness::grid_for(&coeffs, &law, &cfg.pde)?;
    let xs: Vec<f64> = (0..=spec.cells)
        .map(|j| j as f64 * spec.x_max / spec.cells as f64)
        .collect();
    let oracle = stationary_ode_oracle(coeffs, &xs, 1e-12);
    let rows: Vec<Vec<f64>> = xs
        .iter()
        .zip(&oracle)
        .map(|(&x, &v_ode)| {
            let v = profile.v(x);
            vec![x, v, profile.u(x), v_ode, (v - v_ode).abs()]
        })
        .collect();
    io::write_csv(
        &out.join("stationary.csv"),
        "x,v_stat,u_stat,v_ode,abs_err",
        &rows,
    )?;
    io::write_csv(
        &out.join("stationary_macro.csv"),
        "alpha,m_mac",
        &[vec![profile.alpha, profile.m_mac()]],
    )?;
    let manifest = cfg.manifest("stationary", vec![]);
    io::write_text(&out.join("manifest.toml"), &manifest.to_toml()?)?;
    Ok(())
}

fn cmd_routing_check(
    n: usize,
    ell: u32,
    replacement: Replacement,
    out: Option<&Path>,
) -> Result<()> {
    let rows = harness::routing_check(n, ell, replacement)?;
    let mut text = String::from("r,p_paper,p_oracle,abs_err\n");
    for row in &rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.r,
            fmt_g(row.p_paper),
            fmt_g(row.p_oracle),
            fmt_g(row.abs_err)
        ));
    }
    match out {
        Some(dir) => {
            io::create_dir_all(dir)?;
            io::write_text(&dir.join("routing.csv"), &text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

//! Command-line runner for the adaptive space-time boundary element
//! solver.
//!
//! Picks one of the bundled experiment presets, applies overrides from a
//! flat TOML configuration file and from command-line flags (flags win),
//! executes the refinement loop and writes `levels.csv` plus per-level
//! indicator and mesh dumps into the output directory.
//!
//! Exit codes: 0 completed run (including an indicator-tolerance stop),
//! 2 configuration problem, 3 numerical failure, 4 stopped by the mesh
//! size floor.

use clap::Parser;
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;
use tdbem::adapt::{run_adaptive, CompanionRule, RefinementMode, RunOutcome, StopReason};
use tdbem::estimator::IndicatorPolicy;
use tdbem::experiments::load_experiment;
use tdbem::quadrature::QuadratureConfig;
use tdbem::report::write_run;
use tdbem::Error;

#[derive(Parser, Debug)]
#[command(
    name = "tdbem",
    about = "Adaptive space-time Galerkin boundary element solver for the 2D wave equation"
)]
struct Cli {
    /// Flat TOML configuration file; every key has a flag of the same
    /// name that overrides it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment preset: straight_crack | angular_crack | triangle | circle.
    #[arg(long)]
    experiment: Option<String>,
    /// Output directory (default: out-<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Marking threshold in (0, 1].
    #[arg(long)]
    theta: Option<f64>,
    /// Stop once the indicator total falls to this value.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Refinement mode: uniform | space | time.
    #[arg(long)]
    mode: Option<String>,
    /// Mesh kept in step with the refined one: keep_cfl | fixed_other_mesh.
    #[arg(long)]
    companion: Option<String>,
    /// Indicator size policy: max | pythagorean | h_only | dt_only.
    #[arg(long)]
    indicator: Option<String>,
    /// Sobolev exponent s in [0, 1/2] weighting the indicators.
    #[arg(long)]
    sobolev_s: Option<f64>,
    /// Gauss order for test-side integrals.
    #[arg(long)]
    outer_order: Option<usize>,
    /// Gauss order for trial-side integrals.
    #[arg(long)]
    inner_order: Option<usize>,
    /// Gauss order for time integrals of the residual.
    #[arg(long)]
    time_order: Option<usize>,
    /// Level budget including the initial mesh.
    #[arg(long)]
    max_levels: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Compute residual indicators; false restricts to uniform mode.
    #[arg(long)]
    estimate: Option<bool>,
}

/// Flat file mirror of the command-line surface.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<String>,
    out: Option<String>,
    theta: Option<f64>,
    epsilon: Option<f64>,
    mode: Option<String>,
    companion: Option<String>,
    indicator: Option<String>,
    sobolev_s: Option<f64>,
    outer_order: Option<usize>,
    inner_order: Option<usize>,
    time_order: Option<usize>,
    max_levels: Option<usize>,
    threads: Option<usize>,
    estimate: Option<bool>,
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::UnknownPreset(_)
        | Error::BadElementCount { .. }
        | Error::BadMarkedIndex { .. }
        | Error::Config(_) => 2,
        Error::SingularBlock { .. } => 3,
        Error::MeshFloor { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn run(cli: Cli) -> Result<(RunOutcome, PathBuf), Error> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?
        }
        None => FileConfig::default(),
    };

    let name = cli
        .experiment
        .or(file.experiment)
        .ok_or_else(|| Error::Config("no experiment selected (--experiment <name>)".into()))?;
    let preset = load_experiment(&name)?;

    let mut acfg = preset.adapt;
    if let Some(t) = cli.theta.or(file.theta) {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("theta {t} outside (0, 1]")));
        }
        acfg.theta = t;
    }
    if let Some(e) = cli.epsilon.or(file.epsilon) {
        acfg.epsilon = e;
    }
    if let Some(m) = cli.mode.or(file.mode) {
        acfg.mode = RefinementMode::from_name(&m)
            .ok_or_else(|| Error::Config(format!("unknown mode '{m}'")))?;
    }
    if let Some(c) = cli.companion.or(file.companion) {
        acfg.companion = CompanionRule::from_name(&c)
            .ok_or_else(|| Error::Config(format!("unknown companion rule '{c}'")))?;
    }
    if let Some(p) = cli.indicator.or(file.indicator) {
        acfg.policy = IndicatorPolicy::from_name(&p)
            .ok_or_else(|| Error::Config(format!("unknown indicator policy '{p}'")))?;
    }
    if let Some(s) = cli.sobolev_s.or(file.sobolev_s) {
        if !(0.0..=0.5).contains(&s) {
            return Err(Error::Config(format!("sobolev_s {s} outside [0, 1/2]")));
        }
        acfg.sobolev_s = s;
    }
    if let Some(l) = cli.max_levels.or(file.max_levels) {
        if l == 0 {
            return Err(Error::Config("max_levels must be at least 1".into()));
        }
        acfg.max_levels = l;
    }
    if let Some(e) = cli.estimate.or(file.estimate) {
        acfg.estimate = e;
    }

    let mut qcfg = QuadratureConfig::default();
    if let Some(o) = cli.outer_order.or(file.outer_order) {
        qcfg.outer_order = o;
    }
    if let Some(o) = cli.inner_order.or(file.inner_order) {
        qcfg.inner_order = o;
    }
    if let Some(o) = cli.time_order.or(file.time_order) {
        qcfg.time_order = o;
    }

    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        // Ignore the error from setting the pool twice (tests call run
        // repeatedly in one process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let out_dir = cli
        .out
        .or(file.out.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("out-{name}")));

    let outcome = run_adaptive(preset.space, preset.time, &preset.datum, &qcfg, &acfg)?;
    write_run(&out_dir, &outcome, preset.e_ref)?;

    for rec in &outcome.levels {
        println!(
            "level {} M_Gamma={} N_T={} energy={:.12e} indicator={:.12e} marked={}",
            rec.level, rec.m_dofs, rec.n_time, rec.energy, rec.indicator_total, rec.marked
        );
    }
    println!(
        "stop: {} ({} levels) -> {}",
        match outcome.stop {
            StopReason::IndicatorConverged => "indicator tolerance reached",
            StopReason::LevelCap => "level budget exhausted",
            StopReason::MeshFloor => "mesh size floor reached",
            StopReason::ErrorTargetReached => "error target reached",
        },
        outcome.levels.len(),
        out_dir.display()
    );
    Ok((outcome, out_dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((outcome, _)) => {
            if outcome.stop == StopReason::MeshFloor {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

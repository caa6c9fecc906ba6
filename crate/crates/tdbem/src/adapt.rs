//! Indicator-driven refinement loops: marking, companion rules coupling
//! the spatial and temporal meshes, stopping logic, and the per-level
//! records consumed by reports.

use crate::assembly::{
    assemble_system, update_after_space_refinement, update_after_time_refinement, BoundaryDatum,
    ReuseStats,
};
use crate::error::{Error, Result};
use crate::estimator::{compute_indicators, IndicatorPolicy, Indicators, ResidualEvaluator};
use crate::mesh::{cfl_extrema, SpatialMesh, TimeMesh, Topology};
use crate::quadrature::QuadratureConfig;
use crate::solver::{discrete_energy, solve};
use nalgebra::DMatrix;
use std::time::Instant;

/// Which mesh the marking acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefinementMode {
    /// Bisect every element (and the companion rule decides about time).
    Uniform,
    /// Bisect elements whose space indicator exceeds the threshold.
    Space,
    /// Bisect time intervals whose time indicator exceeds the threshold.
    Time,
}

impl RefinementMode {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "uniform" => Some(Self::Uniform),
            "space" => Some(Self::Space),
            "time" => Some(Self::Time),
            _ => None,
        }
    }
}

/// What happens to the mesh that marking does not act on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompanionRule {
    /// Halve every time step whenever spatial bisection would otherwise
    /// push the largest dt/h ratio above its initial value.
    KeepCfl,
    /// Leave the other mesh untouched.
    FixedOtherMesh,
}

impl CompanionRule {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "keep_cfl" => Some(Self::KeepCfl),
            "fixed_other_mesh" => Some(Self::FixedOtherMesh),
            _ => None,
        }
    }
}

/// Why a refinement loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The total indicator fell below the requested tolerance.
    IndicatorConverged,
    /// The level budget was exhausted.
    LevelCap,
    /// A bisection would have produced an element or interval below the
    /// mesh size floor.
    MeshFloor,
    /// The energy came within the requested distance of the reference.
    ErrorTargetReached,
}

/// Stop rule for matched-error comparisons between refinement
/// strategies: the run ends as soon as |energy - e_ref| <= sq_err.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorTarget {
    pub e_ref: f64,
    pub sq_err: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptiveConfig {
    pub mode: RefinementMode,
    pub companion: CompanionRule,
    pub policy: IndicatorPolicy,
    /// Marking threshold: entities with indicator strictly above
    /// theta * max are bisected.
    pub theta: f64,
    /// Stop once the total indicator is at or below this value.
    pub epsilon: f64,
    pub max_levels: usize,
    /// Sobolev weight index s in the indicator power 2 - 2s.
    pub sobolev_s: f64,
    /// When false, skip residual estimation entirely (valid only for
    /// uniform mode, where marking needs no indicators); used for pure
    /// energy-convergence baselines.
    pub estimate: bool,
    /// Optional matched-error stop, checked before estimating.
    pub error_target: Option<ErrorTarget>,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            mode: RefinementMode::Space,
            companion: CompanionRule::KeepCfl,
            policy: IndicatorPolicy::Max,
            theta: 0.4,
            epsilon: 0.0,
            max_levels: 5,
            sobolev_s: 0.5,
            estimate: true,
            error_target: None,
        }
    }
}

/// Everything recorded about one level of a refinement run.
#[derive(Clone, Debug)]
pub struct LevelRecord {
    pub level: usize,
    /// Spatial degrees of freedom.
    pub m_dofs: usize,
    /// Time intervals.
    pub n_time: usize,
    /// Space-time unknowns m_dofs * n_time.
    pub dofs: usize,
    pub energy: f64,
    pub indicator_total: f64,
    /// Entities marked for the next level (0 on the final level).
    pub marked: usize,
    /// Stored matrix entries of the block system.
    pub memory_units: f64,
    /// Savings 1 - memory / (same-depth uniform memory).
    pub memory_s: f64,
    pub walltime_s: f64,
    pub reuse: Option<ReuseStats>,
    pub space: SpatialMesh,
    pub time: TimeMesh,
    pub indicators: Indicators,
    /// Raw squared residual per box, so totals under other size
    /// policies can be recomputed without re-running the estimator.
    pub residual_sq: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub levels: Vec<LevelRecord>,
    pub stop: StopReason,
}

/// Indices whose value is strictly above theta times the maximum.
pub fn mark(values: &[f64], theta: f64) -> Vec<usize> {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > theta * max)
        .map(|(i, _)| i)
        .collect()
}

/// Stored entries of the hypothetical same-depth uniform refinement:
/// under keep_cfl a uniform level doubles both meshes, under
/// fixed_other_mesh it doubles only the mesh the mode acts on.
fn baseline_units(
    level: usize,
    mode: RefinementMode,
    companion: CompanionRule,
    elems0: usize,
    n0: usize,
    topology: Topology,
) -> f64 {
    let f = 2usize.pow(level as u32);
    let (elems, n) = match (mode, companion) {
        (RefinementMode::Time, _) => (elems0, n0 * f),
        (_, CompanionRule::KeepCfl) => (elems0 * f, n0 * f),
        (_, CompanionRule::FixedOtherMesh) => (elems0 * f, n0),
    };
    let m = match topology {
        Topology::OpenArc => elems.saturating_sub(1),
        Topology::ClosedCurve => elems,
    };
    (m as f64) * (m as f64) * (n as f64)
}

/// Runs the indicator-driven refinement loop from the given initial
/// meshes, assembling incrementally whenever only one mesh changed.
pub fn run_adaptive(
    space0: SpatialMesh,
    time0: TimeMesh,
    datum: &dyn BoundaryDatum,
    qcfg: &QuadratureConfig,
    acfg: &AdaptiveConfig,
) -> Result<RunOutcome> {
    assert!(acfg.max_levels >= 1);
    if !acfg.estimate && acfg.mode != RefinementMode::Uniform {
        return Err(Error::Config(
            "adaptive marking requires residual estimation".into(),
        ));
    }
    let mut space = space0;
    let mut time = time0;
    let elems0 = space.n_elements();
    let n0 = time.n_intervals();
    let topology = space.topology;
    let initial_extrema = cfl_extrema(&space, &time);
    let initial_ratio = initial_extrema.max_ratio;
    let initial_min_ratio = initial_extrema.min_ratio;
    let mut system = assemble_system(&space, &time, datum, qcfg)?;
    let mut levels: Vec<LevelRecord> = Vec::new();
    let mut stop = StopReason::LevelCap;
    for level in 0.. {
        let clock = Instant::now();
        let sol = solve(&system)?;
        let energy = discrete_energy(&system, &sol);
        let target_met = acfg
            .error_target
            .map(|t| (energy - t.e_ref).abs() <= t.sq_err)
            .unwrap_or(false);
        let table = if acfg.estimate && !target_met {
            let ev = ResidualEvaluator::new(&space, &time, datum, &sol.coeffs, qcfg);
            ev.residual_sq_table()
        } else {
            DMatrix::zeros(space.n_elements(), time.n_intervals())
        };
        let indicators = compute_indicators(&space, &time, &table, acfg.policy, acfg.sobolev_s);
        let m = space.n_dofs;
        let memory_units = system.stored_blocks() as f64 * (m * m) as f64;
        let baseline = baseline_units(level, acfg.mode, acfg.companion, elems0, n0, topology);
        let mut record = LevelRecord {
            level,
            m_dofs: m,
            n_time: time.n_intervals(),
            dofs: m * time.n_intervals(),
            energy,
            indicator_total: indicators.total,
            marked: 0,
            memory_units,
            memory_s: 1.0 - memory_units / baseline,
            walltime_s: 0.0,
            reuse: system.last_update,
            space: space.clone(),
            time: time.clone(),
            indicators,
            residual_sq: table,
        };
        if target_met {
            record.walltime_s = clock.elapsed().as_secs_f64();
            levels.push(record);
            stop = StopReason::ErrorTargetReached;
            break;
        }
        if acfg.estimate && record.indicator_total <= acfg.epsilon {
            record.walltime_s = clock.elapsed().as_secs_f64();
            levels.push(record);
            stop = StopReason::IndicatorConverged;
            break;
        }
        if level + 1 >= acfg.max_levels {
            record.walltime_s = clock.elapsed().as_secs_f64();
            levels.push(record);
            stop = StopReason::LevelCap;
            break;
        }
        let marked: Vec<usize> = match acfg.mode {
            RefinementMode::Uniform => (0..space.n_elements()).collect(),
            RefinementMode::Space => mark(&record.indicators.eta_space, acfg.theta),
            RefinementMode::Time => mark(&record.indicators.eta_time, acfg.theta),
        };
        record.marked = marked.len();
        let refine_result: Result<()> = (|| {
            match acfg.mode {
                RefinementMode::Uniform | RefinementMode::Space => {
                    let (new_space, sref) = space.bisect(&marked)?;
                    let halve_time = acfg.companion == CompanionRule::KeepCfl
                        && cfl_extrema(&new_space, &time).max_ratio > initial_ratio * (1.0 + 1e-12);
                    if halve_time {
                        let all: Vec<usize> = (0..time.n_intervals()).collect();
                        let (new_time, _) = time.bisect(&all)?;
                        system = assemble_system(&new_space, &new_time, datum, qcfg)?;
                        time = new_time;
                    } else {
                        system = update_after_space_refinement(
                            &system, &new_space, &sref, &time, datum, qcfg,
                        )?;
                    }
                    space = new_space;
                }
                RefinementMode::Time => {
                    let (new_time, tref) = time.bisect(&marked)?;
                    let halve_space = acfg.companion == CompanionRule::KeepCfl
                        && cfl_extrema(&space, &new_time).min_ratio
                            < initial_min_ratio * (1.0 - 1e-12);
                    if halve_space {
                        let all: Vec<usize> = (0..space.n_elements()).collect();
                        let (new_space, _) = space.bisect(&all)?;
                        system = assemble_system(&new_space, &new_time, datum, qcfg)?;
                        space = new_space;
                    } else {
                        system = update_after_time_refinement(
                            &system, &space, &new_time, &tref, datum, qcfg,
                        )?;
                    }
                    time = new_time;
                }
            }
            Ok(())
        })();
        record.walltime_s = clock.elapsed().as_secs_f64();
        match refine_result {
            Ok(()) => levels.push(record),
            Err(Error::MeshFloor { .. }) => {
                record.marked = 0;
                levels.push(record);
                stop = StopReason::MeshFloor;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutcome { levels, stop })
}

/// Stored matrix entries for a system with `m` spatial unknowns and `n`
/// time intervals: `m*m*n` when the time mesh is uniform (block Toeplitz,
/// one block row suffices) and `m*m*n*(n+1)/2` otherwise (full block
/// lower triangle).
pub fn memory_model(m: usize, n: usize, uniform_time: bool) -> f64 {
    let m2 = (m as f64) * (m as f64);
    if uniform_time {
        m2 * n as f64
    } else {
        m2 * (n * (n + 1) / 2) as f64
    }
}

/// Log-log interpolation of y at the query x along samples listed with
/// decreasing x, extrapolating with the nearest slope outside the
/// sampled range. Both coordinates must be positive.
pub fn interp_log_log(points: &[(f64, f64)], x_query: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if x_query <= 0.0 || pts.is_empty() {
        return None;
    }
    if pts.len() == 1 {
        return Some(pts[0].1.exp());
    }
    let x = x_query.ln();
    // Find the bracketing pair or extrapolate with the nearest slope.
    let seg = pts
        .windows(2)
        .find(|w| (w[0].0 - x) * (w[1].0 - x) <= 0.0)
        .map(|w| (w[0], w[1]))
        .unwrap_or_else(|| {
            if x > pts[0].0 {
                (pts[0], pts[1])
            } else {
                (pts[pts.len() - 2], pts[pts.len() - 1])
            }
        });
    let ((x0, y0), (x1, y1)) = seg;
    if (x1 - x0).abs() < 1e-300 {
        return None;
    }
    Some((y0 + (y1 - y0) * (x - x0) / (x1 - x0)).exp())
}

/// Interpolates stored entries against |energy - e_ref| along a run.
fn memory_at_error(run: &RunOutcome, e_ref: f64, target_err: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = run
        .levels
        .iter()
        .map(|r| ((r.energy - e_ref).abs(), r.memory_units))
        .collect();
    interp_log_log(&pts, target_err)
}

/// Error-matched memory comparison at the adaptive run's final energy
/// error: 1 - adaptive_memory / uniform_memory_at_that_error.
pub fn memory_savings(adaptive: &RunOutcome, uniform: &RunOutcome, e_ref: f64) -> Option<f64> {
    let last = adaptive.levels.last()?;
    let err_a = (last.energy - e_ref).abs();
    let mem_u = memory_at_error(uniform, e_ref, err_a)?;
    Some(1.0 - last.memory_units / mem_u)
}

/// Error-matched memory comparison at an explicit target energy error:
/// both runs are interpolated to the target before forming
/// 1 - adaptive_memory / uniform_memory.
pub fn memory_savings_at(
    adaptive: &RunOutcome,
    uniform: &RunOutcome,
    e_ref: f64,
    target_err: f64,
) -> Option<f64> {
    let mem_a = memory_at_error(adaptive, e_ref, target_err)?;
    let mem_u = memory_at_error(uniform, e_ref, target_err)?;
    Some(1.0 - mem_a / mem_u)
}

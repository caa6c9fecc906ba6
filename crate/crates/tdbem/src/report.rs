//! Plain-text run outputs: the per-level convergence table and the
//! per-level indicator and mesh dumps.
//!
//! Everything is written with `.` as the decimal separator and
//! scientific notation carrying 13 significant digits, so re-running an
//! identical configuration reproduces the files byte for byte (wall
//! times excepted).

use crate::adapt::{LevelRecord, RunOutcome};
use crate::error::Result;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Column layout of `levels.csv`.
pub const CSV_HEADER: &str =
    "level,M_Gamma,N_T,dofs,energy,sq_energy_error,indicator_total,marked,memory_S,walltime_s";

/// Locale-independent scientific formatting, 13 significant digits.
pub fn sci(x: f64) -> String {
    format!("{x:.12e}")
}

/// Renders the convergence table. The squared energy error column is
/// the distance of the discrete energy from the reference energy, which
/// for a Galerkin solution equals the squared energy-norm error of the
/// density.
pub fn levels_csv(levels: &[LevelRecord], e_ref: f64) -> String {
    let mut out = String::with_capacity(128 * (levels.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in levels {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.level,
            r.m_dofs,
            r.n_time,
            r.dofs,
            sci(r.energy),
            sci((r.energy - e_ref).abs()),
            sci(r.indicator_total),
            r.marked,
            sci(r.memory_s),
            sci(r.walltime_s),
        )
        .unwrap();
    }
    out
}

/// One `i j eta` triple per space-time box: time interval index, space
/// element index, indicator value.
pub fn indicator_dump(rec: &LevelRecord) -> String {
    let mut out = String::new();
    let (ne, n) = rec.indicators.eta_box.shape();
    for i in 0..n {
        for j in 0..ne {
            writeln!(out, "{} {} {}", i, j, sci(rec.indicators.eta_box[(j, i)])).unwrap();
        }
    }
    out
}

/// One line per element: index, endpoint coordinates, length.
pub fn space_mesh_dump(rec: &LevelRecord) -> String {
    let mut out = String::new();
    for k in 0..rec.space.n_elements() {
        let [a, b] = rec.space.elements[k];
        let (pa, pb) = (rec.space.nodes[a], rec.space.nodes[b]);
        writeln!(
            out,
            "{} {} {} {} {} {}",
            k,
            sci(pa.x),
            sci(pa.y),
            sci(pb.x),
            sci(pb.y),
            sci(rec.space.lengths[k]),
        )
        .unwrap();
    }
    out
}

/// One knot per line: index, time.
pub fn time_mesh_dump(rec: &LevelRecord) -> String {
    let mut out = String::new();
    for (i, t) in rec.time.knots.iter().enumerate() {
        writeln!(out, "{} {}", i, sci(*t)).unwrap();
    }
    out
}

/// Writes `levels.csv` plus the per-level `indicators-L{k}.txt`,
/// `mesh-space-L{k}.txt` and `mesh-time-L{k}.txt` files into `dir`,
/// creating it if needed.
pub fn write_run(dir: &Path, run: &RunOutcome, e_ref: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("levels.csv"), levels_csv(&run.levels, e_ref))?;
    for rec in &run.levels {
        fs::write(
            dir.join(format!("indicators-L{}.txt", rec.level)),
            indicator_dump(rec),
        )?;
        fs::write(
            dir.join(format!("mesh-space-L{}.txt", rec.level)),
            space_mesh_dump(rec),
        )?;
        fs::write(
            dir.join(format!("mesh-time-L{}.txt", rec.level)),
            time_mesh_dump(rec),
        )?;
    }
    Ok(())
}

//! Block forward substitution for the lower-triangular space-time
//! system, and the discrete energy functional of the solution.

use crate::assembly::{BlockStorage, BlockSystem};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Space-time solution: column i holds the density coefficients of time
/// interval i.
#[derive(Clone, Debug)]
pub struct Solution {
    pub coeffs: DMatrix<f64>,
}

/// Reciprocal condition estimate from the 1-norms of a matrix and its
/// explicit inverse.
fn rcond_1(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let inv = m.clone().try_inverse()?;
    let norm = |a: &DMatrix<f64>| {
        (0..a.ncols())
            .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let rc = 1.0 / (norm(m) * norm(&inv));
    Some((inv, rc))
}

const RCOND_FLOOR: f64 = 1e-14;

/// Solves the block lower-triangular system by forward substitution.
/// On a uniform time grid the single diagonal block is inverted once
/// and reused for every step.
pub fn solve(system: &BlockSystem) -> Result<Solution> {
    let m = system.n_dofs;
    let n = system.n_time;
    let mut coeffs = DMatrix::zeros(m, n);
    // Inverses of the distinct diagonal blocks (one for Toeplitz
    // storage, one per row otherwise).
    let inverses: Vec<DMatrix<f64>> = match &system.storage {
        BlockStorage::Toeplitz(_) => {
            let (inv, rc) = rcond_1(system.block(0, 0)).ok_or(Error::SingularBlock {
                block: 0,
                rcond: 0.0,
            })?;
            if rc < RCOND_FLOOR {
                return Err(Error::SingularBlock {
                    block: 0,
                    rcond: rc,
                });
            }
            vec![inv]
        }
        BlockStorage::General(_) => (0..n)
            .map(|i| {
                let (inv, rc) = rcond_1(system.block(i, i)).ok_or(Error::SingularBlock {
                    block: i,
                    rcond: 0.0,
                })?;
                if rc < RCOND_FLOOR {
                    return Err(Error::SingularBlock {
                        block: i,
                        rcond: rc,
                    });
                }
                Ok(inv)
            })
            .collect::<Result<_>>()?,
    };
    let diag_inv = |i: usize| -> &DMatrix<f64> {
        match &system.storage {
            BlockStorage::Toeplitz(_) => &inverses[0],
            BlockStorage::General(_) => &inverses[i],
        }
    };
    let mut resid = DVector::zeros(m);
    for i in 0..n {
        resid.copy_from(&system.rhs.column(i));
        for j in 0..i {
            resid.gemv(-1.0, system.block(i, j), &coeffs.column(j), 1.0);
        }
        coeffs.column_mut(i).gemv(1.0, diag_inv(i), &resid, 0.0);
    }
    Ok(Solution { coeffs })
}

/// Discrete energy of the solution: the value of the space-time
/// bilinear form at the solution, equal to the pairing of the solution
/// with the right-hand side.
pub fn discrete_energy(system: &BlockSystem, sol: &Solution) -> f64 {
    sol.coeffs.dot(&system.rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_block, assemble_system, BoundaryDatum};
    use crate::mesh::{GeometryTag, Point, SpatialMesh, TimeMesh, Topology, SIZE_FLOOR};
    use crate::quadrature::QuadratureConfig;

    struct StepDatum;

    impl BoundaryDatum for StepDatum {
        fn spatial(&self, _: &SpatialMesh, _: usize, _: Point) -> f64 {
            1.0
        }
        fn time_value(&self, t: f64) -> f64 {
            if t > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        fn time_mean(&self, _: f64, _: f64) -> f64 {
            1.0
        }
    }

    fn crack(n: usize) -> SpatialMesh {
        let nodes = (0..=n)
            .map(|k| Point::new(-0.5 + k as f64 / n as f64, 0.0))
            .collect();
        SpatialMesh::from_polyline(nodes, Topology::OpenArc, GeometryTag::Polygonal, SIZE_FLOOR)
            .unwrap()
    }

    #[test]
    fn solution_satisfies_the_full_dense_system() {
        let space = crack(4);
        let time = TimeMesh::uniform(1.0, 4).unwrap();
        let cfg = QuadratureConfig::default();
        let sys = assemble_system(&space, &time, &StepDatum, &cfg).unwrap();
        let sol = solve(&sys).unwrap();
        let m = sys.n_dofs;
        let n = sys.n_time;
        let mut dense = DMatrix::zeros(m * n, m * n);
        let mut rhs = DVector::zeros(m * n);
        for i in 0..n {
            rhs.rows_mut(i * m, m).copy_from(&sys.rhs.column(i));
            for j in 0..=i {
                dense
                    .view_mut((i * m, j * m), (m, m))
                    .copy_from(sys.block(i, j));
            }
        }
        let x = dense.lu().solve(&rhs).unwrap();
        for i in 0..n {
            for a in 0..m {
                let got = sol.coeffs[(a, i)];
                let want = x[i * m + a];
                assert!(
                    (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                    "coefficient ({a},{i}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn toeplitz_and_general_storage_agree() {
        let space = crack(4);
        let time = TimeMesh::uniform(1.0, 4).unwrap();
        let cfg = QuadratureConfig::default();
        let sys = assemble_system(&space, &time, &StepDatum, &cfg).unwrap();
        assert!(sys.is_toeplitz());
        // Same physical system in general storage, assembled from raw
        // knot differences.
        let rows: Vec<Vec<_>> = (0..sys.n_time)
            .map(|it| {
                (0..=it)
                    .map(|i| assemble_block(&space, &time, it, i, &cfg))
                    .collect()
            })
            .collect();
        let mut gen = sys.clone();
        gen.storage = crate::assembly::BlockStorage::General(rows);
        let a = solve(&sys).unwrap();
        let b = solve(&gen).unwrap();
        let diff = (&a.coeffs - &b.coeffs).abs().max();
        let scale = a.coeffs.abs().max();
        assert!(diff <= 1e-10 * scale, "paths differ by {diff}");
        let ea = discrete_energy(&sys, &a);
        let eb = discrete_energy(&gen, &b);
        assert!((ea - eb).abs() <= 1e-10 * ea.abs());
    }

    #[test]
    fn singular_diagonal_block_is_reported() {
        let space = crack(4);
        let time = TimeMesh::uniform(1.0, 3).unwrap();
        let cfg = QuadratureConfig::default();
        let mut sys = assemble_system(&space, &time, &StepDatum, &cfg).unwrap();
        if let BlockStorage::Toeplitz(blocks) = &mut sys.storage {
            blocks[0].fill(0.0);
        }
        match solve(&sys) {
            Err(Error::SingularBlock { block: 0, .. }) => {}
            other => panic!("expected singular block, got {other:?}"),
        }
    }
}

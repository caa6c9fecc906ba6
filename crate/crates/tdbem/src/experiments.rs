//! Bundled experiment presets: reference geometries, boundary data,
//! extrapolated reference energies and per-preset adaptive defaults.
//!
//! Four configurations ship with the solver: a straight slit under a
//! unit step load, a wedge-shaped slit loaded by the first normal
//! component, a closed equilateral triangle with opposite loads on its
//! two slanted sides, and a polygonal circle under a spatially uniform
//! algebraic pulse. Each preset carries the initial meshes and the
//! refinement settings its convergence study uses; every field can be
//! overridden before running.

use crate::adapt::{AdaptiveConfig, CompanionRule, RefinementMode};
use crate::assembly::BoundaryDatum;
use crate::error::{Error, Result};
use crate::estimator::IndicatorPolicy;
use crate::mesh::{GeometryTag, Point, SpatialMesh, TimeMesh, Topology, SIZE_FLOOR};
use crate::quadrature::integrate_graded_left;
use std::f64::consts::PI;

/// Height of the wedge junction and of the triangle apex.
fn apex_height() -> f64 {
    0.1 * (PI / 3.0).tan()
}

/// Straight slit [-1/2, 1/2] x {0} split into `n` equal elements.
pub fn straight_crack(n: usize) -> Result<SpatialMesh> {
    if n < 2 {
        return Err(Error::BadElementCount {
            preset: "straight_crack",
            n,
            reason: "need at least 2 elements so one interior node carries a DoF",
        });
    }
    let nodes = (0..=n)
        .map(|k| Point::new(-0.5 + k as f64 / n as f64, 0.0))
        .collect();
    SpatialMesh::from_polyline(nodes, Topology::OpenArc, GeometryTag::Polygonal, SIZE_FLOOR)
}

/// Wedge-shaped slit: two straight arms of length 0.2 from (-0.1, 0) and
/// (0.1, 0) meeting at the junction (0, 0.1 tan(pi/3)), which carries a
/// degree of freedom. `n` elements total, split evenly between the arms.
pub fn angular_crack(n: usize) -> Result<SpatialMesh> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::BadElementCount {
            preset: "angular_crack",
            n,
            reason: "the two arms need the same positive element count",
        });
    }
    let top = Point::new(0.0, apex_height());
    let left = Point::new(-0.1, 0.0);
    let right = Point::new(0.1, 0.0);
    let per_arm = n / 2;
    let mut nodes = Vec::with_capacity(n + 1);
    for k in 0..per_arm {
        let s = k as f64 / per_arm as f64;
        nodes.push(left + (top - left) * s);
    }
    for k in 0..=per_arm {
        let s = k as f64 / per_arm as f64;
        nodes.push(top + (right - top) * s);
    }
    SpatialMesh::from_polyline(nodes, Topology::OpenArc, GeometryTag::Polygonal, SIZE_FLOOR)
}

/// Closed equilateral triangle of side 0.2, traversed counterclockwise:
/// bottom side [-0.1, 0.1] x {0}, then the right and left slanted sides
/// meeting at the apex (0, 0.1 tan(pi/3)). `n` elements total, split
/// evenly among the three sides.
pub fn triangle(n: usize) -> Result<SpatialMesh> {
    if n < 3 || !n.is_multiple_of(3) {
        return Err(Error::BadElementCount {
            preset: "triangle",
            n,
            reason: "the three sides need the same positive element count",
        });
    }
    let verts = [
        Point::new(-0.1, 0.0),
        Point::new(0.1, 0.0),
        Point::new(0.0, apex_height()),
    ];
    let per_side = n / 3;
    let mut nodes = Vec::with_capacity(n);
    for side in 0..3 {
        let a = verts[side];
        let b = verts[(side + 1) % 3];
        for k in 0..per_side {
            let s = k as f64 / per_side as f64;
            nodes.push(a + (b - a) * s);
        }
    }
    SpatialMesh::from_polyline(
        nodes,
        Topology::ClosedCurve,
        GeometryTag::Polygonal,
        SIZE_FLOOR,
    )
}

/// Circle of radius 1/2 centered at the origin, approximated by the
/// inscribed regular `n`-gon; refinement places new nodes back on the
/// circle.
pub fn circle(n: usize) -> Result<SpatialMesh> {
    if n < 3 {
        return Err(Error::BadElementCount {
            preset: "circle",
            n,
            reason: "a closed polygon needs at least 3 elements",
        });
    }
    let radius = 0.5;
    let nodes = (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            Point::new(radius * a.cos(), radius * a.sin())
        })
        .collect();
    SpatialMesh::from_polyline(
        nodes,
        Topology::ClosedCurve,
        GeometryTag::Circle {
            center: Point::new(0.0, 0.0),
            radius,
        },
        SIZE_FLOOR,
    )
}

/// Boundary data of the bundled experiments. All are separable with the
/// time profile queried only at t > 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Datum {
    /// Unit step in time, uniform in space.
    UnitStep,
    /// First component of the outward element normal, unit step in time.
    NormalComponent,
    /// +1 on the right slanted triangle side, -1 on the left one, 0 on
    /// the bottom; time ramp g(t) = sin^2(4 pi t) capped at 1 for
    /// t >= 1/8.
    SlantedSidesRamp,
    /// Spatially uniform pulse (5t)^(-0.27) e^(-5t), integrable but
    /// unbounded at t = 0.
    AlgebraicPulse,
}

/// End of the triangle datum's ramp-up phase.
const RAMP_END: f64 = 0.125;

/// Antiderivative of sin^2(4 pi t) continued linearly past the cap.
fn ramp_antiderivative(t: f64) -> f64 {
    if t <= RAMP_END {
        0.5 * t - (8.0 * PI * t).sin() / (16.0 * PI)
    } else {
        t - 0.5 * RAMP_END
    }
}

impl BoundaryDatum for Datum {
    fn spatial(&self, mesh: &SpatialMesh, elem: usize, _x: Point) -> f64 {
        match self {
            Datum::UnitStep | Datum::AlgebraicPulse => 1.0,
            Datum::NormalComponent => mesh.normals[elem].x,
            Datum::SlantedSidesRamp => {
                // Elementwise-constant side indicator; elements never
                // straddle a vertex, so the midpoint decides the side.
                let mid = mesh.point_on(elem, 0.5);
                if mid.y < 1e-12 {
                    0.0
                } else if mid.x > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    fn time_value(&self, t: f64) -> f64 {
        match self {
            Datum::UnitStep | Datum::NormalComponent => 1.0,
            Datum::SlantedSidesRamp => {
                if t <= RAMP_END {
                    (4.0 * PI * t).sin().powi(2)
                } else {
                    1.0
                }
            }
            Datum::AlgebraicPulse => (5.0 * t).powf(-0.27) * (-5.0 * t).exp(),
        }
    }

    fn time_mean(&self, t0: f64, t1: f64) -> f64 {
        match self {
            Datum::UnitStep | Datum::NormalComponent => 1.0,
            Datum::SlantedSidesRamp => {
                (ramp_antiderivative(t1) - ramp_antiderivative(t0)) / (t1 - t0)
            }
            Datum::AlgebraicPulse => {
                integrate_graded_left(t0, t1, 16, |t| self.time_value(t)) / (t1 - t0)
            }
        }
    }
}

/// A fully populated runnable configuration.
#[derive(Clone, Debug)]
pub struct ExperimentPreset {
    pub name: &'static str,
    pub space: SpatialMesh,
    pub time: TimeMesh,
    pub datum: Datum,
    /// Extrapolated reference energy the squared energy error is
    /// measured against.
    pub e_ref: f64,
    pub adapt: AdaptiveConfig,
}

/// Builds the named preset with its published parameters.
pub fn load_experiment(name: &str) -> Result<ExperimentPreset> {
    let base = AdaptiveConfig::default();
    match name {
        "straight_crack" => Ok(ExperimentPreset {
            name: "straight_crack",
            space: straight_crack(10)?,
            time: TimeMesh::uniform(2.0, 20)?,
            datum: Datum::UnitStep,
            e_ref: 0.79280,
            adapt: AdaptiveConfig {
                mode: RefinementMode::Space,
                companion: CompanionRule::KeepCfl,
                policy: IndicatorPolicy::Pythagorean,
                ..base
            },
        }),
        "angular_crack" => Ok(ExperimentPreset {
            name: "angular_crack",
            space: angular_crack(8)?,
            time: TimeMesh::uniform(0.5, 10)?,
            datum: Datum::NormalComponent,
            e_ref: 0.034012,
            adapt: AdaptiveConfig {
                mode: RefinementMode::Space,
                companion: CompanionRule::KeepCfl,
                policy: IndicatorPolicy::Max,
                ..base
            },
        }),
        "triangle" => Ok(ExperimentPreset {
            name: "triangle",
            space: triangle(12)?,
            time: TimeMesh::uniform(0.5, 10)?,
            datum: Datum::SlantedSidesRamp,
            e_ref: 0.063334,
            adapt: AdaptiveConfig {
                mode: RefinementMode::Space,
                companion: CompanionRule::KeepCfl,
                policy: IndicatorPolicy::Max,
                ..base
            },
        }),
        "circle" => Ok(ExperimentPreset {
            name: "circle",
            space: circle(32)?,
            time: TimeMesh::uniform(PI / 4.0, 8)?,
            datum: Datum::AlgebraicPulse,
            e_ref: 1.777,
            adapt: AdaptiveConfig {
                mode: RefinementMode::Time,
                companion: CompanionRule::FixedOtherMesh,
                policy: IndicatorPolicy::Max,
                ..base
            },
        }),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn geometries_have_the_advertised_layout() {
        let crack = straight_crack(10).unwrap();
        assert_eq!(crack.n_elements(), 10);
        assert_eq!(crack.n_dofs, 9);
        assert_relative_eq!(crack.lengths.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(crack.lengths.iter().all(|&l| (l - 0.1).abs() < 1e-14));

        let wedge = angular_crack(8).unwrap();
        assert_eq!(wedge.n_elements(), 8);
        assert_eq!(wedge.n_dofs, 7);
        assert_relative_eq!(wedge.lengths.iter().sum::<f64>(), 0.4, epsilon = 1e-14);
        let junction = Point::new(0.0, apex_height());
        assert!(
            wedge.nodes.iter().any(|p| (p - junction).norm() < 1e-14),
            "junction node missing"
        );
        let jn = wedge
            .nodes
            .iter()
            .position(|p| (p - junction).norm() < 1e-14)
            .unwrap();
        assert!(wedge.dof_of_node[jn].is_some(), "junction carries no DoF");

        let tri = triangle(12).unwrap();
        assert_eq!(tri.n_elements(), 12);
        assert_eq!(tri.n_dofs, 12);
        assert_relative_eq!(tri.lengths.iter().sum::<f64>(), 0.6, epsilon = 1e-14);
        // Outward normal on the bottom side points straight down.
        assert_relative_eq!(tri.normals[0].y, -1.0, epsilon = 1e-14);

        let ring = circle(32).unwrap();
        assert_eq!(ring.n_elements(), 32);
        assert_eq!(ring.n_dofs, 32);
        for p in &ring.nodes {
            assert_relative_eq!(p.norm(), 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn bad_element_counts_are_rejected() {
        assert!(straight_crack(1).is_err());
        assert!(angular_crack(7).is_err());
        assert!(triangle(8).is_err());
        assert!(circle(2).is_err());
        assert!(load_experiment("moebius_strip").is_err());
    }

    #[test]
    fn normal_component_datum_follows_the_arms() {
        let wedge = angular_crack(8).unwrap();
        let d = Datum::NormalComponent;
        let s3 = 3.0f64.sqrt() / 2.0;
        let first = d.spatial(&wedge, 0, wedge.point_on(0, 0.5));
        let second = d.spatial(&wedge, 7, wedge.point_on(7, 0.5));
        assert_relative_eq!(first, s3, epsilon = 1e-14);
        assert_relative_eq!(second, -s3, epsilon = 1e-14);
        assert_relative_eq!(d.time_mean(0.0, 0.3), 1.0, epsilon = 1e-15);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn slanted_sides_datum_is_a_signed_indicator_with_exact_ramp_means() {
        let tri = triangle(12).unwrap();
        let d = Datum::SlantedSidesRamp;
        for e in 0..tri.n_elements() {
            let v = d.spatial(&tri, e, tri.point_on(e, 0.5));
            let mid = tri.point_on(e, 0.5);
            if mid.y < 1e-12 {
                assert_eq!(v, 0.0);
            } else if mid.x > 0.0 {
                assert_eq!(v, 1.0);
            } else {
                assert_eq!(v, -1.0);
            }
        }
        // Frozen high-precision means of sin^2(4 pi t) capped at t = 1/8;
        // the extra digits record the oracle output verbatim.
        assert_relative_eq!(d.time_mean(0.0, 0.05), 0.12158663567967151, epsilon = 1e-14);
        assert_relative_eq!(d.time_mean(0.05, 0.1), 0.64454104337316873, epsilon = 1e-14);
        assert_relative_eq!(d.time_mean(0.1, 0.15), 0.98387232094715976, epsilon = 1e-14);
        assert_relative_eq!(d.time_mean(0.2, 0.3), 1.0, epsilon = 1e-14);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn algebraic_pulse_means_match_high_precision_values() {
        let d = Datum::AlgebraicPulse;
        // Frozen means over the 8 initial intervals of [0, pi/4].
        let frozen = [
            1.3638306354359632,
            0.53286961548075746,
            0.28204983626688312,
            0.15726479213854398,
            0.089839796158544581,
            0.052054417787532776,
            0.030443322589850042,
            0.017922274995979264,
        ];
        for (k, want) in frozen.iter().enumerate() {
            let t0 = k as f64 * PI / 32.0;
            let t1 = (k + 1) as f64 * PI / 32.0;
            assert_relative_eq!(d.time_mean(t0, t1), want, epsilon = 1e-8);
        }
    }

    #[test]
    fn presets_carry_their_reference_configuration() {
        let p1 = load_experiment("straight_crack").unwrap();
        assert_eq!(p1.time.n_intervals(), 20);
        assert_relative_eq!(p1.time.horizon(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(p1.e_ref, 0.79280);
        assert_eq!(p1.adapt.policy, IndicatorPolicy::Pythagorean);

        let p4 = load_experiment("circle").unwrap();
        assert_eq!(p4.space.n_elements(), 32);
        assert_eq!(p4.time.n_intervals(), 8);
        assert_relative_eq!(p4.time.horizon(), PI / 4.0, epsilon = 1e-15);
        assert_eq!(p4.adapt.mode, RefinementMode::Time);
        assert_eq!(p4.adapt.companion, CompanionRule::FixedOtherMesh);
        assert_relative_eq!(p4.e_ref, 1.777);

        assert_relative_eq!(load_experiment("angular_crack").unwrap().e_ref, 0.034012);
        assert_relative_eq!(load_experiment("triangle").unwrap().e_ref, 0.063334);
    }
}

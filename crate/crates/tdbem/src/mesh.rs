//! Polygonal boundary meshes and 1D time grids, with conforming bisection.
//!
//! A spatial mesh is a chain of straight segments stored in curve order:
//! element `k` connects node `k` to node `k + 1` (wrapping around for
//! closed curves). Nodes of an open arc carry no degree of freedom at the
//! two arc endpoints, where the density is pinned to zero; every node of
//! a closed curve carries one. Bisection inserts midpoints (projected
//! back onto the circle for circular geometry) and reports per-DoF
//! provenance so matrix entries between untouched basis functions can be
//! reused.

use crate::error::{Error, Result};
use nalgebra::Vector2;

pub type Point = Vector2<f64>;

/// Default smallest admissible element or interval size.
pub const SIZE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    OpenArc,
    ClosedCurve,
}

/// Extra geometric information used when placing new nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeometryTag {
    Polygonal,
    Circle { center: Point, radius: f64 },
}

#[derive(Clone, Debug)]
pub struct SpatialMesh {
    /// Node coordinates in curve order.
    pub nodes: Vec<Point>,
    /// Ordered node index pairs; element k is [k, k+1 (mod n)].
    pub elements: Vec<[usize; 2]>,
    pub topology: Topology,
    pub geometry: GeometryTag,
    /// Unit normal per element, on a fixed consistent side of the curve
    /// (outward for the closed presets).
    pub normals: Vec<Point>,
    /// Unit tangent per element, pointing along the curve orientation.
    pub tangents: Vec<Point>,
    /// Element lengths.
    pub lengths: Vec<f64>,
    /// DoF index per node; None at open-arc endpoints.
    pub dof_of_node: Vec<Option<usize>>,
    pub n_dofs: usize,
    pub size_floor: f64,
}

/// Provenance of one spatial bisection step.
#[derive(Clone, Debug)]
pub struct SpaceRefinement {
    /// Old node index -> new node index.
    pub node_map: Vec<usize>,
    /// Old element index -> (first new element, second new element when split).
    pub children: Vec<(usize, Option<usize>)>,
    /// Per new-mesh DoF: how it relates to the old basis.
    pub dof_status: Vec<DofStatus>,
    /// Old DoF index -> new DoF index.
    pub new_dof_of_old: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofStatus {
    /// Hat at a newly inserted node.
    New,
    /// Node existed but its hat support contains a bisected element.
    Modified { old: usize },
    /// Hat identical to an old basis function.
    Unchanged { old: usize },
}

impl DofStatus {
    pub fn reusable_as(&self) -> Option<usize> {
        match self {
            DofStatus::Unchanged { old } => Some(*old),
            _ => None,
        }
    }
}

impl SpatialMesh {
    /// Builds a mesh from nodes listed in curve order.
    pub fn from_polyline(
        nodes: Vec<Point>,
        topology: Topology,
        geometry: GeometryTag,
        size_floor: f64,
    ) -> Result<Self> {
        let n_nodes = nodes.len();
        let n_elements = match topology {
            Topology::OpenArc => {
                if n_nodes < 2 {
                    return Err(Error::Config("open arc needs at least 2 nodes".into()));
                }
                n_nodes - 1
            }
            Topology::ClosedCurve => {
                if n_nodes < 3 {
                    return Err(Error::Config("closed curve needs at least 3 nodes".into()));
                }
                n_nodes
            }
        };
        let mut elements = Vec::with_capacity(n_elements);
        for k in 0..n_elements {
            elements.push([k, (k + 1) % n_nodes]);
        }
        let mut normals = Vec::with_capacity(n_elements);
        let mut tangents = Vec::with_capacity(n_elements);
        let mut lengths = Vec::with_capacity(n_elements);
        for e in &elements {
            let d = nodes[e[1]] - nodes[e[0]];
            let len = d.norm();
            if !(len.is_finite() && len >= size_floor) {
                return Err(Error::MeshFloor {
                    kind: "element",
                    size: len,
                    floor: size_floor,
                });
            }
            let t = d / len;
            tangents.push(t);
            // Right-hand normal of the traversal direction; outward for
            // counterclockwise closed curves.
            normals.push(Point::new(t.y, -t.x));
            lengths.push(len);
        }
        let mut dof_of_node = vec![None; n_nodes];
        let mut n_dofs = 0;
        for (k, slot) in dof_of_node.iter_mut().enumerate() {
            let pinned = topology == Topology::OpenArc && (k == 0 || k == n_nodes - 1);
            if !pinned {
                *slot = Some(n_dofs);
                n_dofs += 1;
            }
        }
        Ok(Self {
            nodes,
            elements,
            topology,
            geometry,
            normals,
            tangents,
            lengths,
            dof_of_node,
            n_dofs,
            size_floor,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn min_h(&self) -> f64 {
        self.lengths.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_h(&self) -> f64 {
        self.lengths.iter().cloned().fold(0.0, f64::max)
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// Endpoints of element k.
    pub fn endpoints(&self, k: usize) -> (Point, Point) {
        let e = self.elements[k];
        (self.nodes[e[0]], self.nodes[e[1]])
    }

    /// Point at local coordinate s in [0, 1] on element k.
    pub fn point_on(&self, k: usize, s: f64) -> Point {
        let (a, b) = self.endpoints(k);
        a + (b - a) * s
    }

    /// DoF indices of the two endpoint hats of element k.
    pub fn element_dofs(&self, k: usize) -> [Option<usize>; 2] {
        let e = self.elements[k];
        [self.dof_of_node[e[0]], self.dof_of_node[e[1]]]
    }

    /// Node index carrying the given DoF.
    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.dof_of_node
            .iter()
            .position(|d| *d == Some(dof))
            .expect("dof index in range")
    }

    /// Elements supporting the hat of node `node` (curve order).
    pub fn support_elements(&self, node: usize) -> Vec<usize> {
        let n = self.nodes.len();
        match self.topology {
            Topology::OpenArc => {
                let mut s = Vec::new();
                if node > 0 {
                    s.push(node - 1);
                }
                if node < n - 1 {
                    s.push(node);
                }
                s
            }
            Topology::ClosedCurve => vec![(node + n - 1) % n, node],
        }
    }

    /// Bisects the marked elements. New nodes are segment midpoints,
    /// projected radially onto the circle for circular geometry. Returns
    /// the refined mesh and the provenance of every new-mesh DoF.
    pub fn bisect(&self, marked: &[usize]) -> Result<(Self, SpaceRefinement)> {
        let n_old_elem = self.elements.len();
        let n_old_nodes = self.nodes.len();
        let mut split = vec![false; n_old_elem];
        for &k in marked {
            if k >= n_old_elem {
                return Err(Error::BadMarkedIndex {
                    index: k,
                    len: n_old_elem,
                });
            }
            split[k] = true;
        }

        for (k, &s) in split.iter().enumerate() {
            if s && self.lengths[k] * 0.5 < self.size_floor {
                return Err(Error::MeshFloor {
                    kind: "element",
                    size: self.lengths[k] * 0.5,
                    floor: self.size_floor,
                });
            }
        }

        // Rebuild the node list in curve order, inserting midpoints.
        let mut new_nodes: Vec<Point> = Vec::with_capacity(n_old_nodes + marked.len());
        let mut node_map = vec![0usize; n_old_nodes];
        let mut midpoint_node = vec![None::<usize>; n_old_elem];
        let walk_nodes = match self.topology {
            Topology::OpenArc => n_old_nodes,
            Topology::ClosedCurve => n_old_nodes,
        };
        for k in 0..walk_nodes {
            node_map[k] = new_nodes.len();
            new_nodes.push(self.nodes[k]);
            // Element k follows node k except for the last node of an arc.
            if k < n_old_elem && split[k] {
                let (a, b) = self.endpoints(k);
                let mut m = (a + b) * 0.5;
                if let GeometryTag::Circle { center, radius } = self.geometry {
                    let r = m - center;
                    let len = r.norm();
                    m = center + r * (radius / len);
                }
                midpoint_node[k] = Some(new_nodes.len());
                new_nodes.push(m);
            }
        }

        let refined =
            Self::from_polyline(new_nodes, self.topology, self.geometry, self.size_floor)?;

        // Old element -> new element indices.
        let mut children = Vec::with_capacity(n_old_elem);
        let mut next = 0usize;
        for &s in &split {
            if s {
                children.push((next, Some(next + 1)));
                next += 2;
            } else {
                children.push((next, None));
                next += 1;
            }
        }
        debug_assert_eq!(next, refined.n_elements());

        // DoF provenance.
        let mut dof_status = vec![DofStatus::New; refined.n_dofs];
        let mut new_dof_of_old = vec![usize::MAX; self.n_dofs];
        for (old_node, &new_node) in node_map.iter().enumerate().take(n_old_nodes) {
            let Some(old_dof) = self.dof_of_node[old_node] else {
                continue;
            };
            let new_dof = refined.dof_of_node[new_node]
                .expect("surviving node keeps its DoF under bisection");
            new_dof_of_old[old_dof] = new_dof;
            let touched = self.support_elements(old_node).iter().any(|&e| split[e]);
            dof_status[new_dof] = if touched {
                DofStatus::Modified { old: old_dof }
            } else {
                DofStatus::Unchanged { old: old_dof }
            };
        }

        Ok((
            refined,
            SpaceRefinement {
                node_map,
                children,
                dof_status,
                new_dof_of_old,
            },
        ))
    }
}

#[derive(Clone, Debug)]
pub struct TimeMesh {
    /// Strictly increasing knots, from 0 to the horizon T.
    pub knots: Vec<f64>,
    pub size_floor: f64,
}

/// Provenance of one temporal bisection step.
#[derive(Clone, Debug)]
pub struct TimeRefinement {
    /// Old interval index -> (first new interval, second when split).
    pub children: Vec<(usize, Option<usize>)>,
    /// Per new interval: the old interval it copies, or None for a child
    /// of a split interval.
    pub copied_from: Vec<Option<usize>>,
}

impl TimeMesh {
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        // The negated comparison also rejects NaN horizons.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(horizon > 0.0) || n == 0 {
            return Err(Error::Config("time grid needs T > 0 and n >= 1".into()));
        }
        let knots = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        Ok(Self {
            knots,
            size_floor: SIZE_FLOOR,
        })
    }

    pub fn from_knots(knots: Vec<f64>, size_floor: f64) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 {
            return Err(Error::Config("time grid needs knots starting at 0".into()));
        }
        for w in knots.windows(2) {
            // The negated comparison also rejects NaN steps.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(w[1] - w[0] >= size_floor) {
                return Err(Error::MeshFloor {
                    kind: "time interval",
                    size: w[1] - w[0],
                    floor: size_floor,
                });
            }
        }
        Ok(Self { knots, size_floor })
    }

    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.knots[i + 1] - self.knots[i]
    }

    pub fn min_dt(&self) -> f64 {
        (0..self.n_intervals())
            .map(|i| self.dt(i))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_dt(&self) -> f64 {
        (0..self.n_intervals())
            .map(|i| self.dt(i))
            .fold(0.0, f64::max)
    }

    /// True when all steps agree to a 1e-12 relative spread.
    pub fn is_uniform(&self) -> bool {
        let min = self.min_dt();
        let max = self.max_dt();
        max - min <= 1e-12 * max
    }

    /// Single representative step of a uniform grid; lag arithmetic on
    /// the fast block path uses exact multiples of this value.
    pub fn canonical_dt(&self) -> f64 {
        self.horizon() / self.n_intervals() as f64
    }

    /// Bisects the marked intervals at their midpoints.
    pub fn bisect(&self, marked: &[usize]) -> Result<(Self, TimeRefinement)> {
        let n_old = self.n_intervals();
        let mut split = vec![false; n_old];
        for &i in marked {
            if i >= n_old {
                return Err(Error::BadMarkedIndex {
                    index: i,
                    len: n_old,
                });
            }
            split[i] = true;
        }
        for (i, &s) in split.iter().enumerate() {
            if s && self.dt(i) * 0.5 < self.size_floor {
                return Err(Error::MeshFloor {
                    kind: "time interval",
                    size: self.dt(i) * 0.5,
                    floor: self.size_floor,
                });
            }
        }
        let mut knots = Vec::with_capacity(self.knots.len() + marked.len());
        let mut children = Vec::with_capacity(n_old);
        let mut copied_from = Vec::new();
        for (i, &si) in split.iter().enumerate() {
            knots.push(self.knots[i]);
            if si {
                children.push((copied_from.len(), Some(copied_from.len() + 1)));
                copied_from.push(None);
                copied_from.push(None);
                knots.push(0.5 * (self.knots[i] + self.knots[i + 1]));
            } else {
                children.push((copied_from.len(), None));
                copied_from.push(Some(i));
            }
        }
        knots.push(self.horizon());
        let refined = Self {
            knots,
            size_floor: self.size_floor,
        };
        Ok((
            refined,
            TimeRefinement {
                children,
                copied_from,
            },
        ))
    }
}

/// Space-time boxes: the tensor grid I_i x Gamma_j of time intervals and
/// spatial elements on which residual indicators are accumulated.
#[derive(Clone, Copy)]
pub struct BoxGrid<'a> {
    pub space: &'a SpatialMesh,
    pub time: &'a TimeMesh,
}

impl<'a> BoxGrid<'a> {
    pub fn new(space: &'a SpatialMesh, time: &'a TimeMesh) -> Self {
        Self { space, time }
    }

    pub fn n_boxes(&self) -> usize {
        self.space.n_elements() * self.time.n_intervals()
    }

    /// Measure dt_i * h_j of box (i, j).
    pub fn measure(&self, i: usize, j: usize) -> f64 {
        self.time.dt(i) * self.space.lengths[j]
    }
}

/// Extremes of the step ratio dt_i / h_j over all boxes.
#[derive(Clone, Copy, Debug)]
pub struct CflExtrema {
    pub max_ratio: f64,
    pub min_ratio: f64,
}

pub fn cfl_extrema(space: &SpatialMesh, time: &TimeMesh) -> CflExtrema {
    CflExtrema {
        max_ratio: time.max_dt() / space.min_h(),
        min_ratio: time.min_dt() / space.max_h(),
    }
}

//! Space-time Galerkin system assembly.
//!
//! The bilinear form couples a test time interval and a trial time
//! interval through four knot-to-knot lags; the resulting matrix entry is
//! a second difference of boundary-boundary double integrals of the
//! twice time-integrated kernel, restricted to the region the lag can
//! reach. Entries are organized per test element and trial hat: the two
//! support elements of one trial hat are always integrated on the same
//! outer quadrature grid, so their opposite-sign near-node divergences
//! cancel pointwise in the quadrature sum. Pairs lit at all four lags go
//! through a cancellation-free combined kernel; pairs crossed by a cone
//! are integrated lag by lag on grids split at every cone crossing.
//!
//! Uniform time grids make the block matrix Toeplitz (one block per lag
//! index); local refinements reuse every block or entry whose inputs are
//! unchanged, reproducing the from-scratch values exactly.

use crate::error::{Error, Result};
use crate::kernel::{
    assembly_core_second_difference, assembly_kernel_core, circle_crossings, EntryLags, ENTRY_SIGNS,
};
use crate::mesh::{Point, SpaceRefinement, SpatialMesh, TimeMesh, TimeRefinement};
use crate::quadrature::{
    finite_part_inner_assembly, gauss_rule, integrate_fully_lit_hats, integrate_lightcone_hats,
    LinearShape, QuadratureConfig, Segment,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Neumann boundary datum, separable as g(t) w(x) like every bundled
/// experiment; the right-hand side needs the time mean of g per interval
/// and the residual needs pointwise values.
pub trait BoundaryDatum: Sync {
    /// Spatial profile w on element `elem` at point x.
    fn spatial(&self, mesh: &SpatialMesh, elem: usize, x: Point) -> f64;
    /// Time profile g at time t.
    fn time_value(&self, t: f64) -> f64;
    /// Mean of g over [t0, t1].
    fn time_mean(&self, t0: f64, t1: f64) -> f64;
    /// Pointwise datum value.
    fn eval(&self, mesh: &SpatialMesh, elem: usize, x: Point, t: f64) -> f64 {
        self.spatial(mesh, elem, x) * self.time_value(t)
    }
}

/// Lower-triangular block matrix storage.
#[derive(Clone, Debug)]
pub enum BlockStorage {
    /// Uniform time grid: block (i, i') equals the stored block at lag
    /// index i - i'.
    Toeplitz(Vec<DMatrix<f64>>),
    /// One block per (test row, trial column <= row).
    General(Vec<Vec<DMatrix<f64>>>),
}

/// Reuse accounting of the last incremental update.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReuseStats {
    pub reused: usize,
    pub recomputed: usize,
}

/// Assembled Galerkin system: block lower-triangular matrix, right-hand
/// side (one column per time interval), and refinement provenance.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub n_dofs: usize,
    pub n_time: usize,
    pub storage: BlockStorage,
    /// beta[(j, i)] = mean of g over interval i times the j-th spatial
    /// moment of w.
    pub rhs: DMatrix<f64>,
    /// Refinement generation, bumped by every incremental update.
    pub epoch: u64,
    pub row_epoch: Vec<u64>,
    pub col_epoch: Vec<u64>,
    /// Entry- (space) or block- (time) level reuse of the last update.
    pub last_update: Option<ReuseStats>,
}

impl BlockSystem {
    pub fn is_toeplitz(&self) -> bool {
        matches!(self.storage, BlockStorage::Toeplitz(_))
    }

    /// Block (i_test, i_trial) with i_trial <= i_test.
    pub fn block(&self, i_test: usize, i_trial: usize) -> &DMatrix<f64> {
        assert!(i_trial <= i_test && i_test < self.n_time);
        match &self.storage {
            BlockStorage::Toeplitz(b) => &b[i_test - i_trial],
            BlockStorage::General(rows) => &rows[i_test][i_trial],
        }
    }

    /// Number of distinct stored blocks.
    pub fn stored_blocks(&self) -> usize {
        match &self.storage {
            BlockStorage::Toeplitz(b) => b.len(),
            BlockStorage::General(rows) => rows.iter().map(Vec::len).sum(),
        }
    }
}

/// Hat function support: elements touching the node, with the local end
/// index the node occupies, plus all endpoint nodes of those elements
/// (the kink loci of the hat's inner integrals).
struct DofSupport {
    pairs: Vec<(usize, usize)>,
    kink_nodes: Vec<usize>,
}

struct AsmContext<'a> {
    space: &'a SpatialMesh,
    segs: Vec<Segment>,
    sups: Vec<DofSupport>,
    cfg: &'a QuadratureConfig,
}

impl<'a> AsmContext<'a> {
    fn new(space: &'a SpatialMesh, cfg: &'a QuadratureConfig) -> Self {
        let segs = (0..space.n_elements())
            .map(|k| Segment::of_element(space, k))
            .collect();
        let mut sups = Vec::with_capacity(space.n_dofs);
        for node in 0..space.nodes.len() {
            if space.dof_of_node[node].is_none() {
                continue;
            }
            let elems = space.support_elements(node);
            let mut pairs = Vec::with_capacity(2);
            let mut kinks = Vec::new();
            for e in elems {
                let ends = space.elements[e];
                let local = if ends[0] == node { 0 } else { 1 };
                debug_assert_eq!(ends[local], node);
                pairs.push((e, local));
                for n in ends {
                    if !kinks.contains(&n) {
                        kinks.push(n);
                    }
                }
            }
            sups.push(DofSupport {
                pairs,
                kink_nodes: kinks,
            });
        }
        debug_assert_eq!(sups.len(), space.n_dofs);
        Self {
            space,
            segs,
            sups,
            cfg,
        }
    }
}

fn point_segment_distance(p: Point, s: &Segment) -> f64 {
    let t = s.project(p).clamp(0.0, 1.0);
    (p - s.point(t)).norm()
}

/// Minimum distance between two non-crossing segments.
fn seg_min_dist(a: &Segment, b: &Segment) -> f64 {
    point_segment_distance(a.a, b)
        .min(point_segment_distance(a.b, b))
        .min(point_segment_distance(b.a, a))
        .min(point_segment_distance(b.b, a))
}

/// Maximum distance between two segments (attained at endpoints).
fn seg_max_dist(a: &Segment, b: &Segment) -> f64 {
    [(a.a, b.a), (a.a, b.b), (a.b, b.a), (a.b, b.b)]
        .iter()
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

/// Local coordinate on `out` closest to `inner`, with the distance.
fn seg_closest_s(out: &Segment, inner: &Segment) -> (f64, f64) {
    let mut best = (0.0, f64::INFINITY);
    for s in [
        0.0,
        1.0,
        out.project(inner.a).clamp(0.0, 1.0),
        out.project(inner.b).clamp(0.0, 1.0),
    ] {
        let d = point_segment_distance(out.point(s), inner);
        if d < best.1 {
            best = (s, d);
        }
    }
    best
}

/// Outer-grid kinks where the light circle of radius `lag` around a
/// moving point of `seg_out` becomes tangent to the line of `seg_in`
/// inside the segment (square-root onset of the lit region).
fn tangency_cuts(seg_out: &Segment, seg_in: &Segment, lag: f64, cuts: &mut Vec<Brk>) {
    let d_out = seg_out.b - seg_out.a;
    let denom = d_out.dot(&seg_in.normal);
    if denom.abs() < 1e-14 * seg_out.len {
        return;
    }
    let base = (seg_out.a - seg_in.a).dot(&seg_in.normal);
    for c in [lag, -lag] {
        let s = (c - base) / denom;
        if s > 0.0 && s < 1.0 {
            let u = seg_in.project(seg_out.point(s));
            if u > 0.0 && u < 1.0 {
                cuts.push(Brk {
                    s,
                    depth: CUT_DEPTH,
                });
            }
        }
    }
}

/// Dyadic grading depth toward outer-grid endpoints shared with the
/// trial hat's support (where inner integrals diverge like 1/distance).
const END_DEPTH: usize = 14;
/// Grading depth toward interior cone-crossing kinks.
const CUT_DEPTH: usize = 6;

/// Grid breakpoint with the grading depth applied toward it.
struct Brk {
    s: f64,
    depth: usize,
}

fn graded_panels(lo: f64, hi: f64, toward_lo: bool, depth: usize, out: &mut Vec<(f64, f64)>) {
    if depth == 0 || hi - lo <= 0.0 {
        out.push((lo, hi));
        return;
    }
    let len = hi - lo;
    if toward_lo {
        let mut h = hi;
        for k in 0..depth {
            let l = lo + len * 0.5f64.powi(k as i32 + 1);
            out.push((l, h));
            h = l;
        }
        out.push((lo, h));
    } else {
        let mut l = lo;
        for k in 0..depth {
            let h = hi - len * 0.5f64.powi(k as i32 + 1);
            out.push((l, h));
            l = h;
        }
        out.push((l, hi));
    }
}

/// Outer quadrature panels on [0, 1] from interior breakpoints and the
/// grading depths of the two segment ends.
fn build_panels(mut brks: Vec<Brk>, end0: usize, end1: usize) -> Vec<(f64, f64)> {
    brks.retain(|b| b.s > 1e-9 && b.s < 1.0 - 1e-9);
    brks.sort_by(|x, y| x.s.total_cmp(&y.s));
    let mut pts: Vec<Brk> = vec![Brk {
        s: 0.0,
        depth: end0,
    }];
    for b in brks {
        let last = pts.last_mut().unwrap();
        if b.s - last.s < 1e-9 {
            last.depth = last.depth.max(b.depth);
        } else {
            pts.push(b);
        }
    }
    if 1.0 - pts.last().unwrap().s < 1e-9 {
        let d = pts.pop().unwrap().depth.max(end1);
        pts.push(Brk { s: 1.0, depth: d });
    } else {
        pts.push(Brk {
            s: 1.0,
            depth: end1,
        });
    }
    let mut panels = Vec::new();
    for w in pts.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        if p.depth == 0 && q.depth == 0 {
            panels.push((p.s, q.s));
        } else {
            let mid = 0.5 * (p.s + q.s);
            graded_panels(p.s, mid, true, p.depth, &mut panels);
            graded_panels(mid, q.s, false, q.depth, &mut panels);
        }
    }
    panels
}

/// Accumulates the contributions of test element `e_out` to the matrix
/// column of trial hat `b`, for one block given by its four entry lags.
/// All support elements of `b` are integrated on one shared outer grid.
#[allow(clippy::too_many_arguments)]
fn column_contribution(
    ctx: &AsmContext,
    e_out: usize,
    b: usize,
    lags: &EntryLags,
    dt_test: f64,
    dt_trial: f64,
    accept: &(dyn Fn(usize, usize) -> bool + Sync),
    out: &mut DMatrix<f64>,
) {
    let out_dofs = ctx.space.element_dofs(e_out);
    if !out_dofs.iter().flatten().any(|&a| accept(a, b)) {
        return;
    }
    let seg_out = &ctx.segs[e_out];
    let sup = &ctx.sups[b];

    let mut dmin = f64::INFINITY;
    let mut dmax: f64 = 0.0;
    for &(e_in, _) in &sup.pairs {
        if e_in == e_out {
            dmin = 0.0;
            dmax = dmax.max(seg_out.len);
        } else {
            dmin = dmin.min(seg_min_dist(seg_out, &ctx.segs[e_in]));
            dmax = dmax.max(seg_max_dist(seg_out, &ctx.segs[e_in]));
        }
    }
    if lags[0] <= dmin {
        return;
    }

    let ends = ctx.space.elements[e_out];
    let end0 = if sup.kink_nodes.contains(&ends[0]) {
        END_DEPTH
    } else {
        0
    };
    let end1 = if sup.kink_nodes.contains(&ends[1]) {
        END_DEPTH
    } else {
        0
    };
    // Graded breakpoints toward close (but not touching) support
    // elements; touching ones are covered by the end grading.
    let mut near_brks: Vec<Brk> = Vec::new();
    for &(e_in, _) in &sup.pairs {
        if e_in == e_out {
            continue;
        }
        let (s_at, d) = seg_closest_s(seg_out, &ctx.segs[e_in]);
        if d > 0.0 && d < 4.0 * seg_out.len {
            let depth =
                ((8.0 * seg_out.len / d).log2().ceil() as usize).clamp(2, ctx.cfg.max_grade_depth);
            near_brks.push(Brk { s: s_at, depth });
        }
    }

    let rule = gauss_rule(ctx.cfg.outer_order);
    let pref = 1.0 / (2.0 * std::f64::consts::PI * dt_test * dt_trial);
    let mut scatter = |s: f64, w: f64, val: f64| {
        let phis = [1.0 - s, s];
        for (local, dof) in out_dofs.iter().enumerate() {
            if let Some(a) = dof {
                if accept(*a, b) {
                    out[(*a, b)] += pref * w * phis[local] * val;
                }
            }
        }
    };

    if lags[3] > dmax {
        // All four lags reach past every point pair: one grid, combined
        // cancellation-free kernel per inner element, finite parts
        // differenced lag by lag on the self element.
        let mut brks = Vec::new();
        brks.extend(near_brks);
        for panel in build_panels(brks, end0, end1) {
            let plen = panel.1 - panel.0;
            for (u, gw) in rule.nodes.iter().zip(&rule.weights) {
                let s = panel.0 + plen * u;
                let w = gw * plen * seg_out.len;
                let x = seg_out.point(s);
                let mut val = 0.0;
                for &(e_in, li) in &sup.pairs {
                    if e_in == e_out {
                        let shape = hat_shape(li);
                        for (l, sg) in lags.iter().zip(ENTRY_SIGNS) {
                            val += sg
                                * finite_part_inner_assembly(
                                    seg_out,
                                    shape,
                                    s,
                                    *l,
                                    ctx.cfg,
                                    ctx.cfg.inner_order,
                                );
                        }
                    } else {
                        val += integrate_fully_lit_hats(
                            &ctx.segs[e_in],
                            x,
                            seg_out.normal,
                            ctx.cfg,
                            ctx.cfg.inner_order,
                            |p| assembly_core_second_difference(p, lags, dt_test, dt_trial),
                        )[li];
                    }
                }
                scatter(s, w, val);
            }
        }
    } else {
        // Wavefront block: integrate lag by lag on grids split at the
        // cone crossings of that lag.
        for (l, sg) in lags.iter().zip(ENTRY_SIGNS) {
            let lag = *l;
            if lag <= dmin {
                continue;
            }
            let mut brks: Vec<Brk> = near_brks
                .iter()
                .map(|b| Brk {
                    s: b.s,
                    depth: b.depth,
                })
                .collect();
            for &nd in &sup.kink_nodes {
                for s in circle_crossings(seg_out.a, seg_out.b, ctx.space.nodes[nd], lag) {
                    brks.push(Brk {
                        s,
                        depth: CUT_DEPTH,
                    });
                }
            }
            for &(e_in, _) in &sup.pairs {
                if e_in != e_out {
                    tangency_cuts(seg_out, &ctx.segs[e_in], lag, &mut brks);
                }
            }
            for panel in build_panels(brks, end0, end1) {
                let plen = panel.1 - panel.0;
                for (u, gw) in rule.nodes.iter().zip(&rule.weights) {
                    let s = panel.0 + plen * u;
                    let w = gw * plen * seg_out.len;
                    let x = seg_out.point(s);
                    let mut val = 0.0;
                    for &(e_in, li) in &sup.pairs {
                        if e_in == e_out {
                            val += finite_part_inner_assembly(
                                seg_out,
                                hat_shape(li),
                                s,
                                lag,
                                ctx.cfg,
                                ctx.cfg.inner_order,
                            );
                        } else {
                            val += integrate_lightcone_hats(
                                &ctx.segs[e_in],
                                x,
                                seg_out.normal,
                                lag,
                                ctx.cfg,
                                ctx.cfg.inner_order,
                                assembly_kernel_core,
                            )[li];
                        }
                    }
                    scatter(s, w, sg * val);
                }
            }
        }
    }
}

fn hat_shape(local: usize) -> LinearShape {
    if local == 0 {
        LinearShape { v0: 1.0, v1: 0.0 }
    } else {
        LinearShape { v0: 0.0, v1: 1.0 }
    }
}

/// Assembles one block given its four entry lags into `out`.
fn block_into(
    ctx: &AsmContext,
    lags: &EntryLags,
    dt_test: f64,
    dt_trial: f64,
    accept: &(dyn Fn(usize, usize) -> bool + Sync),
    out: &mut DMatrix<f64>,
) {
    if lags[0] <= 0.0 {
        return;
    }
    for e_out in 0..ctx.space.n_elements() {
        if ctx.space.element_dofs(e_out).iter().all(Option::is_none) {
            continue;
        }
        for b in 0..ctx.space.n_dofs {
            column_contribution(ctx, e_out, b, lags, dt_test, dt_trial, accept, out);
        }
    }
}

/// Entry lags of the uniform-grid block at lag index m (canonical exact
/// multiples of the step).
fn toeplitz_lags(m: usize, dt: f64) -> EntryLags {
    let mf = m as f64;
    [(mf + 1.0) * dt, mf * dt, mf * dt, (mf - 1.0) * dt]
}

/// Entry lags of block (i_test, i_trial) from raw knot differences.
fn general_lags(time: &TimeMesh, i_test: usize, i_trial: usize) -> EntryLags {
    let k = &time.knots;
    [
        k[i_test + 1] - k[i_trial],
        k[i_test] - k[i_trial],
        k[i_test + 1] - k[i_trial + 1],
        k[i_test] - k[i_trial + 1],
    ]
}

fn accept_all(_: usize, _: usize) -> bool {
    true
}

/// Assembles one raw block (i_trial <= i_test not required; acausal
/// blocks come out zero). Mainly for structural tests; full systems go
/// through `assemble_system`.
pub fn assemble_block(
    space: &SpatialMesh,
    time: &TimeMesh,
    i_test: usize,
    i_trial: usize,
    cfg: &QuadratureConfig,
) -> DMatrix<f64> {
    let ctx = AsmContext::new(space, cfg);
    let mut out = DMatrix::zeros(space.n_dofs, space.n_dofs);
    let lags = general_lags(time, i_test, i_trial);
    block_into(
        &ctx,
        &lags,
        time.dt(i_test),
        time.dt(i_trial),
        &accept_all,
        &mut out,
    );
    out
}

/// Spatial moments of the datum profile against every hat.
pub fn spatial_moments(
    space: &SpatialMesh,
    datum: &dyn BoundaryDatum,
    cfg: &QuadratureConfig,
) -> DVector<f64> {
    let rule = gauss_rule(cfg.inner_order);
    let mut m = DVector::zeros(space.n_dofs);
    for e in 0..space.n_elements() {
        let dofs = space.element_dofs(e);
        let len = space.lengths[e];
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            let x = space.point_on(e, *u);
            let wv = w * len * datum.spatial(space, e, x);
            if let Some(j) = dofs[0] {
                m[j] += wv * (1.0 - u);
            }
            if let Some(j) = dofs[1] {
                m[j] += wv * u;
            }
        }
    }
    m
}

/// Right-hand side: column i is the spatial moment vector scaled by the
/// mean of the time profile over interval i.
pub fn assemble_rhs(
    space: &SpatialMesh,
    time: &TimeMesh,
    datum: &dyn BoundaryDatum,
    cfg: &QuadratureConfig,
) -> DMatrix<f64> {
    let mom = spatial_moments(space, datum, cfg);
    let n = time.n_intervals();
    let mut rhs = DMatrix::zeros(space.n_dofs, n);
    for i in 0..n {
        let g = datum.time_mean(time.knots[i], time.knots[i + 1]);
        for j in 0..space.n_dofs {
            rhs[(j, i)] = mom[j] * g;
        }
    }
    rhs
}

/// Assembles the full block system; uniform time grids use Toeplitz
/// storage (one block per lag index).
pub fn assemble_system(
    space: &SpatialMesh,
    time: &TimeMesh,
    datum: &dyn BoundaryDatum,
    cfg: &QuadratureConfig,
) -> Result<BlockSystem> {
    if space.n_dofs == 0 {
        return Err(Error::Config(
            "mesh has no degrees of freedom to solve for".into(),
        ));
    }
    let ctx = AsmContext::new(space, cfg);
    let n = time.n_intervals();
    let m = space.n_dofs;
    let storage = if time.is_uniform() {
        let dt = time.canonical_dt();
        let blocks: Vec<DMatrix<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut out = DMatrix::zeros(m, m);
                block_into(&ctx, &toeplitz_lags(k, dt), dt, dt, &accept_all, &mut out);
                out
            })
            .collect();
        BlockStorage::Toeplitz(blocks)
    } else {
        let rows: Vec<Vec<DMatrix<f64>>> = (0..n)
            .into_par_iter()
            .map(|it| {
                (0..=it)
                    .map(|i| {
                        let mut out = DMatrix::zeros(m, m);
                        block_into(
                            &ctx,
                            &general_lags(time, it, i),
                            time.dt(it),
                            time.dt(i),
                            &accept_all,
                            &mut out,
                        );
                        out
                    })
                    .collect()
            })
            .collect();
        BlockStorage::General(rows)
    };
    Ok(BlockSystem {
        n_dofs: m,
        n_time: n,
        storage,
        rhs: assemble_rhs(space, time, datum, cfg),
        epoch: 0,
        row_epoch: vec![0; n],
        col_epoch: vec![0; n],
        last_update: None,
    })
}

/// Rebuilds the system after a spatial bisection on an unchanged time
/// grid. Entries between two unchanged hats are copied; all others are
/// recomputed on the refined mesh.
pub fn update_after_space_refinement(
    old: &BlockSystem,
    space: &SpatialMesh,
    refinement: &SpaceRefinement,
    time: &TimeMesh,
    datum: &dyn BoundaryDatum,
    cfg: &QuadratureConfig,
) -> Result<BlockSystem> {
    if refinement.dof_status.len() != space.n_dofs
        || refinement.new_dof_of_old.len() != old.n_dofs
        || old.n_time != time.n_intervals()
    {
        return Err(Error::Config(
            "stale refinement provenance: meshes do not match the system".into(),
        ));
    }
    let m = space.n_dofs;
    let old_of: Vec<Option<usize>> = refinement
        .dof_status
        .iter()
        .map(|s| s.reusable_as())
        .collect();
    let dirty: Vec<bool> = old_of.iter().map(Option::is_none).collect();
    let accept = |a: usize, b: usize| dirty[a] || dirty[b];
    let ctx = AsmContext::new(space, cfg);

    let clean: Vec<(usize, usize)> = old_of
        .iter()
        .enumerate()
        .filter_map(|(jn, o)| o.map(|jo| (jn, jo)))
        .collect();
    let fill = |lags: EntryLags, dt_test: f64, dt_trial: f64, old_block: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(m, m);
        for &(an, ao) in &clean {
            for &(bn, bo) in &clean {
                out[(an, bn)] = old_block[(ao, bo)];
            }
        }
        block_into(&ctx, &lags, dt_test, dt_trial, &accept, &mut out);
        out
    };

    let storage = match &old.storage {
        BlockStorage::Toeplitz(blocks) => {
            let dt = time.canonical_dt();
            BlockStorage::Toeplitz(
                blocks
                    .par_iter()
                    .enumerate()
                    .map(|(k, ob)| fill(toeplitz_lags(k, dt), dt, dt, ob))
                    .collect(),
            )
        }
        BlockStorage::General(rows) => BlockStorage::General(
            rows.par_iter()
                .enumerate()
                .map(|(it, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(i, ob)| fill(general_lags(time, it, i), time.dt(it), time.dt(i), ob))
                        .collect()
                })
                .collect(),
        ),
    };

    // Rows of unchanged hats keep their right-hand side; dirty hats get
    // fresh spatial moments.
    let mut rhs = DMatrix::zeros(m, old.n_time);
    let mom = spatial_moments(space, datum, cfg);
    for j in 0..m {
        if let Some(jo) = old_of[j] {
            for i in 0..old.n_time {
                rhs[(j, i)] = old.rhs[(jo, i)];
            }
        } else {
            for i in 0..old.n_time {
                rhs[(j, i)] = mom[j] * datum.time_mean(time.knots[i], time.knots[i + 1]);
            }
        }
    }

    let n_clean = clean.len();
    let per_block = ReuseStats {
        reused: n_clean * n_clean,
        recomputed: m * m - n_clean * n_clean,
    };
    Ok(BlockSystem {
        n_dofs: m,
        n_time: old.n_time,
        storage,
        rhs,
        epoch: old.epoch + 1,
        row_epoch: old.row_epoch.clone(),
        col_epoch: old.col_epoch.clone(),
        last_update: Some(ReuseStats {
            reused: per_block.reused * old.stored_blocks(),
            recomputed: per_block.recomputed * old.stored_blocks(),
        }),
    })
}

/// Rebuilds the system after a temporal bisection on an unchanged
/// spatial mesh. Blocks between two unsplit intervals are copied; rows
/// and columns of split intervals are assembled fresh. Splitting any
/// interval leaves a non-uniform grid, so the result drops to general
/// storage.
pub fn update_after_time_refinement(
    old: &BlockSystem,
    space: &SpatialMesh,
    time: &TimeMesh,
    refinement: &TimeRefinement,
    datum: &dyn BoundaryDatum,
    cfg: &QuadratureConfig,
) -> Result<BlockSystem> {
    let n = time.n_intervals();
    if refinement.children.len() != old.n_time
        || refinement.copied_from.len() != n
        || space.n_dofs != old.n_dofs
    {
        return Err(Error::Config(
            "stale refinement provenance: meshes do not match the system".into(),
        ));
    }
    let m = old.n_dofs;
    let epoch = old.epoch + 1;
    if refinement.copied_from.iter().all(Option::is_some) {
        let mut sys = old.clone();
        sys.epoch = epoch;
        sys.last_update = Some(ReuseStats {
            reused: old.stored_blocks(),
            recomputed: 0,
        });
        return Ok(sys);
    }

    let ctx = AsmContext::new(space, cfg);
    let copied = &refinement.copied_from;
    let rows: Vec<Vec<DMatrix<f64>>> = (0..n)
        .into_par_iter()
        .map(|it| {
            (0..=it)
                .map(|i| match (copied[it], copied[i]) {
                    (Some(ot), Some(oi)) => old.block(ot, oi).clone(),
                    _ => {
                        let mut out = DMatrix::zeros(m, m);
                        block_into(
                            &ctx,
                            &general_lags(time, it, i),
                            time.dt(it),
                            time.dt(i),
                            &accept_all,
                            &mut out,
                        );
                        out
                    }
                })
                .collect()
        })
        .collect();

    let mom = spatial_moments(space, datum, cfg);
    let mut rhs = DMatrix::zeros(m, n);
    for i in 0..n {
        match copied[i] {
            Some(oi) => {
                for j in 0..m {
                    rhs[(j, i)] = old.rhs[(j, oi)];
                }
            }
            None => {
                let g = datum.time_mean(time.knots[i], time.knots[i + 1]);
                for j in 0..m {
                    rhs[(j, i)] = mom[j] * g;
                }
            }
        }
    }

    let row_epoch: Vec<u64> = copied
        .iter()
        .map(|c| match c {
            Some(o) => old.row_epoch[*o],
            None => epoch,
        })
        .collect();
    let col_epoch: Vec<u64> = copied
        .iter()
        .map(|c| match c {
            Some(o) => old.col_epoch[*o],
            None => epoch,
        })
        .collect();
    let mut reused = 0usize;
    let mut recomputed = 0usize;
    for it in 0..n {
        for i in 0..=it {
            if copied[it].is_some() && copied[i].is_some() {
                reused += 1;
            } else {
                recomputed += 1;
            }
        }
    }
    Ok(BlockSystem {
        n_dofs: m,
        n_time: n,
        storage: BlockStorage::General(rows),
        rhs,
        epoch,
        row_epoch,
        col_epoch,
        last_update: Some(ReuseStats { reused, recomputed }),
    })
}

//! Quadrature over boundary segments crossed by light cones.
//!
//! Plain Gauss rules are exact for smooth integrands, so segments are
//! first partitioned at their light-cone crossings; on the cone side the
//! integrand carries square-root behavior that a sine substitution turns
//! smooth again. Field points close to (but off) a segment produce a
//! near-singular 1/r^2 boundary layer that is resolved by deterministic
//! dyadically graded panels toward the closest point. Field points on
//! the segment itself are handled by Hadamard finite-part routines built
//! on exact singularity subtraction: the subtracted moments have closed
//! forms and the remainders are rearranged algebraically so no
//! cancellation occurs near the singular point.

use crate::kernel::{lightcone_split, KernelPoint};
use crate::mesh::{Point, SpatialMesh};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Gauss-Legendre rule on [0, 1].
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn compute_gauss(n: usize) -> GaussRule {
    assert!(n >= 1, "gauss rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for k in 0..m {
        // Initial guess on [-1, 1], refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = 0.5 * (1.0 - x);
        weights[k] = 0.5 * w;
        nodes[n - 1 - k] = 0.5 * (1.0 + x);
        weights[n - 1 - k] = 0.5 * w;
    }
    GaussRule { nodes, weights }
}

/// Cached Gauss-Legendre rule on [0, 1] with `n` nodes.
pub fn gauss_rule(n: usize) -> &'static GaussRule {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static GaussRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n)
        .or_insert_with(|| Box::leak(Box::new(compute_gauss(n))))
}

/// Linear function on a segment given by its endpoint values.
#[derive(Clone, Copy, Debug)]
pub struct LinearShape {
    pub v0: f64,
    pub v1: f64,
}

impl LinearShape {
    pub const ONE: LinearShape = LinearShape { v0: 1.0, v1: 1.0 };

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        self.v0 + (self.v1 - self.v0) * s
    }
}

/// Straight segment with its unit normal.
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    pub normal: Point,
    pub len: f64,
}

impl Segment {
    pub fn of_element(mesh: &SpatialMesh, k: usize) -> Self {
        let (a, b) = mesh.endpoints(k);
        Self {
            a,
            b,
            normal: mesh.normals[k],
            len: mesh.lengths[k],
        }
    }

    #[inline]
    pub fn point(&self, s: f64) -> Point {
        self.a + (self.b - self.a) * s
    }

    /// Local coordinate of the orthogonal projection of p (unclamped).
    #[inline]
    pub fn project(&self, p: Point) -> f64 {
        (p - self.a).dot(&(self.b - self.a)) / (self.len * self.len)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadratureConfig {
    /// Gauss order for outer (test-side) integrals.
    pub outer_order: usize,
    /// Gauss order for inner (trial-side) integrals.
    pub inner_order: usize,
    /// Gauss order for time integrals of the residual.
    pub time_order: usize,
    /// Relative retreat from exact cone crossings.
    pub cone_shrink: f64,
    /// Graded panels toward the closest point for near-singular
    /// integrands; disabling reverts to single-panel Gauss.
    pub near_grading: bool,
    /// Cap on the dyadic grading depth.
    pub max_grade_depth: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            outer_order: 4,
            inner_order: 8,
            time_order: 4,
            cone_shrink: 1e-12,
            near_grading: true,
            max_grade_depth: 24,
        }
    }
}

/// One integration panel in local coordinates with optional square-root
/// absorption at one end.
#[derive(Clone, Copy, Debug)]
struct Panel {
    a: f64,
    b: f64,
    absorb_a: bool,
    absorb_b: bool,
}

/// Integrates f over [a, b] with `order` Gauss nodes; a sine
/// substitution clusters nodes at an end marked for absorption, turning
/// sqrt(|s - end|) factors smooth.
fn panel_integrate(p: Panel, order: usize, f: &mut dyn FnMut(f64) -> f64) -> f64 {
    let rule = gauss_rule(order);
    let len = p.b - p.a;
    if len <= 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    if p.absorb_a && p.absorb_b {
        let mid = 0.5 * (p.a + p.b);
        return panel_integrate(
            Panel {
                a: p.a,
                b: mid,
                absorb_a: true,
                absorb_b: false,
            },
            order,
            f,
        ) + panel_integrate(
            Panel {
                a: mid,
                b: p.b,
                absorb_a: false,
                absorb_b: true,
            },
            order,
            f,
        );
    }
    if p.absorb_b {
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            let t = std::f64::consts::FRAC_PI_2 * u;
            let s = p.a + len * t.sin();
            sum += w * std::f64::consts::FRAC_PI_2 * t.cos() * len * f(s);
        }
    } else if p.absorb_a {
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            let t = std::f64::consts::FRAC_PI_2 * u;
            let s = p.b - len * t.sin();
            sum += w * std::f64::consts::FRAC_PI_2 * t.cos() * len * f(s);
        }
    } else {
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            sum += w * len * f(p.a + len * u);
        }
    }
    sum
}

/// Splits [a, b] into panels dyadically graded toward `target` (one of
/// the ends), finest panel comparable to the boundary-layer width.
fn grade_toward(a: f64, b: f64, target_is_a: bool, depth: usize, out: &mut Vec<Panel>) {
    if depth == 0 || b - a <= 0.0 {
        out.push(Panel {
            a,
            b,
            absorb_a: false,
            absorb_b: false,
        });
        return;
    }
    let len = b - a;
    if target_is_a {
        let mut hi = b;
        for k in 0..depth {
            let lo = a + len * 0.5f64.powi(k as i32 + 1);
            out.push(Panel {
                a: lo,
                b: hi,
                absorb_a: false,
                absorb_b: false,
            });
            hi = lo;
        }
        out.push(Panel {
            a,
            b: hi,
            absorb_a: false,
            absorb_b: false,
        });
    } else {
        let mut lo = a;
        for k in 0..depth {
            let hi = b - len * 0.5f64.powi(k as i32 + 1);
            out.push(Panel {
                a: lo,
                b: hi,
                absorb_a: false,
                absorb_b: false,
            });
            lo = hi;
        }
        out.push(Panel {
            a: lo,
            b,
            absorb_a: false,
            absorb_b: false,
        });
    }
}

/// Panel layout for one cone piece [p0, p1] of a segment of length
/// `seg_len`. Cone flags trigger the absorbing substitution; a nearby
/// field point (distance `dmin` attained at local coordinate `s_near`)
/// triggers graded panels toward it.
#[allow(clippy::too_many_arguments)]
fn piece_panels(
    mut p0: f64,
    mut p1: f64,
    cone0: bool,
    cone1: bool,
    s_near: f64,
    dmin: f64,
    seg_len: f64,
    cfg: &QuadratureConfig,
) -> Vec<Panel> {
    if cone0 {
        p0 += cfg.cone_shrink * (p1 - p0);
    }
    if cone1 {
        p1 -= cfg.cone_shrink * (p1 - p0);
    }
    let mut panels = Vec::new();
    let plen = (p1 - p0) * seg_len;
    let near = cfg.near_grading && dmin < plen;
    if !near {
        panels.push(Panel {
            a: p0,
            b: p1,
            absorb_a: cone0,
            absorb_b: cone1,
        });
        return panels;
    }
    let depth = ((plen / dmin.max(1e-300)).log2().ceil() as usize).clamp(2, cfg.max_grade_depth);
    let sn = s_near.clamp(p0, p1);
    if sn - p0 > 1e-14 {
        grade_toward(p0, sn, false, depth, &mut panels);
    }
    if p1 - sn > 1e-14 {
        grade_toward(sn, p1, true, depth, &mut panels);
    }
    // Cone absorption belongs to the outermost panels only.
    if cone0 {
        if let Some(first) = panels.iter_mut().min_by(|a, b| a.a.total_cmp(&b.a)) {
            first.absorb_a = true;
        }
    }
    if cone1 {
        if let Some(last) = panels.iter_mut().max_by(|a, b| a.b.total_cmp(&b.b)) {
            last.absorb_b = true;
        }
    }
    panels
}

/// As `panel_integrate`, but accumulates the integrals against the two
/// local hat functions (1 - s) and s in one sweep of kernel values.
fn panel_integrate_hats(p: Panel, order: usize, f: &mut dyn FnMut(f64) -> f64) -> [f64; 2] {
    let rule = gauss_rule(order);
    let len = p.b - p.a;
    if len <= 0.0 {
        return [0.0, 0.0];
    }
    if p.absorb_a && p.absorb_b {
        let mid = 0.5 * (p.a + p.b);
        let lo = panel_integrate_hats(
            Panel {
                a: p.a,
                b: mid,
                absorb_a: true,
                absorb_b: false,
            },
            order,
            f,
        );
        let hi = panel_integrate_hats(
            Panel {
                a: mid,
                b: p.b,
                absorb_a: false,
                absorb_b: true,
            },
            order,
            f,
        );
        return [lo[0] + hi[0], lo[1] + hi[1]];
    }
    let mut sum = [0.0, 0.0];
    let mut add = |w: f64, s: f64| {
        let v = w * f(s);
        sum[0] += v * (1.0 - s);
        sum[1] += v * s;
    };
    if p.absorb_b {
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            let t = std::f64::consts::FRAC_PI_2 * u;
            add(
                w * std::f64::consts::FRAC_PI_2 * t.cos() * len,
                p.a + len * t.sin(),
            );
        }
    } else if p.absorb_a {
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            let t = std::f64::consts::FRAC_PI_2 * u;
            add(
                w * std::f64::consts::FRAC_PI_2 * t.cos() * len,
                p.b - len * t.sin(),
            );
        }
    } else {
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            add(w * len, p.a + len * u);
        }
    }
    sum
}

/// Distance from x to the segment and the local coordinate where it is
/// attained (clamped projection).
pub fn closest_point(seg: &Segment, x: Point) -> (f64, f64) {
    let s = seg.project(x).clamp(0.0, 1.0);
    ((x - seg.point(s)).norm(), s)
}

/// Integrals over the part of a segment inside the light circle of
/// radius `delta` around x, of kernel(x, y) * hat(y) ds_y for the two
/// local hats (1 - s) and s. The kernel closure receives the geometric
/// pair and the lag. The field point must not lie on the segment.
pub fn integrate_lightcone_hats<K>(
    seg: &Segment,
    x: Point,
    nx: Point,
    delta: f64,
    cfg: &QuadratureConfig,
    order: usize,
    kernel: K,
) -> [f64; 2]
where
    K: Fn(&KernelPoint, f64) -> f64,
{
    if delta <= 0.0 {
        return [0.0, 0.0];
    }
    let (dmin, s_near) = closest_point(seg, x);
    if dmin >= delta {
        return [0.0, 0.0];
    }
    let pieces = lightcone_split(seg.a, seg.b, x, delta);
    let mut total = [0.0, 0.0];
    let mut f = |s: f64| {
        let p = KernelPoint::new(x, seg.point(s), nx, seg.normal);
        kernel(&p, delta) * seg.len
    };
    for piece in pieces {
        if !piece.inside {
            continue;
        }
        for panel in piece_panels(
            piece.s0,
            piece.s1,
            piece.cone_s0,
            piece.cone_s1,
            s_near,
            dmin,
            seg.len,
            cfg,
        ) {
            let v = panel_integrate_hats(panel, order, &mut f);
            total[0] += v[0];
            total[1] += v[1];
        }
    }
    total
}

/// Integral over the part of a segment inside the light circle of
/// radius `delta` around x, of kernel(x, y) * shape(y) ds_y.
#[allow(clippy::too_many_arguments)]
pub fn integrate_lightcone<K>(
    seg: &Segment,
    x: Point,
    nx: Point,
    delta: f64,
    shape: LinearShape,
    cfg: &QuadratureConfig,
    order: usize,
    kernel: K,
) -> f64
where
    K: Fn(&KernelPoint, f64) -> f64,
{
    let v = integrate_lightcone_hats(seg, x, nx, delta, cfg, order, kernel);
    shape.v0 * v[0] + shape.v1 * v[1]
}

/// Hat integrals over the whole segment of f(x, y) * hat(y) ds_y for an
/// integrand with no cone crossing on the segment (caller-checked), with
/// near-singularity grading. Used for combined multi-lag integrands.
pub fn integrate_fully_lit_hats<F>(
    seg: &Segment,
    x: Point,
    nx: Point,
    cfg: &QuadratureConfig,
    order: usize,
    f: F,
) -> [f64; 2]
where
    F: Fn(&KernelPoint) -> f64,
{
    let (dmin, s_near) = closest_point(seg, x);
    let mut g = |s: f64| {
        let p = KernelPoint::new(x, seg.point(s), nx, seg.normal);
        f(&p) * seg.len
    };
    let mut total = [0.0, 0.0];
    for panel in piece_panels(0.0, 1.0, false, false, s_near, dmin, seg.len, cfg) {
        let v = panel_integrate_hats(panel, order, &mut g);
        total[0] += v[0];
        total[1] += v[1];
    }
    total
}

/// Quadrature layout used by `integrate_fully_lit_hats`, exposed as a
/// reusable node list: local coordinates on the segment and weights with
/// the arc-length jacobian folded in, near-singularity grading toward
/// the closest approach of x included. Lets callers that evaluate many
/// smooth integrands against the same (segment, field point) geometry
/// precompute per-node factors once.
pub fn smooth_layout(
    seg: &Segment,
    x: Point,
    cfg: &QuadratureConfig,
    order: usize,
) -> Vec<(f64, f64)> {
    let (dmin, s_near) = closest_point(seg, x);
    let rule = gauss_rule(order);
    let mut out = Vec::new();
    for panel in piece_panels(0.0, 1.0, false, false, s_near, dmin, seg.len, cfg) {
        let plen = panel.b - panel.a;
        if plen <= 0.0 {
            continue;
        }
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            out.push((panel.a + plen * u, w * plen * seg.len));
        }
    }
    out
}

/// As `integrate_fully_lit_hats` against one linear density.
pub fn integrate_fully_lit<F>(
    seg: &Segment,
    x: Point,
    nx: Point,
    shape: LinearShape,
    cfg: &QuadratureConfig,
    order: usize,
    f: F,
) -> f64
where
    F: Fn(&KernelPoint) -> f64,
{
    let v = integrate_fully_lit_hats(seg, x, nx, cfg, order, f);
    shape.v0 * v[0] + shape.v1 * v[1]
}

/// Geometry of a finite-part evaluation: the field point sits strictly
/// inside the segment at arc distances (lm, lp) from its two ends; the
/// cone caps the reachable part at m = min(l, delta).
struct FinitePartSetup {
    phi_x: f64,
    slope: f64,
    m_minus: f64,
    m_plus: f64,
    cone_minus: bool,
    cone_plus: bool,
}

fn finite_part_setup(seg: &Segment, shape: LinearShape, s_x: f64, delta: f64) -> FinitePartSetup {
    debug_assert!(s_x > 0.0 && s_x < 1.0, "field point must be interior");
    let l_minus = s_x * seg.len;
    let l_plus = (1.0 - s_x) * seg.len;
    let cone_minus = delta < l_minus;
    let cone_plus = delta < l_plus;
    FinitePartSetup {
        phi_x: shape.eval(s_x),
        slope: (shape.v1 - shape.v0) / seg.len,
        m_minus: if cone_minus { delta } else { l_minus },
        m_plus: if cone_plus { delta } else { l_plus },
        cone_minus,
        cone_plus,
    }
}

/// Integrates `rem` (a smooth remainder in the signed arc coordinate xi)
/// over [-m_minus, m_plus], absorbing square-root ends at cone caps.
fn integrate_remainder(
    setup: &FinitePartSetup,
    cfg: &QuadratureConfig,
    order: usize,
    rem: &mut dyn FnMut(f64) -> f64,
) -> f64 {
    let mut total = 0.0;
    for (a, b, cone_a, cone_b) in [
        (-setup.m_minus, 0.0, setup.cone_minus, false),
        (0.0, setup.m_plus, false, setup.cone_plus),
    ] {
        let mut a = a;
        let mut b = b;
        if cone_a {
            a += cfg.cone_shrink * (b - a);
        }
        if cone_b {
            b -= cfg.cone_shrink * (b - a);
        }
        total += panel_integrate(
            Panel {
                a,
                b,
                absorb_a: cone_a,
                absorb_b: cone_b,
            },
            order,
            rem,
        );
    }
    total
}

/// Hadamard finite part of the residual-kernel integral over the
/// segment containing the field point x (at interior local coordinate
/// s_x), against a linear density. On a straight segment the kernel
/// numerator reduces exactly to -sqrt(delta^2 - xi^2) times the density,
/// so the subtraction constants and the smooth remainder are available
/// in closed form:
///
///   integrand = a2 / xi^2 + a1 / xi + phi(xi) / (delta + sqrt(delta^2 - xi^2))
///
/// with a2 = -delta phi(x), a1 = -delta phi'. The finite-part moments of
/// xi^-2 and xi^-1 over [-m, m] are -1/m - 1/m' and log(m/m').
pub fn finite_part_inner(
    seg: &Segment,
    shape: LinearShape,
    s_x: f64,
    delta: f64,
    cfg: &QuadratureConfig,
    order: usize,
) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let st = finite_part_setup(seg, shape, s_x, delta);
    let a2 = -delta * st.phi_x;
    let a1 = -delta * st.slope;
    let mut rem = |xi: f64| {
        let s = (delta * delta - xi * xi).max(0.0).sqrt();
        (st.phi_x + st.slope * xi) / (delta + s)
    };
    let smooth = integrate_remainder(&st, cfg, order, &mut rem);
    smooth + a2 * (-1.0 / st.m_plus - 1.0 / st.m_minus) + a1 * (st.m_plus / st.m_minus).ln()
}

/// Hadamard finite part of the assembly-kernel core over the segment
/// containing the field point, against a linear density. On a straight
/// segment the core reduces to
///
///   0.5 [ log(delta + sqrt(delta^2 - xi^2)) - log|xi| ]
///   - 0.5 delta sqrt(delta^2 - xi^2) / xi^2,
///
/// handled by subtracting a2 / xi^2 + a1 / xi (closed-form moments as in
/// `finite_part_inner`) and the exact log moments of (phi_x + phi' xi)
/// log|xi|; what remains is smooth up to cone caps. The caller applies
/// the 1/(2 pi dt dt) normalization.
pub fn finite_part_inner_assembly(
    seg: &Segment,
    shape: LinearShape,
    s_x: f64,
    delta: f64,
    cfg: &QuadratureConfig,
    order: usize,
) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let st = finite_part_setup(seg, shape, s_x, delta);
    let a2 = -0.5 * delta * delta * st.phi_x;
    let a1 = -0.5 * delta * delta * st.slope;
    let mut rem = |xi: f64| {
        let s = (delta * delta - xi * xi).max(0.0).sqrt();
        let w = 1.0 / (delta + s);
        let phi = st.phi_x + st.slope * xi;
        (0.5 * delta * w + 0.5 * (delta + s).ln()) * phi
    };
    let smooth = integrate_remainder(&st, cfg, order, &mut rem);
    let (mp, mm) = (st.m_plus, st.m_minus);
    let log0 = mp * (mp.ln() - 1.0) + mm * (mm.ln() - 1.0);
    let log1 = (mp * mp * (2.0 * mp.ln() - 1.0) - mm * mm * (2.0 * mm.ln() - 1.0)) / 4.0;
    smooth + a2 * (-1.0 / mp - 1.0 / mm) + a1 * (mp / mm).ln()
        - 0.5 * (st.phi_x * log0 + st.slope * log1)
}

/// Integral of f over [a, b] with dyadic panels graded toward a,
/// resolving integrable endpoint singularities at a. Deterministic; 70
/// levels leave a truncated tail below 1e-12 for algebraic
/// singularities milder than 1/t.
pub fn integrate_graded_left<F>(a: f64, b: f64, order: usize, f: F) -> f64
where
    F: Fn(f64) -> f64,
{
    let rule = gauss_rule(order);
    let len = b - a;
    let mut total = 0.0;
    let mut hi = b;
    for _ in 0..70 {
        let lo = a + (hi - a) * 0.5;
        let plen = hi - lo;
        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
            total += w * plen * f(lo + plen * u);
        }
        hi = lo;
        if hi - a <= len * 1e-21 {
            break;
        }
    }
    total
}

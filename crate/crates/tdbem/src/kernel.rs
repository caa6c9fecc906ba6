//! Closed-form kernels of the hypersingular space-time boundary operator.
//!
//! `assembly_kernel` is the kernel integrated twice in time against the
//! piecewise-linear causal ramps; matrix entries combine four of its
//! evaluations with alternating signs at lags shifted by one step.
//! `residual_kernel` is the kernel integrated once in time; it appears
//! when the discrete operator is evaluated pointwise for the residual.
//! The two are linked: the derivative of the assembly kernel core with
//! respect to the lag equals the residual kernel. Light-cone gating
//! (zero for lag <= distance) lives in the residual kernel itself and in
//! the callers of the assembly kernel.

use crate::mesh::Point;

/// Geometric data of one source-field point pair.
#[derive(Clone, Copy, Debug)]
pub struct KernelPoint {
    pub x: Point,
    pub y: Point,
    pub nx: Point,
    pub ny: Point,
    pub r: f64,
}

impl KernelPoint {
    pub fn new(x: Point, y: Point, nx: Point, ny: Point) -> Self {
        Self {
            x,
            y,
            nx,
            ny,
            r: (x - y).norm(),
        }
    }
}

/// Time lag and the two ramp normalization steps of a matrix entry.
#[derive(Clone, Copy, Debug)]
pub struct TimeLag {
    /// Lag between two knots, t_test - t_trial.
    pub delta: f64,
    /// Step of the test interval.
    pub dt_test: f64,
    /// Step of the trial interval.
    pub dt_trial: f64,
}

/// Product of the two normal projections of x - y.
#[inline]
pub fn normal_projections(p: &KernelPoint) -> f64 {
    let d = p.x - p.y;
    d.dot(&p.nx) * d.dot(&p.ny)
}

/// Core of the doubly time-integrated kernel, without the 1/(2 pi
/// dt_test dt_trial) normalization. Requires delta > r > 0; vanishes
/// continuously as delta -> r.
#[inline]
pub fn assembly_kernel_core(p: &KernelPoint, delta: f64) -> f64 {
    debug_assert!(p.r > 0.0, "coincident points need the finite-part path");
    debug_assert!(delta > p.r, "caller must gate on the light cone");
    let r2 = p.r * p.r;
    let s = (delta * delta - r2).sqrt();
    let pn = normal_projections(p);
    let a = delta * s / r2;
    pn / r2 * a + 0.5 * p.nx.dot(&p.ny) * ((delta + s).ln() - p.r.ln() - a)
}

/// Doubly time-integrated kernel entering the Galerkin matrix.
#[inline]
pub fn assembly_kernel(p: &KernelPoint, lag: &TimeLag) -> f64 {
    assembly_kernel_core(p, lag.delta) / (2.0 * std::f64::consts::PI * lag.dt_test * lag.dt_trial)
}

/// Four entry lags of one matrix block: test knot (gamma) minus trial
/// knot (delta), ordered [L_10, L_00, L_11, L_01]. The entry combines the
/// core at these lags as (L_10 - L_00) - (L_11 - L_01).
pub type EntryLags = [f64; 4];

/// Alternating signs matching `EntryLags` order.
pub const ENTRY_SIGNS: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

/// Stable second difference of the assembly core over the four lags of
/// one matrix entry, for points lit at every lag (r < min lag). Splitting
/// the core into an exactly differenced quadratic L^2/r^2 part plus
/// bounded pieces avoids the (lag / dt)^2 error amplification a naive
/// difference of large core values would suffer:
///
///   core = P/r^2 (L^2/r^2 - g) + (nx.ny)/2 (B - L^2/r^2 + g),
///   g = L / (L + sqrt(L^2 - r^2)),  B = ln(L + sqrt(L^2 - r^2)) - ln r,
///
/// and the second difference of L^2 is 2 dt_test dt_trial exactly.
#[inline]
pub fn assembly_core_second_difference(
    p: &KernelPoint,
    lags: &EntryLags,
    dt_test: f64,
    dt_trial: f64,
) -> f64 {
    debug_assert!(p.r > 0.0, "coincident points need the finite-part path");
    debug_assert!(lags[3] > p.r, "all four lags must clear the cone");
    let r2 = p.r * p.r;
    let mut d2g = 0.0;
    let mut d2b = 0.0;
    for (l, sg) in lags.iter().zip(ENTRY_SIGNS) {
        let s = (l * l - r2).sqrt();
        d2g += sg * l / (l + s);
        d2b += sg * (l + s).ln();
    }
    let quad = 2.0 * dt_test * dt_trial / r2;
    let pn = normal_projections(p);
    pn / r2 * (quad - d2g) + 0.5 * p.nx.dot(&p.ny) * (d2b - quad + d2g)
}

/// Singly time-integrated kernel for residual evaluation. Gates itself:
/// returns 0 outside the light cone (delta <= r).
#[inline]
pub fn residual_kernel(p: &KernelPoint, delta: f64) -> f64 {
    if delta <= p.r {
        return 0.0;
    }
    debug_assert!(p.r > 0.0, "coincident points need the finite-part path");
    let r2 = p.r * p.r;
    let s = (delta * delta - r2).sqrt();
    let pn = normal_projections(p);
    ((pn / r2 - p.nx.dot(&p.ny)) * s + delta * delta * pn / (r2 * s)) / r2
}

/// One piece of a segment partitioned by a light-cone circle. Local
/// coordinates s0 < s1 in [0, 1]; `inside` tells whether the piece lies
/// inside the circle; `cone_s0`/`cone_s1` mark piece endpoints that sit
/// exactly on the circle (where integrands have square-root behavior).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConePiece {
    pub s0: f64,
    pub s1: f64,
    pub inside: bool,
    pub cone_s0: bool,
    pub cone_s1: bool,
}

/// Local coordinates in (0, 1) where the segment a-b crosses the circle
/// of the given center and radius. Roots of the quadratic distance
/// equation are computed in a numerically stable form and polished by
/// one Newton step so that |dist(y(s*)) - radius| <= 1e-12 * radius.
pub fn circle_crossings(a: Point, b: Point, center: Point, radius: f64) -> Vec<f64> {
    let mut roots: Vec<f64> = Vec::new();
    if radius <= 0.0 {
        return roots;
    }
    let d = b - a;
    let w = a - center;
    let qa = d.dot(&d);
    let qb = 2.0 * d.dot(&w);
    let qc = w.dot(&w) - radius * radius;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc > 0.0 {
        let sq = disc.sqrt();
        let q = -0.5 * (qb + qb.signum() * sq);
        let (mut s1, mut s2) = (q / qa, if q != 0.0 { qc / q } else { q / qa });
        // One Newton polish on g(s) = |y(s) - c|^2 - radius^2.
        for s in [&mut s1, &mut s2] {
            let g = qa * *s * *s + qb * *s + qc;
            let gp = 2.0 * qa * *s + qb;
            if gp != 0.0 {
                *s -= g / gp;
            }
        }
        if s1 > s2 {
            std::mem::swap(&mut s1, &mut s2);
        }
        for s in [s1, s2] {
            if s > 0.0 && s < 1.0 {
                roots.push(s);
            }
        }
        roots.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    }
    roots
}

/// Partitions the segment a-b at its intersections with the circle of
/// the given center and radius.
pub fn lightcone_split(a: Point, b: Point, center: Point, radius: f64) -> Vec<ConePiece> {
    let whole = |inside| {
        vec![ConePiece {
            s0: 0.0,
            s1: 1.0,
            inside,
            cone_s0: false,
            cone_s1: false,
        }]
    };
    if radius <= 0.0 {
        return whole(false);
    }
    let d = b - a;
    let roots = circle_crossings(a, b, center, radius);
    if roots.is_empty() {
        let mid = a + d * 0.5;
        return whole((mid - center).norm() < radius);
    }
    let mut cuts = vec![0.0];
    cuts.extend(&roots);
    cuts.push(1.0);
    let mut pieces = Vec::with_capacity(cuts.len() - 1);
    for k in 0..cuts.len() - 1 {
        let (s0, s1) = (cuts[k], cuts[k + 1]);
        let mid = a + d * (0.5 * (s0 + s1));
        pieces.push(ConePiece {
            s0,
            s1,
            inside: (mid - center).norm() < radius,
            cone_s0: k > 0,
            cone_s1: k < cuts.len() - 2,
        });
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p0() -> KernelPoint {
        // x - y = (0.3, 0.4), r = 0.5, both normals (0, 1).
        KernelPoint::new(
            Point::new(0.3, 0.4),
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(0.0, 1.0),
        )
    }

    #[test]
    fn assembly_kernel_matches_hand_expansion() {
        let p = p0();
        let lag = TimeLag {
            delta: 1.3,
            dt_test: 0.1,
            dt_trial: 0.1,
        };
        // sqrt(1.3^2 - 0.5^2) = 1.2; projections 0.4 * 0.4.
        let a = 1.3 * 1.2 / 0.25;
        let expect = ((0.16 / 0.25) * a + 0.5 * ((2.5f64).ln() - (0.5f64).ln() - a))
            / (2.0 * std::f64::consts::PI * 0.01);
        assert_relative_eq!(assembly_kernel(&p, &lag), expect, max_relative = 1e-14);
    }

    #[test]
    fn residual_kernel_matches_hand_expansion() {
        let p = p0();
        let delta = 1.3;
        let s = 1.2;
        let expect = ((0.16 / 0.25 - 1.0) * s + delta * delta * 0.16 / (0.25 * s)) / 0.25;
        assert_relative_eq!(residual_kernel(&p, delta), expect, max_relative = 1e-14);
    }

    #[test]
    fn second_difference_matches_naive_at_moderate_lags() {
        let p = p0();
        let (dtt, dts) = (0.1, 0.05);
        let lags = [1.3, 1.2, 1.25, 1.15];
        let naive: f64 = lags
            .iter()
            .zip(ENTRY_SIGNS)
            .map(|(l, sg)| sg * assembly_kernel_core(&p, *l))
            .sum();
        let stable = assembly_core_second_difference(&p, &lags, dtt, dts);
        assert_relative_eq!(stable, naive, max_relative = 1e-10);
    }

    #[test]
    fn second_difference_is_stable_at_large_lags() {
        // Naive differencing loses ~ (lag/dt)^2 digits; the split form
        // must approach the exact large-lag limit
        //   2 dt dt' (P/r^2 - (nx.ny)/2) / r^2.
        let p = p0();
        let (dtt, dts) = (1e-3, 1e-3);
        let l = 1e6;
        let lags = [l + dtt, l, l - dts + dtt, l - dts];
        let got = assembly_core_second_difference(&p, &lags, dtt, dts);
        let pn = normal_projections(&p);
        let r2 = p.r * p.r;
        let limit = 2.0 * dtt * dts * (pn / r2 - 0.5 * p.nx.dot(&p.ny)) / r2;
        assert_relative_eq!(got, limit, max_relative = 1e-5);
    }

    #[test]
    fn residual_kernel_gates_on_the_cone() {
        let p = p0();
        assert_eq!(residual_kernel(&p, 0.5), 0.0);
        assert_eq!(residual_kernel(&p, 0.2), 0.0);
        assert_eq!(residual_kernel(&p, -1.0), 0.0);
    }

    #[test]
    fn residual_kernel_finite_just_inside_the_cone() {
        let p = p0();
        let v = residual_kernel(&p, 0.5 * (1.0 + 1e-12));
        assert!(v.is_finite());
    }

    #[test]
    fn kernels_symmetric_under_point_swap() {
        let p = KernelPoint::new(
            Point::new(0.12, -0.7),
            Point::new(-0.33, 0.25),
            Point::new(0.6, 0.8),
            Point::new(-0.8, 0.6),
        );
        let q = KernelPoint::new(p.y, p.x, p.ny, p.nx);
        assert_relative_eq!(
            residual_kernel(&p, 1.7),
            residual_kernel(&q, 1.7),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            assembly_kernel_core(&p, 1.7),
            assembly_kernel_core(&q, 1.7),
            max_relative = 1e-14
        );
    }

    #[test]
    fn lag_derivative_of_assembly_core_is_residual_kernel() {
        // d/d(delta) of the twice-integrated core recovers the
        // once-integrated kernel; checked by central differences.
        let p = KernelPoint::new(
            Point::new(0.4, 0.1),
            Point::new(-0.2, -0.25),
            Point::new(0.28735629939725145, 0.9578543313241715),
            Point::new(-0.6, 0.8),
        );
        for delta in [0.9, 1.4, 2.3] {
            let h = 1e-6;
            let fd = (assembly_kernel_core(&p, delta + h) - assembly_kernel_core(&p, delta - h))
                / (2.0 * h);
            assert_relative_eq!(fd, residual_kernel(&p, delta), max_relative = 1e-7);
        }
    }

    #[test]
    fn lightcone_split_matches_hand_computed_crossing() {
        let pieces = lightcone_split(
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.2, 0.3),
            0.5,
        );
        assert_eq!(pieces.len(), 2);
        assert_relative_eq!(pieces[0].s1, 0.6, epsilon = 1e-13);
        assert!(pieces[0].inside);
        assert!(!pieces[1].inside);
        assert!(pieces[0].cone_s1);
        assert!(!pieces[0].cone_s0);
    }

    #[test]
    fn lightcone_split_fully_inside_or_outside() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(1.0, 0.0);
        let inside = lightcone_split(a, b, Point::new(0.5, 0.0), 2.0);
        assert_eq!(inside.len(), 1);
        assert!(inside[0].inside);
        let outside = lightcone_split(a, b, Point::new(5.0, 0.0), 0.5);
        assert_eq!(outside.len(), 1);
        assert!(!outside[0].inside);
        let gated = lightcone_split(a, b, Point::new(0.5, 0.0), -1.0);
        assert!(!gated[0].inside);
    }

    #[test]
    fn lightcone_split_two_interior_crossings() {
        // Circle centered above the segment cutting twice.
        let pieces = lightcone_split(
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.5, 0.3),
            0.4,
        );
        assert_eq!(pieces.len(), 3);
        assert!(!pieces[0].inside);
        assert!(pieces[1].inside);
        assert!(!pieces[2].inside);
        let s = pieces[1].s0;
        let d = ((s - 0.5f64).powi(2) + 0.09).sqrt();
        assert_relative_eq!(d, 0.4, epsilon = 1e-13);
    }
}

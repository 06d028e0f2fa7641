//! Quadrature on triangles and triangle pairs.
//!
//! Reference triangle for the regular rules: `{(s, t): s, t >= 0, s + t <= 1}`
//! with area 1/2. Singular rules use the Sauter-Schwab reference triangle
//! `{(x1, x2): 0 <= x2 <= x1 <= 1}`, mapped to the physical triangle by
//! `v0 + x1 (v1 - v0) + x2 (v2 - v1)`, and split the four-dimensional domain
//! into sub-simplices on which a Duffy-type change of variables cancels the
//! `1/|x - y|` singularity.

use std::sync::OnceLock;

use crate::error::{BemError, Result};
use crate::mesh::Point;

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Symmetric rule on the reference triangle, barycentric points `(s, t)`.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical points and weights (weights scaled to the triangle's area).
    pub fn map(&self, corners: &[Point; 3]) -> impl Iterator<Item = (Point, f64)> + '_ {
        let [a, b, c] = *corners;
        let jac = (b - a).cross(&(c - a)).norm();
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(p, w)| (a + (b - a) * p[0] + (c - a) * p[1], w * jac))
    }
}

fn from_orbits(order: usize, orbits: &[(f64, f64, f64, f64)]) -> TriangleRule {
    // (a, b, c, w) with w normalised to total 1; expands permutations of barycentric (a, b, c).
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for &(a, b, c, w) in orbits {
        let mut perms: Vec<[f64; 3]> = vec![
            [a, b, c],
            [b, c, a],
            [c, a, b],
            [a, c, b],
            [c, b, a],
            [b, a, c],
        ];
        perms.sort_by(|x, y| x.partial_cmp(y).unwrap());
        perms.dedup_by(|x, y| x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-15));
        for p in perms {
            points.push([p[1], p[2]]);
            weights.push(0.5 * w);
        }
    }
    TriangleRule { points, weights, order }
}

/// Collapsed (Duffy) Gauss product rule; `n` points per direction are exact to degree 2n - 2.
fn collapsed_gauss(order: usize) -> TriangleRule {
    let n = (order + 3) / 2;
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let s = x[i];
            let t = x[j] * (1.0 - s);
            points.push([s, t]);
            weights.push(w[i] * w[j] * (1.0 - s));
        }
    }
    TriangleRule { points, weights, order }
}

fn build_rule(order: usize) -> TriangleRule {
    match order {
        1 => from_orbits(1, &[(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0)]),
        2 => from_orbits(2, &[(2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0)]),
        4 => from_orbits(
            4,
            &[
                (0.108103018168070, 0.445948490915965, 0.445948490915965, 0.223381589678011),
                (0.816847572980459, 0.091576213509771, 0.091576213509771, 0.109951743655322),
            ],
        ),
        6 => from_orbits(
            6,
            &[
                (0.501426509658179, 0.249286745170910, 0.249286745170910, 0.116786275726379),
                (0.873821971016996, 0.063089014491502, 0.063089014491502, 0.050844906370207),
                (0.053145049844817, 0.310352451033784, 0.636502499121399, 0.082851075618374),
            ],
        ),
        _ => collapsed_gauss(order),
    }
}

/// Rule integrating polynomials of total degree `<= order` exactly.
/// Supported orders: 1..=10.
pub fn gauss_rule(order: usize) -> Result<&'static TriangleRule> {
    static RULES: OnceLock<Vec<TriangleRule>> = OnceLock::new();
    if !(1..=10).contains(&order) {
        return Err(BemError::UnsupportedOrder(order));
    }
    let rules = RULES.get_or_init(|| (1..=10).map(build_rule).collect());
    Ok(&rules[order - 1])
}

/// How two triangles touch, decided from shared vertex indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Adjacency {
    Coincident,
    /// Shared edge; local indices of the shared vertices in each triangle.
    Edge { test: [usize; 2], trial: [usize; 2] },
    Vertex { test: usize, trial: usize },
    Disjoint,
}

pub fn classify(test: &[usize; 3], trial: &[usize; 3]) -> Adjacency {
    let mut shared = [(0usize, 0usize); 3];
    let mut n = 0;
    for (i, a) in test.iter().enumerate() {
        for (j, b) in trial.iter().enumerate() {
            if a == b {
                shared[n] = (i, j);
                n += 1;
            }
        }
    }
    match n {
        3 => Adjacency::Coincident,
        2 => Adjacency::Edge {
            test: [shared[0].0, shared[1].0],
            trial: [shared[0].1, shared[1].1],
        },
        1 => Adjacency::Vertex {
            test: shared[0].0,
            trial: shared[0].1,
        },
        _ => Adjacency::Disjoint,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularCase {
    Coincident,
    EdgeAdjacent,
    VertexAdjacent,
}

/// Four-dimensional point set on the Sauter-Schwab reference pair; weights
/// include the Duffy Jacobians and sum to 1/4 (the squared reference area).
#[derive(Debug, Clone)]
pub struct SingularRule {
    pub case: SingularCase,
    pub order: usize,
    pub test_points: Vec<[f64; 2]>,
    pub trial_points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

type Region = fn(f64, f64, f64, f64) -> ([f64; 2], [f64; 2], f64);

const COINCIDENT: [Region; 6] = [
    |x, a, b, c| ([x, x * (1.0 - a + a * b)], [x * (1.0 - a * b * c), x * (1.0 - a)], x * x * x * a * a * b),
    |x, a, b, c| ([x * (1.0 - a * b * c), x * (1.0 - a)], [x, x * (1.0 - a + a * b)], x * x * x * a * a * b),
    |x, a, b, c| ([x, x * a * (1.0 - b + b * c)], [x * (1.0 - a * b), x * a * (1.0 - b)], x * x * x * a * a * b),
    |x, a, b, c| ([x * (1.0 - a * b), x * a * (1.0 - b)], [x, x * a * (1.0 - b + b * c)], x * x * x * a * a * b),
    |x, a, b, c| ([x * (1.0 - a * b * c), x * a * (1.0 - b * c)], [x, x * a * (1.0 - b)], x * x * x * a * a * b),
    |x, a, b, c| ([x, x * a * (1.0 - b)], [x * (1.0 - a * b * c), x * a * (1.0 - b * c)], x * x * x * a * a * b),
];

const EDGE: [Region; 5] = [
    |x, a, b, c| ([x, x * a * c], [x * (1.0 - a * b), x * a * (1.0 - b)], x * x * x * a * a),
    |x, a, b, c| ([x, x * a], [x * (1.0 - a * b * c), x * a * b * (1.0 - c)], x * x * x * a * a * b),
    |x, a, b, c| ([x * (1.0 - a * b), x * a * (1.0 - b)], [x, x * a * b * c], x * x * x * a * a * b),
    |x, a, b, c| ([x * (1.0 - a * b * c), x * a * b * (1.0 - c)], [x, x * a], x * x * x * a * a * b),
    |x, a, b, c| ([x * (1.0 - a * b * c), x * a * (1.0 - b * c)], [x, x * a * b], x * x * x * a * a * b),
];

const VERTEX: [Region; 2] = [
    |x, a, b, c| ([x, x * a], [x * b, x * b * c], x * x * x * b),
    |x, a, b, c| ([x * b, x * b * c], [x, x * a], x * x * x * b),
];

impl SingularRule {
    /// `order` Gauss-Legendre points in each of the four dimensions.
    pub fn new(case: SingularCase, order: usize) -> Result<Self> {
        if order == 0 || order > 20 {
            return Err(BemError::UnsupportedOrder(order));
        }
        let regions: &[Region] = match case {
            SingularCase::Coincident => &COINCIDENT,
            SingularCase::EdgeAdjacent => &EDGE,
            SingularCase::VertexAdjacent => &VERTEX,
        };
        let (g, w) = gauss_legendre(order);
        let cap = regions.len() * order.pow(4);
        let mut rule = SingularRule {
            case,
            order,
            test_points: Vec::with_capacity(cap),
            trial_points: Vec::with_capacity(cap),
            weights: Vec::with_capacity(cap),
        };
        for region in regions {
            for i in 0..order {
                for j in 0..order {
                    for k in 0..order {
                        for l in 0..order {
                            let (x, y, jac) = region(g[i], g[j], g[k], g[l]);
                            rule.test_points.push(x);
                            rule.trial_points.push(y);
                            rule.weights.push(w[i] * w[j] * w[k] * w[l] * jac);
                        }
                    }
                }
            }
        }
        Ok(rule)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Cached singular rules for the default order.
pub fn singular_rule(case: SingularCase, order: usize) -> &'static SingularRule {
    static CACHE: OnceLock<std::sync::Mutex<Vec<&'static SingularRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| std::sync::Mutex::new(Vec::new()));
    let mut guard = cache.lock().expect("singular rule cache poisoned");
    if let Some(r) = guard.iter().find(|r| r.case == case && r.order == order) {
        return r;
    }
    let rule: &'static SingularRule = Box::leak(Box::new(
        SingularRule::new(case, order).expect("singular rule order validated by caller"),
    ));
    guard.push(rule);
    rule
}

/// Maps a Sauter-Schwab reference point onto the physical triangle whose
/// corners are given in reference order.
#[inline]
pub fn ss_map(corners: &[Point; 3], p: &[f64; 2]) -> Point {
    corners[0] + (corners[1] - corners[0]) * p[0] + (corners[2] - corners[1]) * p[1]
}

/// Corner orderings that put the shared entity where the singular rule expects it:
/// the shared edge on `v0 -> v1` (in the same direction for both triangles) or
/// the shared vertex at `v0`.
pub fn singular_orderings(adj: Adjacency) -> Option<(SingularCase, [usize; 3], [usize; 3])> {
    match adj {
        Adjacency::Coincident => Some((SingularCase::Coincident, [0, 1, 2], [0, 1, 2])),
        Adjacency::Edge { test, trial } => {
            let other = |a: usize, b: usize| 3 - a - b;
            Some((
                SingularCase::EdgeAdjacent,
                [test[0], test[1], other(test[0], test[1])],
                [trial[0], trial[1], other(trial[0], trial[1])],
            ))
        }
        Adjacency::Vertex { test, trial } => Some((
            SingularCase::VertexAdjacent,
            [test, (test + 1) % 3, (test + 2) % 3],
            [trial, (trial + 1) % 3, (trial + 2) % 3],
        )),
        Adjacency::Disjoint => None,
    }
}

/// Quadrature settings for Galerkin assembly.
///
/// Separated pairs get a rule order from their distance relative to the
/// larger element diameter: `near_order` below `near_ratio`, `far_order`
/// beyond `far_ratio` as long as the wave phase across an element
/// (`|k| * diameter`) stays below `far_phase`, `regular_order` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Gauss points per dimension of the singular rules.
    pub singular_order: usize,
    pub near_order: usize,
    pub near_ratio: f64,
    pub regular_order: usize,
    pub far_order: usize,
    pub far_ratio: f64,
    pub far_phase: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            singular_order: 4,
            near_order: 6,
            near_ratio: 1.5,
            regular_order: 4,
            far_order: 2,
            far_ratio: 4.0,
            far_phase: 1.0,
        }
    }
}

impl QuadratureOptions {
    /// Uniform order for every separated pair.
    pub fn uniform(singular_order: usize, order: usize) -> Self {
        Self {
            singular_order,
            near_order: order,
            regular_order: order,
            far_order: order,
            ..Self::default()
        }
    }

    pub fn regular_order_for(&self, centroid_distance: f64, diameter: f64, k_abs: f64) -> usize {
        let ratio = centroid_distance / diameter;
        if ratio < self.near_ratio {
            self.near_order
        } else if ratio > self.far_ratio && k_abs * diameter <= self.far_phase {
            self.far_order
        } else {
            self.regular_order
        }
    }
}

/// Integrates `kernel(x, y)` over a pair of physical triangles. Adjacency
/// is decided from the vertex index triples, not from distances.
pub fn integrate_pair<K, T>(
    test: (&[Point; 3], &[usize; 3]),
    trial: (&[Point; 3], &[usize; 3]),
    kernel: K,
    options: &QuadratureOptions,
) -> T
where
    K: Fn(&Point, &Point) -> T,
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
{
    let (tc, ti) = test;
    let (sc, si) = trial;
    match singular_orderings(classify(ti, si)) {
        Some((case, ot, os)) => {
            let rule = singular_rule(case, options.singular_order);
            let a = [tc[ot[0]], tc[ot[1]], tc[ot[2]]];
            let b = [sc[os[0]], sc[os[1]], sc[os[2]]];
            let jac = (a[1] - a[0]).cross(&(a[2] - a[0])).norm() * (b[1] - b[0]).cross(&(b[2] - b[0])).norm();
            let mut acc = T::default();
            for q in 0..rule.len() {
                let x = ss_map(&a, &rule.test_points[q]);
                let y = ss_map(&b, &rule.trial_points[q]);
                acc = acc + kernel(&x, &y) * (rule.weights[q] * jac);
            }
            acc
        }
        None => {
            let ctr = |c: &[Point; 3]| (c[0] + c[1] + c[2]) / 3.0;
            let diam = |c: &[Point; 3]| {
                (c[0] - c[1]).norm().max((c[1] - c[2]).norm()).max((c[2] - c[0]).norm())
            };
            let order = options.regular_order_for((ctr(tc) - ctr(sc)).norm(), diam(tc).max(diam(sc)), 0.0);
            let rule = gauss_rule(order).expect("configured orders are supported");
            let ys: Vec<(Point, f64)> = rule.map(sc).collect();
            let mut acc = T::default();
            for (x, wx) in rule.map(tc) {
                for (y, wy) in &ys {
                    acc = acc + kernel(&x, y) * (wx * wy);
                }
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Exact integral of s^a t^b over the reference triangle.
    fn monomial(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert!((v - 0.1).abs() < 1e-14);
    }

    #[test]
    fn centroid_rule() {
        let r = gauss_rule(1).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r.points[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rules_exact_to_their_order() {
        for order in 1..=10 {
            let r = gauss_rule(order).unwrap();
            let total: f64 = r.weights.iter().sum();
            assert!((total - 0.5).abs() < 1e-14, "order {order}");
            for p in &r.points {
                assert!(p[0] >= -1e-15 && p[1] >= -1e-15 && p[0] + p[1] <= 1.0 + 1e-15);
            }
            for a in 0..=order as u32 {
                for b in 0..=(order as u32 - a) {
                    let q: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    assert!((q - monomial(a, b)).abs() < 1e-13, "order {order} monomial ({a},{b})");
                }
            }
        }
        assert!(matches!(gauss_rule(0), Err(BemError::UnsupportedOrder(0))));
        assert!(matches!(gauss_rule(11), Err(BemError::UnsupportedOrder(11))));
    }

    #[test]
    fn x2y_moment() {
        for order in 3..=10 {
            let r = gauss_rule(order).unwrap();
            let q: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0] * p[0] * p[1]).sum();
            assert!((q - 1.0 / 60.0).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_rules_cover_the_pair_domain() {
        // Polynomials over K x K: the sub-simplex maps must tile the domain exactly.
        let mono = |a: i32, b: i32| 1.0 / (((b + 1) * (a + b + 2)) as f64);
        for case in [SingularCase::Coincident, SingularCase::EdgeAdjacent, SingularCase::VertexAdjacent] {
            let rule = SingularRule::new(case, 5).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for (a, b, c, d) in [(0, 0, 0, 0), (1, 0, 0, 2), (0, 1, 3, 0), (2, 1, 0, 1)] {
                let v: f64 = (0..rule.len())
                    .map(|q| {
                        let (x, y) = (rule.test_points[q], rule.trial_points[q]);
                        rule.weights[q] * x[0].powi(a) * x[1].powi(b) * y[0].powi(c) * y[1].powi(d)
                    })
                    .sum();
                let exact = mono(a, b) * mono(c, d);
                assert!((v - exact).abs() < 1e-12 * exact.max(1.0), "{case:?} {a}{b}{c}{d}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn classification_is_index_based() {
        assert_eq!(classify(&[0, 1, 2], &[2, 0, 1]), Adjacency::Coincident);
        assert!(matches!(classify(&[0, 1, 2], &[1, 0, 5]), Adjacency::Edge { .. }));
        assert_eq!(classify(&[0, 1, 2], &[7, 8, 2]), Adjacency::Vertex { test: 2, trial: 2 });
        assert_eq!(classify(&[0, 1, 2], &[3, 4, 5]), Adjacency::Disjoint);
    }
    fn pt(x: f64, y: f64, z: f64) -> Point {
        Point::new(x, y, z)
    }

    #[test]
    fn singular_static_potential_matches_oracle() {
        // Reference values of the double integral of 1/|x - y|: closed form for the
        // coincident pair, analytic inner and adaptive outer integration otherwise.
        let a = [pt(0.0, 0.0, 0.0), pt(1.0, 0.0, 0.0), pt(0.3, 0.8, 0.0)];
        let b = [pt(1.0, 0.0, 0.0), pt(0.0, 0.0, 0.0), pt(0.6, -0.7, 0.4)];
        let c = [pt(0.0, 0.0, 0.0), pt(-0.9, 0.2, 0.1), pt(-0.4, -0.8, 0.3)];
        let ia = [0, 1, 2];
        let cases = [
            (a, [0, 1, 2], 0.728_664_642_912_004_8),
            (b, [1, 0, 3], 0.322_603_296),
            (c, [0, 4, 5], 0.177_610_468_13),
        ];
        let opts = QuadratureOptions { singular_order: 6, ..Default::default() };
        for (tri, idx, exact) in cases {
            let v: f64 = integrate_pair((&a, &ia), (&tri, &idx), |x, y| 1.0 / (x - y).norm(), &opts);
            assert!((v - exact).abs() < 2e-6 * exact, "{idx:?}: {v} vs {exact}");
        }
    }

    #[test]
    fn singular_rules_converge_with_order() {
        let a = [pt(0.0, 0.0, 0.0), pt(1.0, 0.0, 0.0), pt(0.3, 0.8, 0.0)];
        let exact = 0.728_664_642_912_004_8;
        let err = |n| {
            let o = QuadratureOptions { singular_order: n, ..Default::default() };
            let v: f64 = integrate_pair((&a, &[0, 1, 2]), (&a, &[0, 1, 2]), |x, y| 1.0 / (x - y).norm(), &o);
            (v - exact).abs()
        };
        assert!(err(4) < 1e-4 * exact);
        assert!(err(8) < err(4));
    }

    #[test]
    fn pair_integral_symmetric_under_role_swap() {
        let a = [pt(0.0, 0.0, 0.0), pt(1.0, 0.0, 0.0), pt(0.3, 0.8, 0.0)];
        let b = [pt(1.0, 0.0, 0.0), pt(0.0, 0.0, 0.0), pt(0.6, -0.7, 0.4)];
        let k = |x: &Point, y: &Point| (-(x - y).norm()).exp() / (x - y).norm();
        let o = QuadratureOptions::default();
        let ab: f64 = integrate_pair((&a, &[0, 1, 2]), (&b, &[1, 0, 3]), k, &o);
        let ba: f64 = integrate_pair((&b, &[1, 0, 3]), (&a, &[0, 1, 2]), k, &o);
        assert!((ab - ba).abs() < 1e-6 * ab.abs(), "{ab} {ba}");
    }
}

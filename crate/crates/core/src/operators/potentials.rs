//! Off-surface evaluation of the electric and magnetic potentials and their
//! far-field patterns.
//!
//! A discrete density is affine on every support triangle, so it is first
//! collapsed to one `B r - Q` per triangle. Far-field patterns strip the
//! factor `exp(ik|x|)/|x|`:
//! `E v ~ exp(ik|x|)/|x| * (ik/4pi) (V - xh (xh . V))`,
//! `H v ~ exp(ik|x|)/|x| * (ik/4pi) xh x V`, with `V = int v(y) exp(-ik xh . y)`.

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use super::{green_and_radial, CVec3};
use crate::error::{BemError, Result};
use crate::mesh::{Point, TriangleMesh};
use crate::quadrature::gauss_rule;
use crate::spaces::FunctionSpace;

/// Evaluation points closer than this to the surface are rejected.
pub const MIN_FIELD_DISTANCE: f64 = 1e-8;

pub type CVector3 = Vector3<Complex64>;

/// A coefficient vector over a space, ready for evaluation.
pub struct Density {
    /// Per support triangle: corners, diameter and the affine field `b r - q`.
    triangles: Vec<([Point; 3], f64, Complex64, CVec3)>,
    mesh_distance: TriangleMesh,
}

impl Density {
    pub fn new(mesh: &TriangleMesh, space: &FunctionSpace, coefficients: &[Complex64]) -> Result<Self> {
        if coefficients.len() != space.dim() || space.triangle_count() != mesh.triangle_count() {
            return Err(BemError::SpaceMismatch);
        }
        let triangles = (0..mesh.triangle_count())
            .map(|t| {
                let mut b = Complex64::default();
                let mut q = CVec3::default();
                for p in space.pieces(t) {
                    let c = coefficients[p.dof];
                    b += c * p.beta;
                    q.add_scaled(c, &p.q);
                }
                let c = mesh.corners(t);
                let diam = (c[0] - c[1]).norm().max((c[1] - c[2]).norm()).max((c[2] - c[0]).norm());
                (c, diam, b, q)
            })
            .collect();
        Ok(Self { triangles, mesh_distance: mesh.clone() })
    }

    fn value(b: Complex64, q: &CVec3, y: &Point) -> CVec3 {
        CVec3([b * y.x - q.0[0], b * y.y - q.0[1], b * y.z - q.0[2]])
    }
}

/// Rule order for a triangle of diameter `diam` seen from distance `dist`.
fn order_for(dist: f64, diam: f64) -> usize {
    let ratio = dist / diam;
    if ratio < 1.0 {
        10
    } else if ratio < 3.0 {
        8
    } else if ratio < 8.0 {
        6
    } else {
        4
    }
}

fn to_vector(v: CVec3) -> CVector3 {
    CVector3::new(v.0[0], v.0[1], v.0[2])
}

fn evaluate<F>(density: &Density, points: &[Point], kernel: F) -> Result<Vec<CVector3>>
where
    F: Fn(&Point, &Point, f64, Complex64, &CVec3, &mut CVec3) + Sync,
{
    for p in points {
        let d = density.mesh_distance.distance_to(p);
        if d < MIN_FIELD_DISTANCE {
            return Err(BemError::PointTooClose(d));
        }
    }
    Ok(points
        .par_iter()
        .map(|x| {
            let mut acc = CVec3::default();
            for (corners, diam, b, q) in &density.triangles {
                let centroid = (corners[0] + corners[1] + corners[2]) / 3.0;
                let rule = gauss_rule(order_for((x - centroid).norm(), *diam)).expect("supported order");
                for (y, w) in rule.map(corners) {
                    kernel(x, &y, w, *b, q, &mut acc);
                }
            }
            to_vector(acc)
        })
        .collect())
}

/// `E v(x) = ik int v G - (1/ik) int div v grad_x G`.
pub fn potential_e(density: &Density, k: Complex64, points: &[Point]) -> Result<Vec<CVector3>> {
    let ik = Complex64::i() * k;
    evaluate(density, points, |x, y, w, b, q, acc| {
        let d = x - y;
        let (g, h) = green_and_radial(d.norm(), k);
        let v = Density::value(b, q, y);
        acc.add(&v.scale(ik * g), w);
        acc.add_scaled(-(2.0 * b) * h / ik * w, &d);
    })
}

/// `H v(x) = int grad_x G x v`.
pub fn potential_h(density: &Density, k: Complex64, points: &[Point]) -> Result<Vec<CVector3>> {
    evaluate(density, points, |x, y, w, b, q, acc| {
        let d = x - y;
        let (_, h) = green_and_radial(d.norm(), k);
        let v = Density::value(b, q, y);
        // (h d) x v = -(v x d) h
        acc.add(&v.cross(&d).scale(-h), w);
    })
}

fn far_transform(density: &Density, k: Complex64, direction: &Point) -> CVec3 {
    let mut v = CVec3::default();
    let rule = gauss_rule(6).expect("supported order");
    for (corners, _, b, q) in &density.triangles {
        for (y, w) in rule.map(corners) {
            let phase = (-Complex64::i() * k * direction.dot(&y)).exp() * w;
            v.add(&Density::value(*b, q, &y).scale(phase), 1.0);
        }
    }
    v
}

fn unit(d: &Point) -> Result<Point> {
    let n = d.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(BemError::InvalidParameter("far-field direction must be nonzero".into()));
    }
    Ok(d / n)
}

/// Far-field pattern of `E v` in the given directions.
pub fn far_field_e(density: &Density, k: Complex64, directions: &[Point]) -> Result<Vec<CVector3>> {
    let pre = Complex64::i() * k / (4.0 * PI);
    directions
        .par_iter()
        .map(|d| {
            let xh = unit(d)?;
            let v = far_transform(density, k, &xh);
            let radial = v.dot(&xh);
            let mut out = v;
            out.add_scaled(-radial, &xh);
            Ok(to_vector(out.scale(pre)))
        })
        .collect()
}

/// Far-field pattern of `H v`.
pub fn far_field_h(density: &Density, k: Complex64, directions: &[Point]) -> Result<Vec<CVector3>> {
    let pre = Complex64::i() * k / (4.0 * PI);
    directions
        .par_iter()
        .map(|d| {
            let xh = unit(d)?;
            let v = far_transform(density, k, &xh);
            // xh x V = -(V x xh)
            Ok(to_vector(v.cross(&xh).scale(-pre)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_icosphere;
    use crate::spaces::SurfaceSpaces;

    fn setup() -> (SurfaceSpaces, Vec<Complex64>) {
        let s = SurfaceSpaces::new(generate_icosphere(0.5, 2).unwrap()).unwrap();
        let coeffs = (0..s.dim())
            .map(|i| Complex64::new((0.37 * i as f64).sin(), (0.91 * i as f64).cos()))
            .collect();
        (s, coeffs)
    }

    #[test]
    fn zero_density_zero_field() {
        let (s, _) = setup();
        let zero = vec![Complex64::default(); s.dim()];
        let d = Density::new(&s.mesh, &s.rwg, &zero).unwrap();
        let k = Complex64::new(2.0, 0.0);
        let p = [Point::new(2.0, 0.0, 0.0)];
        assert_eq!(potential_e(&d, k, &p).unwrap()[0].norm(), 0.0);
        assert_eq!(potential_h(&d, k, &p).unwrap()[0].norm(), 0.0);
    }

    #[test]
    fn fields_decay_in_far_zone() {
        let (s, c) = setup();
        let d = Density::new(&s.mesh, &s.rwg, &c).unwrap();
        let k = Complex64::new(2.0, 0.0);
        let dir = Point::new(0.3, -0.5, 0.8).normalize();
        for f in [potential_e, potential_h] {
            let near = f(&d, k, &[dir * 20.0]).unwrap()[0].norm();
            let far = f(&d, k, &[dir * 40.0]).unwrap()[0].norm();
            assert!(far < near);
            assert!((far / near - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn matches_far_field_asymptotics() {
        let (s, c) = setup();
        let d = Density::new(&s.mesh, &s.bc, &c).ok();
        assert!(d.is_none(), "BC density needs the refined mesh");
        let d = Density::new(&s.refinement.mesh, &s.bc, &c).unwrap();
        let k = Complex64::new(2.0, 0.0);
        let dir = Point::new(0.2, 0.6, -0.4).normalize();
        let r = 4000.0;
        let phase = (Complex64::i() * k * r).exp() / r;
        type Eval = fn(&Density, Complex64, &[Point]) -> Result<Vec<CVector3>>;
        let pairs: [(Eval, Eval); 2] = [(potential_e, far_field_e), (potential_h, far_field_h)];
        let (xs, ds) = ([dir * r], [dir]);
        for (near, far) in pairs {
            let e = near(&d, k, &xs).unwrap()[0];
            let f = far(&d, k, &ds).unwrap()[0] * phase;
            assert!((e - f).norm() < 2e-3 * f.norm(), "{} vs {}", e, f);
        }
    }

    #[test]
    fn point_on_surface_rejected() {
        let (s, c) = setup();
        let d = Density::new(&s.mesh, &s.rwg, &c).unwrap();
        let p = s.mesh.vertices()[0];
        assert!(matches!(potential_e(&d, Complex64::new(1.0, 0.0), &[p]), Err(BemError::PointTooClose(_))));
    }

    #[test]
    fn matches_refined_quadrature_one_diameter_away() {
        let (s, c) = setup();
        let d = Density::new(&s.mesh, &s.rwg, &c).unwrap();
        let k = Complex64::new(2.0, 0.1);
        let x = Point::new(1.5, 0.2, -0.1);
        let e = potential_e(&d, k, &[x]).unwrap()[0];
        // Brute force: order-10 rule on every triangle.
        let rule = gauss_rule(10).unwrap();
        let ik = Complex64::i() * k;
        let mut acc = CVector3::zeros();
        for (corners, _, b, q) in &d.triangles {
            for (y, w) in rule.map(corners) {
                let dd = x - y;
                let (g, h) = green_and_radial(dd.norm(), k);
                let v = Density::value(*b, q, &y);
                for i in 0..3 {
                    acc[i] += w * (ik * g * v.0[i] - 2.0 * b * h / ik * dd[i]);
                }
            }
        }
        assert!((e - acc).norm() < 1e-8 * acc.norm());
    }
}

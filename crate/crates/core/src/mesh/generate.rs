//! Structured generators for the benchmark shapes: cubes, geodesic spheres
//! and hexagonal columns. All generators return closed meshes with outward
//! winding and every edge no longer than the requested width `h`.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::{Point, TriangleMesh};
use crate::error::{BemError, Result};

/// Merges a triangle soup into an indexed mesh by snapping coordinates to a
/// grid much finer than any edge.
fn weld(soup: &[[Point; 3]], quantum: f64) -> (Vec<Point>, Vec<[usize; 3]>) {
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(soup.len());
    for tri in soup {
        let mut ids = [0usize; 3];
        for (slot, p) in ids.iter_mut().zip(tri) {
            let key = [
                (p.x / quantum).round() as i64,
                (p.y / quantum).round() as i64,
                (p.z / quantum).round() as i64,
            ];
            *slot = *index.entry(key).or_insert_with(|| {
                vertices.push(*p);
                vertices.len() - 1
            });
        }
        triangles.push(ids);
    }
    (vertices, triangles)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(BemError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Divisions per cube edge needed so that the face diagonals are no longer than `h`.
pub fn cube_divisions_for(side: f64, h: f64) -> usize {
    ((std::f64::consts::SQRT_2 * side / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Axis-aligned cube centred at the origin, `n x n` squares per face, two
/// triangles per square.
pub fn generate_cube_with_divisions(side: f64, n: usize) -> Result<TriangleMesh> {
    positive("side", side)?;
    if n == 0 {
        return Err(BemError::InvalidParameter("cube needs at least one division".into()));
    }
    let half = 0.5 * side;
    let step = side / n as f64;
    let mut soup = Vec::with_capacity(12 * n * n);
    // (normal axis, sign); the two in-plane axes are chosen so (u, v, normal) is right-handed.
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (u_ax, v_ax) = ((axis + 1) % 3, (axis + 2) % 3);
            let point = |i: usize, j: usize| {
                let mut p = Point::zeros();
                p[axis] = sign * half;
                p[u_ax] = -half + i as f64 * step;
                p[v_ax] = -half + j as f64 * step;
                p
            };
            for i in 0..n {
                for j in 0..n {
                    let (a, b, c, d) = (point(i, j), point(i + 1, j), point(i + 1, j + 1), point(i, j + 1));
                    if sign > 0.0 {
                        soup.push([a, b, c]);
                        soup.push([a, c, d]);
                    } else {
                        soup.push([a, c, b]);
                        soup.push([a, d, c]);
                    }
                }
            }
        }
    }
    let (v, t) = weld(&soup, step * 1e-6);
    TriangleMesh::new(v, t)
}

/// Cube of the given side with maximum edge length at most `h`.
pub fn generate_cube(side: f64, h: f64) -> Result<TriangleMesh> {
    positive("side", side)?;
    positive("h", h)?;
    if h > side {
        return Err(BemError::InvalidParameter(format!(
            "mesh width h = {h} exceeds cube side {side}"
        )));
    }
    generate_cube_with_divisions(side, cube_divisions_for(side, h))
}

fn icosahedron() -> (Vec<Point>, Vec<[usize; 3]>) {
    let phi = 0.5 * (1.0 + 5f64.sqrt());
    let mut v = Vec::new();
    for &a in &[-1.0, 1.0] {
        for &b in &[-phi, phi] {
            v.push(Point::new(0.0, a, b));
            v.push(Point::new(a, b, 0.0));
            v.push(Point::new(b, 0.0, a));
        }
    }
    let mut faces = Vec::new();
    for i in 0..12 {
        for j in i + 1..12 {
            for k in j + 1..12 {
                let near = |a: usize, b: usize| ((v[a] - v[b]).norm() - 2.0).abs() < 1e-9;
                if near(i, j) && near(j, k) && near(i, k) {
                    let n = (v[j] - v[i]).cross(&(v[k] - v[i]));
                    if n.dot(&(v[i] + v[j] + v[k])) > 0.0 {
                        faces.push([i, j, k]);
                    } else {
                        faces.push([i, k, j]);
                    }
                }
            }
        }
    }
    for p in v.iter_mut() {
        *p = p.normalize();
    }
    (v, faces)
}

/// Geodesic sphere: every icosahedron face split into `frequency^2`
/// triangles, vertices projected onto the sphere. Frequency 1 is the
/// icosahedron, frequency 2 the 80-triangle single subdivision.
pub fn generate_icosphere(radius: f64, frequency: usize) -> Result<TriangleMesh> {
    positive("radius", radius)?;
    if frequency == 0 {
        return Err(BemError::InvalidParameter("frequency must be at least 1".into()));
    }
    let (v, faces) = icosahedron();
    let f = frequency;
    let mut soup = Vec::with_capacity(20 * f * f);
    for face in &faces {
        let [a, b, c] = [v[face[0]], v[face[1]], v[face[2]]];
        let point = |i: usize, j: usize| {
            let p = a + (b - a) * (i as f64 / f as f64) + (c - a) * (j as f64 / f as f64);
            p.normalize() * radius
        };
        for i in 0..f {
            for j in 0..f - i {
                soup.push([point(i, j), point(i + 1, j), point(i, j + 1)]);
                if i + j + 1 < f {
                    soup.push([point(i + 1, j), point(i + 1, j + 1), point(i, j + 1)]);
                }
            }
        }
    }
    let (vert, tri) = weld(&soup, radius * 1e-9);
    TriangleMesh::new(vert, tri)
}

/// Smallest geodesic frequency whose mesh has maximum edge at most `h` and
/// whose polyhedral surface area is within 1% of the sphere's.
///
/// The area condition matters on coarse meshes: an inscribed polyhedron
/// with edges close to `h = 2*pi/(10 k)` under-represents the sphere by
/// 1-2%, which shows up directly in scattered amplitudes.
pub fn sphere_frequency_for(radius: f64, h: f64) -> Result<usize> {
    positive("radius", radius)?;
    positive("h", h)?;
    // Start near the estimate and walk up.
    let mut f = ((1.05 * radius / h).floor() as usize).max(1);
    loop {
        let m = generate_icosphere(radius, f)?;
        let deficit = 1.0 - m.surface_area() / (4.0 * PI * radius * radius);
        if m.max_edge_length() <= h && deficit <= SPHERE_AREA_TOLERANCE {
            return Ok(f);
        }
        f += 1;
    }
}

const SPHERE_AREA_TOLERANCE: f64 = 0.01;

pub fn generate_sphere(radius: f64, h: f64) -> Result<TriangleMesh> {
    generate_icosphere(radius, sphere_frequency_for(radius, h)?)
}

/// Regular hexagonal prism with its axis along z, centred at the origin.
/// `width` is the across-flats distance of the hexagon.
pub fn generate_hex_column(width: f64, length: f64, h: f64) -> Result<TriangleMesh> {
    positive("width", width)?;
    positive("length", length)?;
    positive("h", h)?;
    let a = width / 3f64.sqrt();
    let n = ((std::f64::consts::SQRT_2 * a / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let m = ((std::f64::consts::SQRT_2 * length / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let corner = |i: usize| {
        let ang = PI / 3.0 * (i % 6) as f64;
        Point::new(a * ang.cos(), a * ang.sin(), 0.0)
    };
    let z = |s: f64| Point::new(0.0, 0.0, s);
    let mut soup = Vec::new();
    for cap in [-0.5 * length, 0.5 * length] {
        for i in 0..6 {
            let (o, p, q) = (z(cap), corner(i) + z(cap), corner(i + 1) + z(cap));
            let point = |s: usize, t: usize| o + (p - o) * (s as f64 / n as f64) + (q - o) * (t as f64 / n as f64);
            for s in 0..n {
                for t in 0..n - s {
                    let mut tris = vec![[point(s, t), point(s + 1, t), point(s, t + 1)]];
                    if s + t + 1 < n {
                        tris.push([point(s + 1, t), point(s + 1, t + 1), point(s, t + 1)]);
                    }
                    for mut tri in tris {
                        // o, p, q is counter-clockwise seen from +z.
                        if cap < 0.0 {
                            tri.swap(1, 2);
                        }
                        soup.push(tri);
                    }
                }
            }
        }
    }
    for i in 0..6 {
        let (p, q) = (corner(i), corner(i + 1));
        let point = |s: usize, t: usize| {
            p + (q - p) * (s as f64 / n as f64) + z(-0.5 * length + length * t as f64 / m as f64)
        };
        for s in 0..n {
            for t in 0..m {
                let (a0, b0, c0, d0) = (point(s, t), point(s + 1, t), point(s + 1, t + 1), point(s, t + 1));
                soup.push([a0, b0, c0]);
                soup.push([a0, c0, d0]);
            }
        }
    }
    let (v, t) = weld(&soup, h.min(a) * 1e-7);
    TriangleMesh::new_repairing(v, t)
}

//! Closed, outward-oriented triangular surface meshes.
//!
//! A [`TriangleMesh`] always describes one watertight particle boundary. Every
//! edge is shared by exactly two triangles and the winding is such that the
//! right-hand normal points into the exterior domain.

mod generate;
mod io;
mod refine;
mod scene;

pub use generate::{
    cube_divisions_for, generate_cube, generate_cube_with_divisions, generate_hex_column,
    generate_icosphere, generate_sphere, sphere_frequency_for,
};
pub use io::{load_mesh, read_gmsh, read_off, write_off, MeshFormat};
pub use refine::{barycentric_refine, BarycentricRefinement, RefinedTriangle};
pub use scene::{triangles_intersect, Placement, Scene};

use std::collections::{HashMap, VecDeque};

use nalgebra::{Matrix3, Vector3};

use crate::error::{BemError, Result};

pub type Point = Vector3<f64>;

/// An undirected mesh edge with its two incident triangles.
///
/// `vertices[0] < vertices[1]`. `triangles[0]` traverses the edge as
/// `vertices[0] -> vertices[1]`, `triangles[1]` in the opposite direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub triangles: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    normals: Vec<Point>,
    areas: Vec<f64>,
    edges: Vec<Edge>,
    /// `triangle_edges[t][i]` is the edge opposite local vertex `i`.
    triangle_edges: Vec<[usize; 3]>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriangleMesh {
    /// Builds a mesh and checks every invariant: closed 2-manifold, consistent
    /// outward winding, no degenerate triangles.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self::build(vertices, triangles)?;
        if mesh.signed_volume() <= 0.0 {
            return Err(BemError::Topology(
                "surface is oriented inwards (non-positive signed volume)".into(),
            ));
        }
        Ok(mesh)
    }

    /// Like [`TriangleMesh::new`], but re-orients inconsistent windings by a
    /// flood fill over edge neighbours and fixes the global sign with the
    /// signed volume.
    pub fn new_repairing(vertices: Vec<Point>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        orient_consistently(&mut triangles)?;
        let mut mesh = Self::build(vertices.clone(), triangles.clone())?;
        if mesh.signed_volume() < 0.0 {
            for t in triangles.iter_mut() {
                t.swap(1, 2);
            }
            mesh = Self::build(vertices, triangles)?;
        }
        Ok(mesh)
    }

    fn build(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(BemError::Topology("mesh has no triangles".into()));
        }
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(BemError::Topology(format!(
                    "triangle {i} references a missing vertex"
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(BemError::Topology(format!("triangle {i} repeats a vertex")));
            }
        }
        let (lo, hi) = bounding_box(&vertices);
        let diag2 = (hi - lo).norm_squared();
        let mut normals = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        for (i, t) in triangles.iter().enumerate() {
            let c = (vertices[t[1]] - vertices[t[0]]).cross(&(vertices[t[2]] - vertices[t[0]]));
            let area = 0.5 * c.norm();
            if area <= 1e-12 * diag2 {
                return Err(BemError::Topology(format!("triangle {i} is degenerate")));
            }
            normals.push(c / (2.0 * area));
            areas.push(area);
        }

        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (ti, t) in triangles.iter().enumerate() {
            for i in 0..3 {
                let a = t[(i + 1) % 3];
                let b = t[(i + 2) % 3];
                if directed.insert((a, b), ti).is_some() {
                    return Err(BemError::Topology(format!(
                        "edge ({a}, {b}) is traversed twice in the same direction \
                         (non-manifold or inconsistently oriented)"
                    )));
                }
            }
        }
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut triangle_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (ti, t) in triangles.iter().enumerate() {
            for i in 0..3 {
                let a = t[(i + 1) % 3];
                let b = t[(i + 2) % 3];
                let key = edge_key(a, b);
                let e = match edge_index.get(&key) {
                    Some(&e) => e,
                    None => {
                        let (lo_v, hi_v) = key;
                        let forward = *directed.get(&(lo_v, hi_v)).ok_or_else(|| {
                            BemError::Topology(format!("edge ({lo_v}, {hi_v}) has only one triangle"))
                        })?;
                        let backward = *directed.get(&(hi_v, lo_v)).ok_or_else(|| {
                            BemError::Topology(format!("edge ({lo_v}, {hi_v}) has only one triangle"))
                        })?;
                        edges.push(Edge {
                            vertices: [lo_v, hi_v],
                            triangles: [forward, backward],
                        });
                        edge_index.insert(key, edges.len() - 1);
                        edges.len() - 1
                    }
                };
                triangle_edges[ti][i] = e;
            }
        }
        Ok(Self {
            vertices,
            triangles,
            normals,
            areas,
            edges,
            triangle_edges,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Point] {
        &self.normals
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn centroid_of(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        (a + b + c) / 3.0
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].vertices;
        (self.vertices[a] - self.vertices[b]).norm()
    }

    pub fn max_edge_length(&self) -> f64 {
        (0..self.edges.len())
            .map(|e| self.edge_length(e))
            .fold(0.0, f64::max)
    }

    pub fn surface_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Enclosed volume via the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Area-weighted centroid of the surface.
    pub fn centroid(&self) -> Point {
        let mut acc = Point::zeros();
        for t in 0..self.triangles.len() {
            acc += self.centroid_of(t) * self.areas[t];
        }
        acc / self.surface_area()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        bounding_box(&self.vertices)
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Euler characteristic V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    /// Number of triangles incident to each vertex.
    pub fn vertex_valences(&self) -> Vec<usize> {
        let mut val = vec![0; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                val[v] += 1;
            }
        }
        val
    }

    /// Generalized winding number of the closed surface about `p`
    /// (1 inside, 0 outside), from the sum of signed solid angles.
    pub fn winding_number(&self, p: &Point) -> f64 {
        let mut total = 0.0;
        for t in &self.triangles {
            let a = self.vertices[t[0]] - p;
            let b = self.vertices[t[1]] - p;
            let c = self.vertices[t[2]] - p;
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.winding_number(p) > 0.5
    }

    /// Minimum distance from `p` to the surface.
    pub fn distance_to(&self, p: &Point) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Applies `x -> rotation * x + translation`. The rotation must be proper
    /// so that the winding stays outward.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Point) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|v| rotation * v + translation)
            .collect();
        let normals = self.normals.iter().map(|n| (rotation * n).normalize()).collect();
        Self {
            vertices,
            triangles: self.triangles.clone(),
            normals,
            areas: self.areas.clone(),
            edges: self.edges.clone(),
            triangle_edges: self.triangle_edges.clone(),
        }
    }

    pub fn translated(&self, translation: &Point) -> Self {
        self.transformed(&Matrix3::identity(), translation)
    }
}

pub(crate) fn bounding_box(points: &[Point]) -> (Point, Point) {
    let mut lo = Point::repeat(f64::INFINITY);
    let mut hi = Point::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Makes all windings agree across shared edges, one connected component at a time.
fn orient_consistently(triangles: &mut [[usize; 3]]) -> Result<()> {
    let mut incident: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (ti, t) in triangles.iter().enumerate() {
        for i in 0..3 {
            incident
                .entry(edge_key(t[i], t[(i + 1) % 3]))
                .or_default()
                .push(ti);
        }
    }
    if let Some((k, v)) = incident.iter().find(|(_, v)| v.len() != 2) {
        return Err(BemError::Topology(format!(
            "edge ({}, {}) has {} incident triangles; surface must be closed and manifold",
            k.0,
            k.1,
            v.len()
        )));
    }
    let has_directed = |t: &[usize; 3], a: usize, b: usize| {
        (0..3).any(|i| t[i] == a && t[(i + 1) % 3] == b)
    };
    let mut visited = vec![false; triangles.len()];
    for seed in 0..triangles.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut queue = VecDeque::from([seed]);
        while let Some(ti) = queue.pop_front() {
            let t = triangles[ti];
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                for &nj in &incident[&edge_key(a, b)] {
                    if nj == ti {
                        continue;
                    }
                    if visited[nj] {
                        if has_directed(&triangles[nj], a, b) {
                            return Err(BemError::Topology(
                                "surface is non-orientable".into(),
                            ));
                        }
                        continue;
                    }
                    if has_directed(&triangles[nj], a, b) {
                        triangles[nj].swap(1, 2);
                    }
                    visited[nj] = true;
                    queue.push_back(nj);
                }
            }
        }
    }
    Ok(())
}

/// Closest point to `p` on triangle `abc` (Ericson, Real-Time Collision Detection).
pub(crate) fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> (Vec<Point>, Vec<[usize; 3]>) {
        let v = vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(0.0, 0.0, 1.0),
        ];
        let t = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        (v, t)
    }

    #[test]
    fn tetrahedron_is_valid() {
        let (v, t) = tetra();
        let m = TriangleMesh::new(v, t).unwrap();
        assert_eq!(m.edge_count(), 6);
        assert!((m.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.euler_characteristic(), 2);
        for e in m.edges() {
            assert_ne!(e.triangles[0], e.triangles[1]);
        }
    }

    #[test]
    fn inward_tetrahedron_rejected_but_repairable() {
        let (v, mut t) = tetra();
        for tri in t.iter_mut() {
            tri.swap(1, 2);
        }
        assert!(TriangleMesh::new(v.clone(), t.clone()).is_err());
        let m = TriangleMesh::new_repairing(v, t).unwrap();
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn open_surface_is_topology_error() {
        let (v, mut t) = tetra();
        t.pop();
        assert!(matches!(
            TriangleMesh::new_repairing(v, t),
            Err(BemError::Topology(_))
        ));
    }

    #[test]
    fn winding_number_inside_outside() {
        let m = generate_cube(1.0, 0.5).unwrap();
        assert!(m.contains(&Point::new(0.0, 0.0, 0.0)));
        assert!(!m.contains(&Point::new(2.0, 0.0, 0.0)));
        assert!((m.distance_to(&Point::new(1.5, 0.0, 0.0)) - 1.0).abs() < 1e-12);
    }
}

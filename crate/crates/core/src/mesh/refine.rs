use super::{Point, TriangleMesh};
use crate::error::Result;

/// Provenance of one child of the barycentric refinement.
///
/// Every child has exactly one primal vertex, one primal edge midpoint and
/// the parent centroid as its corners, stored in that order up to winding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefinedTriangle {
    pub parent: usize,
    /// Primal vertex index (also its index in the refined mesh).
    pub vertex: usize,
    /// Primal edge whose midpoint is a corner of this child.
    pub edge: usize,
}

#[derive(Debug, Clone)]
pub struct BarycentricRefinement {
    pub mesh: TriangleMesh,
    pub children: Vec<RefinedTriangle>,
    /// `parent_children[t]` lists the six children of primal triangle `t`.
    pub parent_children: Vec<[usize; 6]>,
    primal_vertices: usize,
    primal_edges: usize,
}

impl BarycentricRefinement {
    pub fn midpoint_vertex(&self, edge: usize) -> usize {
        self.primal_vertices + edge
    }

    pub fn centroid_vertex(&self, triangle: usize) -> usize {
        self.primal_vertices + self.primal_edges + triangle
    }
}

/// Splits every triangle into six through its centroid and edge midpoints.
/// Windings follow the parent, so the refinement stays outward oriented.
pub fn barycentric_refine(mesh: &TriangleMesh) -> Result<BarycentricRefinement> {
    let nv = mesh.vertex_count();
    let ne = mesh.edge_count();
    let mut vertices: Vec<Point> = mesh.vertices().to_vec();
    for e in mesh.edges() {
        vertices.push(0.5 * (mesh.vertices()[e.vertices[0]] + mesh.vertices()[e.vertices[1]]));
    }
    for t in 0..mesh.triangle_count() {
        vertices.push(mesh.centroid_of(t));
    }
    let mut triangles = Vec::with_capacity(6 * mesh.triangle_count());
    let mut children = Vec::with_capacity(6 * mesh.triangle_count());
    let mut parent_children = Vec::with_capacity(mesh.triangle_count());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let c = nv + ne + t;
        let edges = mesh.triangle_edges()[t];
        let mut ids = [0usize; 6];
        let mut slot = 0;
        for i in 0..3 {
            let v = tri[i];
            let w = tri[(i + 1) % 3];
            // Edge between local vertices i and i+1 is opposite local vertex i+2.
            let e = edges[(i + 2) % 3];
            let m = nv + e;
            triangles.push([v, m, c]);
            children.push(RefinedTriangle { parent: t, vertex: v, edge: e });
            ids[slot] = triangles.len() - 1;
            slot += 1;
            triangles.push([m, w, c]);
            children.push(RefinedTriangle { parent: t, vertex: w, edge: e });
            ids[slot] = triangles.len() - 1;
            slot += 1;
        }
        parent_children.push(ids);
    }
    let refined = TriangleMesh::new(vertices, triangles)?;
    Ok(BarycentricRefinement {
        mesh: refined,
        children,
        parent_children,
        primal_vertices: nv,
        primal_edges: ne,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cube_with_divisions, generate_icosphere};

    #[test]
    fn cube_refines_to_72() {
        let m = generate_cube_with_divisions(1.0, 1).unwrap();
        let r = barycentric_refine(&m).unwrap();
        assert_eq!(r.mesh.triangle_count(), 72);
        assert!((r.mesh.surface_area() - 6.0).abs() < 1e-12 * 6.0);
    }

    #[test]
    fn icosahedron_refined_vertex_count() {
        let m = generate_icosphere(1.0, 1).unwrap();
        let r = barycentric_refine(&m).unwrap();
        assert_eq!(r.mesh.vertex_count(), 62);
        assert_eq!(r.mesh.triangle_count(), 120);
        let rel = (r.mesh.surface_area() - m.surface_area()).abs() / m.surface_area();
        assert!(rel < 1e-12);
    }

    #[test]
    fn children_contain_their_vertex_and_edge_midpoint() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let r = barycentric_refine(&m).unwrap();
        for (i, ch) in r.children.iter().enumerate() {
            let tri = r.mesh.triangles()[i];
            assert!(tri.contains(&ch.vertex));
            assert!(tri.contains(&r.midpoint_vertex(ch.edge)));
            assert!(tri.contains(&r.centroid_vertex(ch.parent)));
            assert!(m.edges()[ch.edge].vertices.contains(&ch.vertex));
        }
    }
}

use nalgebra::Matrix3;

use super::{bounding_box, Point, TriangleMesh};
use crate::error::{BemError, Result};

/// Rigid-body placement `x -> rotation * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub rotation: Matrix3<f64>,
    pub translation: Point,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Point::zeros(),
        }
    }
}

impl Placement {
    pub fn translation(t: Point) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Point::zeros()
    }

    fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-10 || (r.determinant() - 1.0).abs() > 1e-10 {
            return Err(BemError::InvalidParameter(
                "rotation must be a proper orthonormal matrix".into(),
            ));
        }
        Ok(())
    }
}

/// An ordered collection of disjoint particle boundaries.
#[derive(Debug, Clone)]
pub struct Scene {
    meshes: Vec<TriangleMesh>,
}

impl Scene {
    pub fn new(meshes: Vec<TriangleMesh>) -> Result<Self> {
        if meshes.is_empty() {
            return Err(BemError::InvalidParameter("scene needs at least one scatterer".into()));
        }
        let scene = Self { meshes };
        scene.check_disjoint()?;
        Ok(scene)
    }

    pub fn single(mesh: TriangleMesh) -> Self {
        Self { meshes: vec![mesh] }
    }

    pub fn meshes(&self) -> &[TriangleMesh] {
        &self.meshes
    }

    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }

    /// Applies a rigid motion to scatterer `index` and re-checks disjointness.
    pub fn place(&self, index: usize, placement: &Placement) -> Result<Scene> {
        if index >= self.meshes.len() {
            return Err(BemError::InvalidParameter(format!(
                "scatterer index {index} out of range (M = {})",
                self.meshes.len()
            )));
        }
        placement.validate()?;
        if placement.is_identity() {
            return Ok(self.clone());
        }
        let mut meshes = self.meshes.clone();
        meshes[index] = meshes[index].transformed(&placement.rotation, &placement.translation);
        Scene::new(meshes)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        for i in 0..self.meshes.len() {
            for j in i + 1..self.meshes.len() {
                if meshes_intersect(&self.meshes[i], &self.meshes[j]) {
                    return Err(BemError::Intersection(i, j));
                }
            }
        }
        Ok(())
    }

    /// Index of the scatterer containing `p`, if any.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        self.meshes.iter().position(|m| m.contains(p))
    }

    /// `nx x ny` copies of `mesh` on a grid in the xy-plane with the given
    /// centre-to-centre spacing, centred on the origin. Row-major in x.
    pub fn grid(mesh: &TriangleMesh, nx: usize, ny: usize, spacing: f64) -> Result<Scene> {
        if nx == 0 || ny == 0 || !(spacing > 0.0) {
            return Err(BemError::InvalidParameter("grid needs nx, ny >= 1 and spacing > 0".into()));
        }
        let (lo, hi) = mesh.bounding_box();
        let centre = (lo + hi) / 2.0;
        let offset = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * spacing;
        let mut meshes = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let t = Point::new(offset(i, nx), offset(j, ny), 0.0) - centre;
                meshes.push(mesh.translated(&t));
            }
        }
        Scene::new(meshes)
    }
}

fn boxes_overlap(a: &(Point, Point), b: &(Point, Point), pad: f64) -> bool {
    (0..3).all(|k| a.0[k] <= b.1[k] + pad && b.0[k] <= a.1[k] + pad)
}

fn meshes_intersect(a: &TriangleMesh, b: &TriangleMesh) -> bool {
    let (ba, bb) = (a.bounding_box(), b.bounding_box());
    if !boxes_overlap(&ba, &bb, 0.0) {
        return false;
    }
    // One surface nested inside the other also violates disjointness.
    if a.contains(&b.vertices()[0]) || b.contains(&a.vertices()[0]) {
        return true;
    }
    let boxes_b: Vec<_> = (0..b.triangle_count())
        .map(|t| bounding_box(&b.corners(t)))
        .collect();
    for ta in 0..a.triangle_count() {
        let ca = a.corners(ta);
        let box_a = bounding_box(&ca);
        if !boxes_overlap(&box_a, &bb, 0.0) {
            continue;
        }
        for (tb, box_b) in boxes_b.iter().enumerate() {
            if boxes_overlap(&box_a, box_b, 0.0) && triangles_intersect(&ca, &b.corners(tb)) {
                return true;
            }
        }
    }
    false
}

/// Separating-axis test for two closed triangles; touching counts as intersecting.
pub fn triangles_intersect(p: &[Point; 3], q: &[Point; 3]) -> bool {
    let edges = |t: &[Point; 3]| [t[1] - t[0], t[2] - t[1], t[0] - t[2]];
    let (ep, eq) = (edges(p), edges(q));
    let np = ep[0].cross(&ep[1]);
    let nq = eq[0].cross(&eq[1]);
    let scale = ep.iter().chain(eq.iter()).map(|e| e.norm()).fold(0.0, f64::max);
    let mut axes = vec![np, nq];
    for a in &ep {
        for b in &eq {
            axes.push(a.cross(b));
        }
    }
    for e in ep.iter() {
        axes.push(np.cross(e));
    }
    for e in eq.iter() {
        axes.push(nq.cross(e));
    }
    for axis in axes {
        let len = axis.norm();
        if len <= 1e-12 * scale * scale {
            continue;
        }
        let ax = axis / len;
        let proj = |t: &[Point; 3]| {
            let v = [t[0].dot(&ax), t[1].dot(&ax), t[2].dot(&ax)];
            (v[0].min(v[1]).min(v[2]), v[0].max(v[1]).max(v[2]))
        };
        let (a0, a1) = proj(p);
        let (b0, b1) = proj(q);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_cube_with_divisions;

    fn cube() -> TriangleMesh {
        generate_cube_with_divisions(1.0, 2).unwrap()
    }

    #[test]
    fn identity_placement_is_bitwise_noop() {
        let s = Scene::single(cube());
        let t = s.place(0, &Placement::default()).unwrap();
        for (a, b) in s.meshes()[0].vertices().iter().zip(t.meshes()[0].vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn translation_moves_centroid() {
        let s = Scene::single(cube());
        let c0 = s.meshes()[0].centroid();
        let t = s.place(0, &Placement::translation(Point::new(10.0, 0.0, 0.0))).unwrap();
        let c1 = t.meshes()[0].centroid();
        assert!((c1 - c0 - Point::new(10.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn overlapping_cubes_rejected() {
        let a = cube();
        let b = cube().translated(&Point::new(0.5, 0.2, 0.1));
        assert!(matches!(Scene::new(vec![a.clone(), b]), Err(BemError::Intersection(0, 1))));
        let s = Scene::new(vec![a.clone(), a.translated(&Point::new(3.0, 0.0, 0.0))]).unwrap();
        assert!(matches!(
            s.place(1, &Placement::translation(Point::new(-2.5, 0.0, 0.0))),
            Err(BemError::Intersection(0, 1))
        ));
    }

    #[test]
    fn nested_surfaces_rejected() {
        let outer = generate_cube_with_divisions(3.0, 1).unwrap();
        assert!(Scene::new(vec![outer, cube()]).is_err());
    }

    #[test]
    fn sat_basic() {
        let t1 = [Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)];
        let t2 = [Point::new(0.2, 0.2, -1.0), Point::new(0.2, 0.2, 1.0), Point::new(0.3, 0.5, 0.0)];
        assert!(triangles_intersect(&t1, &t2));
        let t3 = [Point::new(2.0, 2.0, 0.0), Point::new(3.0, 2.0, 0.0), Point::new(2.0, 3.0, 0.0)];
        assert!(!triangles_intersect(&t1, &t3));
    }

    #[test]
    fn grid_is_centred_and_spaced() {
        let m = generate_cube_with_divisions(0.4, 2).unwrap();
        let s = Scene::grid(&m, 2, 2, 0.8).unwrap();
        assert_eq!(s.len(), 4);
        let c: Vec<_> = s.meshes().iter().map(|m| m.centroid()).collect();
        assert!((c[0] - Point::new(-0.4, -0.4, 0.0)).norm() < 1e-12);
        assert!((c[3] - Point::new(0.4, 0.4, 0.0)).norm() < 1e-12);
        assert!(Scene::grid(&m, 2, 1, 0.3).is_err());
        assert!(Scene::grid(&m, 0, 1, 0.8).is_err());
    }
}

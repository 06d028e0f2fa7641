use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Point, TriangleMesh};
use crate::error::{BemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    /// Gmsh ASCII 2.2
    GmshAscii,
    Off,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "msh" => Some(Self::GmshAscii),
            "off" => Some(Self::Off),
            _ => None,
        }
    }
}

/// Reads a closed surface. Windings are repaired; open or non-manifold
/// surfaces are rejected.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path)?;
    let (v, t) = match format {
        MeshFormat::GmshAscii => read_gmsh(&text)?,
        MeshFormat::Off => read_off(&text)?,
    };
    TriangleMesh::new_repairing(v, t)
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| BemError::Parse(format!("missing {what}")))?
        .parse()
        .map_err(|_| BemError::Parse(format!("malformed {what}")))
}

/// Drops vertices no triangle references and renumbers the rest.
fn compact(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> (Vec<Point>, Vec<[usize; 3]>) {
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut out = Vec::new();
    let tris = triangles
        .into_iter()
        .map(|t| {
            t.map(|v| {
                if remap[v] == usize::MAX {
                    remap[v] = out.len();
                    out.push(vertices[v]);
                }
                remap[v]
            })
        })
        .collect();
    (out, tris)
}

pub fn read_off(text: &str) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    match tokens.next() {
        Some("OFF") => {}
        _ => return Err(BemError::Parse("OFF header missing".into())),
    }
    let nv: usize = parse(tokens.next(), "vertex count")?;
    let nf: usize = parse(tokens.next(), "face count")?;
    let _ne: usize = parse(tokens.next(), "edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = parse(tokens.next(), "vertex coordinate")?;
        let y = parse(tokens.next(), "vertex coordinate")?;
        let z = parse(tokens.next(), "vertex coordinate")?;
        vertices.push(Point::new(x, y, z));
    }
    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let k: usize = parse(tokens.next(), "face size")?;
        if k != 3 {
            return Err(BemError::Parse(format!("face {f} has {k} vertices; only triangles are supported")));
        }
        let mut t = [0usize; 3];
        for slot in t.iter_mut() {
            *slot = parse(tokens.next(), "face index")?;
            if *slot >= nv {
                return Err(BemError::Parse(format!("face {f} references vertex {slot} out of range")));
            }
        }
        triangles.push(t);
    }
    Ok((vertices, triangles))
}

/// Serializes in OFF. Coordinates use the shortest round-trip decimal form,
/// so reading the output back reproduces the mesh bit for bit.
pub fn write_off(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF");
    let _ = writeln!(s, "{} {} {}", mesh.vertex_count(), mesh.triangle_count(), mesh.edge_count());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub fn read_gmsh(text: &str) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut nodes: HashMap<usize, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut saw_format = false;
    while let Some(line) = lines.next() {
        match line {
            "$MeshFormat" => {
                let header = lines.next().ok_or_else(|| BemError::Parse("truncated $MeshFormat".into()))?;
                let mut it = header.split_whitespace();
                let version: f64 = parse(it.next(), "format version")?;
                let file_type: u32 = parse(it.next(), "file type")?;
                if !(2.0..3.0).contains(&version) || file_type != 0 {
                    return Err(BemError::Parse(format!(
                        "only ASCII Gmsh 2.x is supported (got version {version}, type {file_type})"
                    )));
                }
                saw_format = true;
            }
            "$Nodes" => {
                let n: usize = parse(lines.next(), "node count")?;
                for _ in 0..n {
                    let l = lines.next().ok_or_else(|| BemError::Parse("truncated $Nodes".into()))?;
                    let mut it = l.split_whitespace();
                    let id: usize = parse(it.next(), "node id")?;
                    let x = parse(it.next(), "node coordinate")?;
                    let y = parse(it.next(), "node coordinate")?;
                    let z = parse(it.next(), "node coordinate")?;
                    nodes.insert(id, vertices.len());
                    vertices.push(Point::new(x, y, z));
                }
            }
            "$Elements" => {
                let n: usize = parse(lines.next(), "element count")?;
                for _ in 0..n {
                    let l = lines.next().ok_or_else(|| BemError::Parse("truncated $Elements".into()))?;
                    let f: Vec<&str> = l.split_whitespace().collect();
                    let kind: u32 = parse(f.get(1).copied(), "element type")?;
                    if kind != 2 {
                        continue;
                    }
                    let ntags: usize = parse(f.get(2).copied(), "tag count")?;
                    let mut t = [0usize; 3];
                    for (k, slot) in t.iter_mut().enumerate() {
                        let id: usize = parse(f.get(3 + ntags + k).copied(), "element node")?;
                        *slot = *nodes
                            .get(&id)
                            .ok_or_else(|| BemError::Parse(format!("element references unknown node {id}")))?;
                    }
                    triangles.push(t);
                }
            }
            _ => {}
        }
    }
    if !saw_format {
        return Err(BemError::Parse("$MeshFormat section missing".into()));
    }
    if triangles.is_empty() {
        return Err(BemError::Parse("no triangle elements (type 2) found".into()));
    }
    Ok(compact(vertices, triangles))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA_OFF: &str = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    #[test]
    fn tetrahedron_off() {
        let (v, t) = read_off(TETRA_OFF).unwrap();
        let m = TriangleMesh::new_repairing(v, t).unwrap();
        assert_eq!((m.vertex_count(), m.triangle_count()), (4, 4));
        for (ti, n) in m.normals().iter().enumerate() {
            // Outward: normal points away from the interior point.
            let inside = Point::new(0.1, 0.1, 0.1);
            assert!(n.dot(&(m.centroid_of(ti) - inside)) > 0.0);
        }
    }

    #[test]
    fn cube_with_flipped_face_is_repaired() {
        let cube = crate::mesh::generate_cube_with_divisions(1.0, 1).unwrap();
        let mut tris = cube.triangles().to_vec();
        tris[5].swap(0, 1);
        let m = TriangleMesh::new_repairing(cube.vertices().to_vec(), tris).unwrap();
        assert!(m.signed_volume() > 0.0);
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_off() {
        assert!(matches!(read_off("OFF\n4 4\n"), Err(BemError::Parse(_))));
        assert!(matches!(read_off("PLY\n"), Err(BemError::Parse(_))));
        assert!(read_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n").is_err());
    }

    #[test]
    fn gmsh_tetrahedron() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n5\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n9 5 5 5\n$EndNodes\n\
                    $Elements\n5\n1 15 2 0 1 1\n2 2 2 0 1 1 3 2\n3 2 2 0 1 1 2 4\n4 2 2 0 1 1 4 3\n5 2 2 0 1 2 3 4\n$EndElements\n";
        let (v, t) = read_gmsh(text).unwrap();
        assert_eq!(v.len(), 4);
        let m = TriangleMesh::new_repairing(v, t).unwrap();
        assert!((m.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn off_round_trip_is_bit_exact() {
        let m = crate::mesh::generate_icosphere(0.7, 3).unwrap();
        let (v, t) = read_off(&write_off(&m)).unwrap();
        assert_eq!(t, m.triangles());
        for (a, b) in v.iter().zip(m.vertices()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }
}

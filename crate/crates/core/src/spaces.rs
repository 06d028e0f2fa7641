//! Div-conforming boundary element spaces.
//!
//! Both spaces are stored the same way: on every triangle of their support
//! mesh, each basis function is an affine field `f(r) = beta * r - q` with
//! divergence `2 beta`. A field with outward edge fluxes `phi_j` (edge
//! opposite corner `p_j`) on a triangle of area `a` is
//! `sum_j phi_j (r - p_j) / (2a)`, so everything is built from fluxes.
//!
//! RWG functions live on the primal mesh and carry flux `L` (edge length)
//! across their edge. Buffa-Christiansen functions live on the barycentric
//! refinement and carry unit flux across the dual edge.

use crate::error::{BemError, Result};
use crate::mesh::{barycentric_refine, BarycentricRefinement, Point, TriangleMesh};

/// One basis function restricted to one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub dof: usize,
    pub beta: f64,
    pub q: Point,
}

impl Piece {
    #[inline]
    pub fn value(&self, r: &Point) -> Point {
        self.beta * r - self.q
    }

    #[inline]
    pub fn divergence(&self) -> f64 {
        2.0 * self.beta
    }

    fn from_fluxes(dof: usize, corners: &[Point; 3], fluxes: [f64; 3], area: f64) -> Self {
        let s = 0.5 / area;
        let beta = s * (fluxes[0] + fluxes[1] + fluxes[2]);
        let q = s * (fluxes[0] * corners[0] + fluxes[1] * corners[1] + fluxes[2] * corners[2]);
        Piece { dof, beta, q }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    Rwg,
    BuffaChristiansen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Primal,
    Refined,
}

/// Basis functions indexed by the primal edges of one surface.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    pub kind: SpaceKind,
    pub support: Support,
    dim: usize,
    pieces: Vec<Vec<Piece>>,
}

impl FunctionSpace {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Basis pieces on triangle `t` of the support mesh.
    pub fn pieces(&self, t: usize) -> &[Piece] {
        &self.pieces[t]
    }

    pub fn triangle_count(&self) -> usize {
        self.pieces.len()
    }

    /// Value of basis function `dof` at `r` on support triangle `t`.
    pub fn evaluate(&self, dof: usize, t: usize, r: &Point) -> Result<Point> {
        if dof >= self.dim {
            return Err(BemError::InvalidParameter(format!("dof {dof} out of range ({})", self.dim)));
        }
        let pieces = self
            .pieces
            .get(t)
            .ok_or_else(|| BemError::InvalidParameter(format!("triangle {t} out of range")))?;
        pieces
            .iter()
            .find(|p| p.dof == dof)
            .map(|p| p.value(r))
            .ok_or(BemError::OutOfSupport { dof, triangle: t })
    }

    /// Surface divergence of `dof` on support triangle `t` (zero off support).
    pub fn divergence(&self, dof: usize, t: usize) -> f64 {
        self.pieces[t].iter().find(|p| p.dof == dof).map_or(0.0, Piece::divergence)
    }

    /// Multiplies basis function `dof` by `factor` on every triangle. Useful
    /// for rescaling a basis and for negative controls of the mass checks.
    pub fn scale_dof(&mut self, dof: usize, factor: f64) {
        for p in self.pieces.iter_mut().flatten().filter(|p| p.dof == dof) {
            p.beta *= factor;
            p.q *= factor;
        }
    }
}

/// RWG functions: `+L/(2A) (r - p)` on the triangle that traverses the edge
/// from its lower to its higher vertex index, the negative on the other one.
pub fn rwg_space(mesh: &TriangleMesh) -> FunctionSpace {
    let mut pieces = vec![Vec::with_capacity(3); mesh.triangle_count()];
    for (t, edges) in mesh.triangle_edges().iter().enumerate() {
        let corners = mesh.corners(t);
        for (local, &e) in edges.iter().enumerate() {
            let sign = if mesh.edges()[e].triangles[0] == t { 1.0 } else { -1.0 };
            let mut fluxes = [0.0; 3];
            fluxes[local] = sign * mesh.edge_length(e);
            pieces[t].push(Piece::from_fluxes(e, &corners, fluxes, mesh.areas()[t]));
        }
    }
    FunctionSpace { kind: SpaceKind::Rwg, support: Support::Primal, dim: mesh.edge_count(), pieces }
}

/// The RWG space re-expressed on the children of the barycentric refinement.
pub fn rwg_on_refinement(rwg: &FunctionSpace, refinement: &BarycentricRefinement) -> FunctionSpace {
    let pieces = refinement
        .children
        .iter()
        .map(|ch| rwg.pieces(ch.parent).to_vec())
        .collect();
    FunctionSpace { kind: SpaceKind::Rwg, support: Support::Refined, dim: rwg.dim(), pieces }
}

/// Children around primal vertex `v` in cyclic order, starting next to the
/// half-edge towards the midpoint of `edge`. Consecutive children share a spoke;
/// child `i` lies between spokes `i` and `i + 1`, spoke 0 ending at that midpoint.
fn cell_cycle(
    refinement: &BarycentricRefinement,
    cells: &[Vec<usize>],
    v: usize,
    edge: usize,
) -> Vec<usize> {
    let tris = refinement.mesh.triangles();
    let other_spokes = |child: usize| {
        let [a, b, c] = tris[child];
        let mut o = [a, b, c].into_iter().filter(|&x| x != v);
        (o.next().expect("child has three corners"), o.next().expect("child has three corners"))
    };
    let cell = &cells[v];
    let start = refinement.midpoint_vertex(edge);
    let first = *cell
        .iter()
        .find(|&&ch| {
            let (a, b) = other_spokes(ch);
            a == start || b == start
        })
        .expect("edge midpoint lies in the cell of its endpoint");
    let mut order = Vec::with_capacity(cell.len());
    let mut current = first;
    let mut entry = start;
    loop {
        order.push(current);
        let (a, b) = other_spokes(current);
        let exit = if a == entry { b } else { a };
        if exit == start {
            break;
        }
        current = *cell
            .iter()
            .find(|&&ch| {
                ch != current && {
                    let (a, b) = other_spokes(ch);
                    a == exit || b == exit
                }
            })
            .expect("closed cell around an interior vertex");
        entry = exit;
    }
    debug_assert_eq!(order.len(), cell.len());
    order
}

/// Buffa-Christiansen functions on the barycentric refinement.
///
/// For edge `e = (a, b)` with `a < b`, a unit flux leaves the dual cell of
/// `a` through the two halves of the dual edge of `e` (one half each) and
/// enters the dual cell of `b`. Inside a cell of `2N` children the spoke
/// fluxes grow linearly so that every child carries the same share
/// `1/(2N)` of the divergence.
pub fn bc_space(mesh: &TriangleMesh, refinement: &BarycentricRefinement) -> FunctionSpace {
    let rmesh = &refinement.mesh;
    let tris = rmesh.triangles();
    let mut cells = vec![Vec::new(); mesh.vertex_count()];
    for (i, ch) in refinement.children.iter().enumerate() {
        cells[ch.vertex].push(i);
    }
    let mut pieces = vec![Vec::new(); rmesh.triangle_count()];
    for (e, edge) in mesh.edges().iter().enumerate() {
        let midpoint = refinement.midpoint_vertex(e);
        for (v, sign) in [(edge.vertices[0], 1.0), (edge.vertices[1], -1.0)] {
            let order = cell_cycle(refinement, &cells, v, e);
            let n2 = order.len();
            let n = (n2 / 2) as f64;
            // Flux from child i-1 into child i across spoke i; spoke 0 carries none.
            let spoke = |i: usize| if i == 0 || i == n2 { 0.0 } else { (i as f64 - n) / (2.0 * n) };
            for (i, &child) in order.iter().enumerate() {
                let corners_idx = tris[child];
                let prev = if i == 0 { midpoint } else { shared_spoke(tris, v, order[i - 1], child) };
                let mut fluxes = [0.0; 3];
                for (local, &corner) in corners_idx.iter().enumerate() {
                    // Outward flux through the edge opposite `corner`.
                    fluxes[local] = if corner == v {
                        if i == 0 || i == n2 - 1 {
                            0.5
                        } else {
                            0.0
                        }
                    } else if corner == prev {
                        // Opposite `prev` is the spoke towards the next child.
                        spoke(i + 1)
                    } else {
                        -spoke(i)
                    };
                }
                let fluxes = fluxes.map(|f| f * sign);
                pieces[child].push(Piece::from_fluxes(e, &rmesh.corners(child), fluxes, rmesh.areas()[child]));
            }
        }
    }
    FunctionSpace {
        kind: SpaceKind::BuffaChristiansen,
        support: Support::Refined,
        dim: mesh.edge_count(),
        pieces,
    }
}

/// Far end of the spoke shared by two neighbouring children of the cell of `v`.
fn shared_spoke(tris: &[[usize; 3]], v: usize, a: usize, b: usize) -> usize {
    tris[a]
        .iter()
        .copied()
        .find(|&x| x != v && tris[b].contains(&x))
        .expect("neighbouring children share a spoke")
}

/// Everything needed to discretise one scatterer boundary.
#[derive(Debug, Clone)]
pub struct SurfaceSpaces {
    pub mesh: TriangleMesh,
    pub refinement: BarycentricRefinement,
    pub rwg: FunctionSpace,
    pub rwg_refined: FunctionSpace,
    pub bc: FunctionSpace,
}

impl SurfaceSpaces {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        let refinement = barycentric_refine(&mesh)?;
        let rwg = rwg_space(&mesh);
        let rwg_refined = rwg_on_refinement(&rwg, &refinement);
        let bc = bc_space(&mesh, &refinement);
        Ok(Self { mesh, refinement, rwg, rwg_refined, bc })
    }

    /// Number of unknowns per trace component (the edge count).
    pub fn dim(&self) -> usize {
        self.rwg.dim()
    }
}

/// Layout of the global unknown vector: for each scatterer its Dirichlet
/// (RWG) block followed by its Neumann (BC) block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl ProductLayout {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        for &n in &dims {
            offsets.push(acc);
            acc += 2 * n;
        }
        offsets.push(acc);
        Self { dims, offsets }
    }

    pub fn scatterers(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, m: usize) -> usize {
        self.dims[m]
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Range of the Dirichlet unknowns of scatterer `m`.
    pub fn dirichlet(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m] + self.dims[m]
    }

    pub fn neumann(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m] + self.dims[m]..self.offsets[m + 1]
    }

    /// Both components of scatterer `m`.
    pub fn block(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m + 1]
    }
}

//! The multiple-scattering PMCHWT system.
//!
//! Unknowns per scatterer are the scattered-field traces
//! `u = (gamma_D E, (k_e/mu_e) gamma_N E)`, the first in RWG and the second
//! in BC coefficients. Test functions are the same pairs, paired by
//! `P((c, d), (e, f)) = <c, f> + <d, e>`, so the weak form of the 2x2 operator
//! `[[C, (mu/k) S], [-(k/mu) S, C]]` reads
//!
//! ```text
//! y_D = -(k/mu) S_rr x_D + C_rb x_N
//! y_N =         C_br x_D + (mu/k) S_bb x_N
//! ```
//!
//! and the weak identity is `[[0, -T^T], [T, 0]]` with `T_ij = <RWG_j, BC_i>`.
//! Every dense sub-block product counts as one matvec, so one application
//! of the full operator costs `4M(M+1)` and of its block diagonal `8M`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVectorView, DVectorViewMut, Dyn, LU};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{BemError, Result};
use crate::mesh::{Point, Scene};
use crate::operators::{assemble_cross_blocks, assemble_self_blocks, l2_gram, twisted_gram, Medium, OperatorBlocks};
use crate::quadrature::{gauss_rule, QuadratureOptions};
use crate::spaces::{ProductLayout, SurfaceSpaces};

pub type CMatrix = DMatrix<Complex64>;

/// Mass blocks whose pivot-ratio condition estimate exceeds this are rejected.
pub const MASS_CONDITION_LIMIT: f64 = 1e12;

/// Plane wave `E = p exp(i k_e d.x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidentWave {
    pub polarization: Point,
    pub direction: Point,
}

impl IncidentWave {
    pub fn new(polarization: Point, direction: Point) -> Result<Self> {
        let w = Self { polarization, direction };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.direction.norm() - 1.0).abs() > 1e-12 {
            return Err(BemError::InvalidParameter("incident direction must be a unit vector".into()));
        }
        if self.polarization.dot(&self.direction).abs() > 1e-12 {
            return Err(BemError::InvalidParameter("polarization must be orthogonal to the direction".into()));
        }
        Ok(())
    }

    /// Electric field at `x` for exterior wavenumber `k`.
    pub fn field(&self, x: &Point, k: Complex64) -> [Complex64; 3] {
        let phase = (Complex64::i() * k * self.direction.dot(x)).exp();
        [phase * self.polarization.x, phase * self.polarization.y, phase * self.polarization.z]
    }
}

/// Physical setup of one scattering problem.
#[derive(Debug, Clone)]
pub struct ScatteringConfig {
    pub exterior: Medium,
    /// One medium per scatterer, in scene order.
    pub interiors: Vec<Medium>,
    pub scene: Scene,
    pub tolerance: f64,
    pub restart: usize,
    pub quadrature: QuadratureOptions,
}

impl ScatteringConfig {
    /// All scatterers share the refractive index `n`; `mu = 1` everywhere.
    pub fn uniform(scene: Scene, ke: f64, n: Complex64) -> Result<Self> {
        let exterior = Medium::new(Complex64::new(ke, 0.0), 1.0)?;
        let interior = Medium::from_index(n, ke, 1.0)?;
        let cfg = Self {
            exterior,
            interiors: vec![interior; scene.len()],
            scene,
            tolerance: 1e-5,
            restart: 20,
            quadrature: QuadratureOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.exterior.validate()?;
        if self.scene.is_empty() {
            return Err(BemError::InvalidParameter("at least one scatterer is required".into()));
        }
        if self.interiors.len() != self.scene.len() {
            return Err(BemError::InvalidParameter(format!(
                "{} interior media for {} scatterers",
                self.interiors.len(),
                self.scene.len()
            )));
        }
        for m in &self.interiors {
            m.validate()?;
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(BemError::InvalidParameter("GMRES tolerance must lie in (0, 1)".into()));
        }
        if self.restart == 0 {
            return Err(BemError::InvalidParameter("GMRES restart length must be at least 1".into()));
        }
        Ok(())
    }
}

/// LU factors of one scatterer's twisted Gram matrix `T` and of `T^T`.
#[derive(Debug, Clone)]
pub struct MassFactor {
    t: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    lu_t: LU<f64, Dyn, Dyn>,
    condition: f64,
}

fn pivot_ratio(lu: &LU<f64, Dyn, Dyn>) -> f64 {
    let u = lu.u();
    let d = u.diagonal().map(f64::abs);
    let min = d.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        d.max() / min
    }
}

fn solve_complex(lu: &LU<f64, Dyn, Dyn>, b: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    let mut rhs = DMatrix::<f64>::from_fn(n, 2, |i, j| if j == 0 { b[i].re } else { b[i].im });
    let ok = lu.solve_mut(&mut rhs);
    debug_assert!(ok, "mass factor checked at construction");
    (0..n).map(|i| Complex64::new(rhs[(i, 0)], rhs[(i, 1)])).collect()
}

impl MassFactor {
    pub fn new(t: DMatrix<f64>, scatterer: usize) -> Result<Self> {
        let lu = LU::new(t.clone());
        let condition = pivot_ratio(&lu);
        if !(condition <= MASS_CONDITION_LIMIT) {
            return Err(BemError::SingularMass { scatterer, condition });
        }
        let lu_t = LU::new(t.transpose());
        Ok(Self { t, lu, lu_t, condition })
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Pivot-ratio condition estimate of `T`.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    /// `y = I_w x`: `y_D = -T^T x_N`, `y_N = T x_D`.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let n = self.dim();
        let (xd, xn) = x.split_at(n);
        let (yd, yn) = y.split_at_mut(n);
        for i in 0..n {
            let mut a = Complex64::default();
            let mut b = Complex64::default();
            for j in 0..n {
                a -= xn[j] * self.t[(j, i)];
                b += xd[j] * self.t[(i, j)];
            }
            yd[i] = a;
            yn[i] = b;
        }
    }

    /// `x = I_w^{-1} y`: `x_D = T^{-1} y_N`, `x_N = -T^{-T} y_D`.
    pub fn solve(&self, y: &[Complex64], x: &mut [Complex64]) {
        let n = self.dim();
        let (yd, yn) = y.split_at(n);
        let xd = solve_complex(&self.lu, yn);
        let xn = solve_complex(&self.lu_t, yd);
        for i in 0..n {
            x[i] = xd[i];
            x[n + i] = -xn[i];
        }
    }

    /// `T^{-1}` applied to every column of `b`.
    pub fn solve_t(&self, b: &CMatrix) -> CMatrix {
        self.solve_columns(&self.lu, b)
    }

    /// `T^{-T}` applied to every column of `b`.
    pub fn solve_tt(&self, b: &CMatrix) -> CMatrix {
        self.solve_columns(&self.lu_t, b)
    }

    fn solve_columns(&self, lu: &LU<f64, Dyn, Dyn>, b: &CMatrix) -> CMatrix {
        let (n, m) = b.shape();
        let mut rhs = DMatrix::<f64>::from_fn(n, 2 * m, |i, j| if j < m { b[(i, j)].re } else { b[(i, j - m)].im });
        lu.solve_mut(&mut rhs);
        CMatrix::from_fn(n, m, |i, j| Complex64::new(rhs[(i, j)], rhs[(i, j + m)]))
    }
}

/// `y += alpha * A x` or `y += alpha * A^T x`.
fn gemv(y: &mut [Complex64], alpha: Complex64, a: &CMatrix, x: &[Complex64], transpose: bool) {
    let xv = DVectorView::from_slice(x, x.len());
    let mut yv = DVectorViewMut::from_slice(y, y.len());
    let one = Complex64::new(1.0, 0.0);
    if transpose {
        yv.gemv_tr(alpha, a, &xv, one);
    } else {
        yv.gemv(alpha, a, &xv, one);
    }
}

/// The assembled operators of one scattering configuration.
#[derive(Debug)]
pub struct BlockSystem {
    layout: ProductLayout,
    exterior: Medium,
    interiors: Vec<Medium>,
    surfaces: Vec<SurfaceSpaces>,
    /// `(exterior, interior)` self blocks per scatterer.
    self_blocks: Vec<(OperatorBlocks, OperatorBlocks)>,
    /// Exterior interaction blocks `(m, l)` for `m < l`; `(l, m)` uses transposes.
    cross: Vec<((usize, usize), OperatorBlocks)>,
    masses: Vec<MassFactor>,
    matvecs: AtomicU64,
}

/// Which blocks an application uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorPart {
    /// Full PMCHWT operator.
    Full,
    /// Self-interaction blocks only (`A^e_m + A^i_m`).
    Diagonal,
    /// Interior operators only.
    Interior,
}

impl BlockSystem {
    pub fn assemble(config: &ScatteringConfig) -> Result<Self> {
        config.validate()?;
        let opts = &config.quadrature;
        let surfaces: Vec<SurfaceSpaces> = config
            .scene
            .meshes()
            .iter()
            .map(|m| SurfaceSpaces::new(m.clone()))
            .collect::<Result<_>>()?;
        let layout = ProductLayout::new(surfaces.iter().map(SurfaceSpaces::dim).collect());
        let ke = config.exterior.k;
        let mut self_blocks = Vec::with_capacity(surfaces.len());
        for (m, s) in surfaces.iter().enumerate() {
            let mut b = assemble_self_blocks(s, &[ke, config.interiors[m].k], opts)
                .map_err(|e| relabel(e, m, m))?;
            let interior = b.pop().expect("two wavenumbers");
            let exterior = b.pop().expect("two wavenumbers");
            self_blocks.push((exterior, interior));
        }
        let mut cross = Vec::new();
        for m in 0..surfaces.len() {
            for l in m + 1..surfaces.len() {
                let (blocks, _) =
                    assemble_cross_blocks(&surfaces[m], &surfaces[l], ke, opts).map_err(|e| relabel(e, m, l))?;
                cross.push(((m, l), blocks));
            }
        }
        let masses = surfaces
            .par_iter()
            .enumerate()
            .map(|(m, s)| MassFactor::new(twisted_gram(s), m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout,
            exterior: config.exterior,
            interiors: config.interiors.clone(),
            surfaces,
            self_blocks,
            cross,
            masses,
            matvecs: AtomicU64::new(0),
        })
    }

    pub fn layout(&self) -> &ProductLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn scatterers(&self) -> usize {
        self.surfaces.len()
    }

    pub fn surfaces(&self) -> &[SurfaceSpaces] {
        &self.surfaces
    }

    pub fn exterior(&self) -> Medium {
        self.exterior
    }

    pub fn interior(&self, m: usize) -> Medium {
        self.interiors[m]
    }

    pub fn mass(&self, m: usize) -> &MassFactor {
        &self.masses[m]
    }

    /// `(exterior, interior)` self blocks of scatterer `m`.
    pub fn self_blocks(&self, m: usize) -> &(OperatorBlocks, OperatorBlocks) {
        &self.self_blocks[m]
    }

    /// Exterior blocks for target `m` and source `l != m`, and whether they
    /// must be applied transposed.
    pub fn cross_blocks(&self, m: usize, l: usize) -> Option<(&OperatorBlocks, bool)> {
        self.cross.iter().find_map(|((a, b), blk)| {
            if (*a, *b) == (m, l) {
                Some((blk, false))
            } else if (*a, *b) == (l, m) {
                Some((blk, true))
            } else {
                None
            }
        })
    }

    /// Total number of dense sub-block products performed so far.
    pub fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    pub fn reset_matvec_count(&self) {
        self.matvecs.store(0, Ordering::Relaxed);
    }

    /// Total bytes held in assembled blocks.
    /// Memory taken by the operator blocks and mass factors of a system whose
    /// surfaces have the given edge counts, without assembling it.
    pub fn predicted_bytes(edge_counts: &[usize]) -> usize {
        let c = std::mem::size_of::<Complex64>();
        let r = std::mem::size_of::<f64>();
        let own: usize = edge_counts.iter().map(|&n| 2 * 4 * n * n * c + 3 * n * n * r).sum();
        let mut cross = 0;
        for (i, &n) in edge_counts.iter().enumerate() {
            for &l in &edge_counts[i + 1..] {
                cross += 4 * n * l * c;
            }
        }
        own + cross
    }

    pub fn block_bytes(&self) -> usize {
        self.self_blocks.iter().map(|(a, b)| a.bytes() + b.bytes()).sum::<usize>()
            + self.cross.iter().map(|(_, b)| b.bytes()).sum::<usize>()
    }

    /// `y += A_blk x` for one 2x2 block with medium `medium`.
    fn apply_block(
        &self,
        blk: &OperatorBlocks,
        transpose: bool,
        medium: &Medium,
        x: (&[Complex64], &[Complex64]),
        y: (&mut [Complex64], &mut [Complex64]),
        counted: bool,
    ) {
        let (xd, xn) = x;
        let (yd, yn) = y;
        let ratio = medium.k / medium.mu;
        let one = Complex64::new(1.0, 0.0);
        // A transposed (m,l) block: S_rr^T, S_bb^T, and C_rb <-> C_br^T.
        let (crb, cbr) = if transpose { (&blk.c_br, &blk.c_rb) } else { (&blk.c_rb, &blk.c_br) };
        gemv(yd, -ratio, &blk.s_rr, xd, transpose);
        gemv(yd, one, crb, xn, transpose);
        gemv(yn, one, cbr, xd, transpose);
        gemv(yn, one / ratio, &blk.s_bb, xn, transpose);
        if counted {
            self.matvecs.fetch_add(4, Ordering::Relaxed);
        }
    }

    fn apply_part(&self, part: OperatorPart, x: &[Complex64], counted: bool) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dim(), "vector length must match the system");
        let mut y = vec![Complex64::default(); x.len()];
        let l = &self.layout;
        for m in 0..self.scatterers() {
            let (yd_r, yn_r) = (l.dirichlet(m), l.neumann(m));
            let mut yd = vec![Complex64::default(); yd_r.len()];
            let mut yn = vec![Complex64::default(); yn_r.len()];
            let xm = (&x[l.dirichlet(m)], &x[l.neumann(m)]);
            let (ext, int) = &self.self_blocks[m];
            if part != OperatorPart::Interior {
                self.apply_block(ext, false, &self.exterior, xm, (&mut yd, &mut yn), counted);
            }
            self.apply_block(int, false, &self.interiors[m], xm, (&mut yd, &mut yn), counted);
            if part == OperatorPart::Full {
                for src in 0..self.scatterers() {
                    if src == m {
                        continue;
                    }
                    let (blk, tr) = self.cross_blocks(m, src).expect("all pairs assembled");
                    let xs = (&x[l.dirichlet(src)], &x[l.neumann(src)]);
                    self.apply_block(blk, tr, &self.exterior, xs, (&mut yd, &mut yn), counted);
                }
            }
            y[yd_r].copy_from_slice(&yd);
            y[yn_r].copy_from_slice(&yn);
        }
        y
    }

    /// Weak PMCHWT operator `A x`; counts `4M(M+1)` matvecs.
    pub fn apply_a(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.apply_part(OperatorPart::Full, x, true)
    }

    /// Weak block-diagonal operator `D x`; counts `8M` matvecs.
    pub fn apply_d(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.apply_part(OperatorPart::Diagonal, x, true)
    }

    /// Weak interior operator `A^i x` (not counted; used for right-hand sides).
    pub fn apply_interior(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.apply_part(OperatorPart::Interior, x, false)
    }

    /// Weak identity `I_w x`.
    pub fn apply_mass(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::default(); x.len()];
        for m in 0..self.scatterers() {
            let r = self.layout.block(m);
            self.masses[m].apply(&x[r.clone()], &mut y[r]);
        }
        y
    }

    /// `I_w^{-1} y`, block by block.
    pub fn solve_mass(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut x = vec![Complex64::default(); y.len()];
        for m in 0..self.scatterers() {
            let r = self.layout.block(m);
            self.masses[m].solve(&y[r.clone()], &mut x[r]);
        }
        x
    }

    /// Twisted-pairing projection of the incident traces onto the test space,
    /// `f_i = P(u_inc, phi_i)`.
    pub fn incident_projection(&self, wave: &IncidentWave) -> Result<Vec<Complex64>> {
        wave.validate()?;
        let ke = self.exterior.k;
        let scale_n = ke / self.exterior.mu;
        let mut f = vec![Complex64::default(); self.dim()];
        let trace = |x: &Point, n: &Point| {
            let phase = (Complex64::i() * ke * wave.direction.dot(x)).exp();
            let d = wave.polarization.cross(n);
            let nn = wave.direction.cross(&wave.polarization).cross(n);
            (phase, d, nn)
        };
        for (m, s) in self.surfaces.iter().enumerate() {
            let (rd, rn) = (self.layout.dirichlet(m), self.layout.neumann(m));
            // D rows: <u_N, RWG_i> = int u_N . (n x RWG_i) on the primal mesh.
            let rule = gauss_rule(6)?;
            for t in 0..s.mesh.triangle_count() {
                let n = s.mesh.normals()[t];
                for (x, w) in rule.map(&s.mesh.corners(t)) {
                    let (phase, _, nn) = trace(&x, &n);
                    for p in s.rwg.pieces(t) {
                        f[rd.start + p.dof] += scale_n * phase * (w * nn.dot(&n.cross(&p.value(&x))));
                    }
                }
            }
            // N rows: <u_D, BC_i> on the refinement.
            let rm = &s.refinement.mesh;
            let rule = gauss_rule(4)?;
            for t in 0..rm.triangle_count() {
                let n = rm.normals()[t];
                for (x, w) in rule.map(&rm.corners(t)) {
                    let (phase, d, _) = trace(&x, &n);
                    for p in s.bc.pieces(t) {
                        f[rn.start + p.dof] += phase * (w * d.dot(&n.cross(&p.value(&x))));
                    }
                }
            }
        }
        Ok(f)
    }

    /// Right-hand side `b = (1/2) f - A^i_w I_w^{-1} f` and the incident
    /// coefficients `c_inc = I_w^{-1} f`.
    pub fn assemble_rhs(&self, wave: &IncidentWave) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let f = self.incident_projection(wave)?;
        let c_inc = self.solve_mass(&f);
        let ai = self.apply_interior(&c_inc);
        let b = f.iter().zip(&ai).map(|(f, a)| 0.5 * f - a).collect();
        Ok((b, c_inc))
    }

    /// Dense weak 2x2 block of one scatterer (interior or exterior medium),
    /// optionally with only the `S` or only the `C` entries.
    pub fn dense_self_block(&self, m: usize, interior: bool, keep_s: bool, keep_c: bool) -> CMatrix {
        let (ext, int) = &self.self_blocks[m];
        let (blk, medium) = if interior { (int, &self.interiors[m]) } else { (ext, &self.exterior) };
        let n = blk.rows();
        let ratio = medium.k / medium.mu;
        let mut a = CMatrix::zeros(2 * n, 2 * n);
        if keep_s {
            a.view_mut((0, 0), (n, n)).copy_from(&(&blk.s_rr * -ratio));
            a.view_mut((n, n), (n, n)).copy_from(&(&blk.s_bb / ratio));
        }
        if keep_c {
            a.view_mut((0, n), (n, n)).copy_from(&blk.c_rb);
            a.view_mut((n, 0), (n, n)).copy_from(&blk.c_br);
        }
        a
    }

    /// Strong form `I_w^{-1} W` of a dense weak block of scatterer `m`.
    pub fn strong(&self, m: usize, weak: &CMatrix) -> CMatrix {
        let n = self.layout.dim(m);
        let mass = &self.masses[m];
        let top = mass.solve_t(&weak.rows(n, n).into_owned());
        let bottom = -mass.solve_tt(&weak.rows(0, n).into_owned());
        let mut out = CMatrix::zeros(2 * n, 2 * n);
        out.rows_mut(0, n).copy_from(&top);
        out.rows_mut(n, n).copy_from(&bottom);
        out
    }
}

fn relabel(e: BemError, m: usize, l: usize) -> BemError {
    match e {
        BemError::Assembly(_, _) => BemError::Assembly(m, l),
        other => other,
    }
}

/// Calderon diagnostics of one scatterer's interior operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalderonDiagnostics {
    /// `||P^2 - P|| / ||P||` with `P = I/2 + strong(A^i)`.
    pub projector_residual: f64,
    /// Median of `|lambda + 1/4|` over the eigenvalues of `strong(S)^2`.
    pub s_squared_median_distance: f64,
    /// `||sC sS + sS sC|| / (||sC|| ||sS||)`.
    pub anticommutator: f64,
}

/// Computes all Calderon diagnostics of scatterer `m` from dense strong forms.
pub fn calderon_diagnostics(system: &BlockSystem, m: usize) -> Result<CalderonDiagnostics> {
    let metric = L2Metric::new(&system.surfaces()[m])?;
    let a = system.strong(m, &system.dense_self_block(m, true, true, true));
    let n2 = a.nrows();
    let p = &a + CMatrix::identity(n2, n2) * Complex64::new(0.5, 0.0);
    let projector_residual = metric.norm(&(&p * &p - &p)) / metric.norm(&p);

    let s_strong = system.strong(m, &system.dense_self_block(m, true, true, false));
    let c_strong = system.strong(m, &system.dense_self_block(m, true, false, true));
    let anti = &c_strong * &s_strong + &s_strong * &c_strong;
    let anticommutator = metric.norm(&anti) / (metric.norm(&c_strong) * metric.norm(&s_strong));

    // strong(S)^2 on the Dirichlet space: -T^{-1} S_bb T^{-T} S_rr.
    let (_, int) = system.self_blocks(m);
    let mass = system.mass(m);
    let s2 = -mass.solve_t(&(&int.s_bb * mass.solve_tt(&int.s_rr)));
    let eig = s2
        .clone()
        .schur()
        .eigenvalues()
        .ok_or_else(|| BemError::InvalidParameter("eigenvalue computation did not converge".into()))?;
    let mut dist: Vec<f64> = eig.iter().map(|l| (l + 0.25).norm()).collect();
    dist.sort_by(|a, b| a.total_cmp(b));
    let s_squared_median_distance = dist[dist.len() / 2];
    Ok(CalderonDiagnostics { projector_residual, s_squared_median_distance, anticommutator })
}

/// Frobenius norm of a strong-form matrix as an operator on `L^2`: with the
/// block Gram matrix `G = L L^T` of (RWG, BC) it is `||L^T X L^{-T}||_F`,
/// which does not depend on how the basis functions are normalised.
struct L2Metric {
    l: CMatrix,
}

impl L2Metric {
    fn new(surface: &SurfaceSpaces) -> Result<Self> {
        let gr = l2_gram(&surface.mesh, &surface.rwg)?;
        let gb = l2_gram(&surface.refinement.mesh, &surface.bc)?;
        let n = gr.nrows();
        let mut g = DMatrix::<f64>::zeros(2 * n, 2 * n);
        g.view_mut((0, 0), (n, n)).copy_from(&gr);
        g.view_mut((n, n), (n, n)).copy_from(&gb);
        let chol = g
            .cholesky()
            .ok_or_else(|| BemError::InvalidParameter("L2 Gram matrix is not positive definite".into()))?;
        Ok(Self { l: chol.l().map(Complex64::from) })
    }

    fn norm(&self, x: &CMatrix) -> f64 {
        let y = self.l.transpose() * x;
        let z = self.l.solve_lower_triangular(&y.transpose()).expect("Cholesky factor is nonsingular");
        z.norm()
    }
}

/// `||P^2 - P|| / ||P||` for a single-scatterer configuration.
pub fn calderon_residual(config: &ScatteringConfig) -> Result<f64> {
    if config.scene.len() != 1 {
        return Err(BemError::InvalidParameter("Calderon residual needs exactly one scatterer".into()));
    }
    let system = BlockSystem::assemble(config)?;
    Ok(calderon_diagnostics(&system, 0)?.projector_residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cube_with_divisions, generate_icosphere};

    fn sphere_config(freq: usize, ke: f64) -> ScatteringConfig {
        let scene = Scene::single(generate_icosphere(1.0, freq).unwrap());
        ScatteringConfig::uniform(scene, ke, Complex64::new(1.311, 0.05)).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = sphere_config(1, 1.0);
        c.tolerance = 0.0;
        assert!(c.validate().is_err());
        let mut c = sphere_config(1, 1.0);
        c.interiors.push(c.interiors[0]);
        assert!(c.validate().is_err());
        assert!(IncidentWave::new(Point::new(1.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)).is_err());
        assert!(IncidentWave::new(Point::new(1.0, 0.0, 0.0), Point::new(0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn single_scatterer_dimensions_and_counts() {
        let cfg = ScatteringConfig::uniform(
            Scene::single(generate_cube_with_divisions(1.0, 1).unwrap()),
            1.0,
            Complex64::new(1.311, 0.0),
        )
        .unwrap();
        let sys = BlockSystem::assemble(&cfg).unwrap();
        assert_eq!(sys.dim(), 36);
        let x: Vec<Complex64> = (0..36).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let a = sys.apply_a(&x);
        assert_eq!(sys.matvec_count(), 8);
        let d = sys.apply_d(&x);
        assert_eq!(sys.matvec_count(), 16);
        assert_eq!(a, d);
        sys.apply_interior(&x);
        assert_eq!(sys.matvec_count(), 16);
    }

    #[test]
    fn predicted_bytes_covers_blocks() {
        let a = generate_icosphere(1.0, 1).unwrap();
        let b = a.translated(&Point::new(5.0, 0.0, 0.0));
        let cfg = ScatteringConfig::uniform(Scene::new(vec![a, b]).unwrap(), 1.0, Complex64::new(1.2, 0.0)).unwrap();
        let sys = BlockSystem::assemble(&cfg).unwrap();
        let masses = 2 * 3 * 30 * 30 * std::mem::size_of::<f64>();
        assert_eq!(BlockSystem::predicted_bytes(&[30, 30]), sys.block_bytes() + masses);
    }

    #[test]
    fn corrupted_bc_is_rejected() {
        let mut s = SurfaceSpaces::new(generate_icosphere(1.0, 2).unwrap()).unwrap();
        s.bc.scale_dof(3, 0.0);
        assert!(matches!(
            MassFactor::new(twisted_gram(&s), 0),
            Err(BemError::SingularMass { scatterer: 0, .. })
        ));
    }

    #[test]
    fn mass_solve_inverts_apply() {
        let sys = BlockSystem::assemble(&sphere_config(2, 1.0)).unwrap();
        let x: Vec<Complex64> = (0..sys.dim()).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let y = sys.apply_mass(&x);
        let z = sys.solve_mass(&y);
        let err: f64 = x.iter().zip(&z).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-10);
        assert!(sys.mass(0).condition_estimate() < 1e3);
    }

    #[test]
    fn zero_polarization_gives_zero_rhs() {
        let sys = BlockSystem::assemble(&sphere_config(1, 1.0)).unwrap();
        let w = IncidentWave { polarization: Point::zeros(), direction: Point::new(0.0, 0.0, 1.0) };
        let (b, _) = sys.assemble_rhs(&w).unwrap();
        assert!(b.iter().all(|z| *z == Complex64::default()));
    }

    #[test]
    fn two_spheres_off_diagonal_blocks_are_small() {
        let a = generate_icosphere(0.5, 2).unwrap();
        let b = a.translated(&Point::new(20.0, 0.0, 0.0));
        let scene = Scene::new(vec![a, b]).unwrap();
        let cfg = ScatteringConfig::uniform(scene, 1.0, Complex64::new(1.311, 0.0)).unwrap();
        let sys = BlockSystem::assemble(&cfg).unwrap();
        let (blk, tr) = sys.cross_blocks(1, 0).unwrap();
        assert!(tr);
        let (ext, _) = sys.self_blocks(0);
        assert!(blk.s_rr.norm() < 0.05 * ext.s_rr.norm());
        assert!(blk.c_rb.norm() < 0.05 * ext.c_rb.norm());
    }

    #[test]
    fn calderon_identities_hold_approximately() {
        let sys = BlockSystem::assemble(&sphere_config(2, 2.0)).unwrap();
        let d = calderon_diagnostics(&sys, 0).unwrap();
        assert!(d.projector_residual < 0.2, "{d:?}");
        assert!(d.anticommutator < 0.2, "{d:?}");
        assert!(d.s_squared_median_distance < 0.1, "{d:?}");
    }
}

//! Dense Galerkin assembly.
//!
//! For a pair of triangles every basis piece is affine, `f(r) = beta r - q`,
//! so the pair's contribution to all its basis combinations follows from a
//! handful of kernel moments:
//!
//! ```text
//! S0 = sum w G          Sx = sum w G x        Sy = sum w G y     Sxy = sum w G x.y
//! Tg = sum w grad_x G   Tgy = sum w grad_x G x y
//! ```
//!
//! Coordinates are shifted to the test triangle's centroid first, which
//! keeps `q` small and avoids cancellation far from the origin.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{green_and_radial, CVec3};
use crate::error::{BemError, Result};
use crate::mesh::{Point, TriangleMesh};
use crate::quadrature::{
    classify, gauss_rule, singular_orderings, singular_rule, ss_map, Adjacency, QuadratureOptions,
    SingularCase,
};
use crate::spaces::{FunctionSpace, Piece, SurfaceSpaces};

pub type CMatrix = DMatrix<Complex64>;

/// The four Galerkin blocks of `S` and `C` between two surfaces for one
/// wavenumber. `r` is the RWG space, `b` the Buffa-Christiansen space; the
/// first letter names the test space, the second the trial space.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorBlocks {
    pub s_rr: CMatrix,
    pub s_bb: CMatrix,
    pub c_rb: CMatrix,
    pub c_br: CMatrix,
}

impl OperatorBlocks {
    /// Blocks of the reverse interaction, by symmetry of both bilinear forms.
    pub fn transposed(&self) -> Self {
        Self {
            s_rr: self.s_rr.transpose(),
            s_bb: self.s_bb.transpose(),
            c_rb: self.c_br.transpose(),
            c_br: self.c_rb.transpose(),
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.s_rr, &self.s_bb, &self.c_rb, &self.c_br]
            .iter()
            .all(|m| m.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    pub fn rows(&self) -> usize {
        self.s_rr.nrows()
    }

    pub fn cols(&self) -> usize {
        self.s_rr.ncols()
    }

    /// Heap size of the four matrices in bytes.
    pub fn bytes(&self) -> usize {
        4 * self.rows() * self.cols() * std::mem::size_of::<Complex64>()
    }
}

struct Element {
    corners: [Point; 3],
    vertices: [usize; 3],
    centroid: Point,
    diameter: f64,
}

/// Elements of one support mesh with their quadrature points for every
/// regular order the options may ask for.
struct Patch {
    elements: Vec<Element>,
    rules: Vec<(usize, Vec<Vec<(Point, f64)>>)>,
}

impl Patch {
    fn new(mesh: &TriangleMesh, opts: &QuadratureOptions) -> Result<Self> {
        let elements: Vec<Element> = (0..mesh.triangle_count())
            .map(|t| {
                let c = mesh.corners(t);
                Element {
                    corners: c,
                    vertices: mesh.triangles()[t],
                    centroid: (c[0] + c[1] + c[2]) / 3.0,
                    diameter: (c[0] - c[1]).norm().max((c[1] - c[2]).norm()).max((c[2] - c[0]).norm()),
                }
            })
            .collect();
        let mut orders = vec![opts.near_order, opts.regular_order, opts.far_order];
        orders.sort_unstable();
        orders.dedup();
        let mut rules = Vec::new();
        for order in orders {
            let rule = gauss_rule(order)?;
            rules.push((order, elements.iter().map(|e| rule.map(&e.corners).collect()).collect()));
        }
        Ok(Self { elements, rules })
    }

    fn points(&self, t: usize, order: usize) -> &[(Point, f64)] {
        let (_, pts) = self
            .rules
            .iter()
            .find(|(o, _)| *o == order)
            .expect("rule precomputed for every configured order");
        &pts[t]
    }

    fn len(&self) -> usize {
        self.elements.len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    s0: Complex64,
    sx: CVec3,
    sy: CVec3,
    sxy: Complex64,
    tg: CVec3,
    tgy: CVec3,
}

/// Up to two wavenumbers are integrated in one pass.
const MAX_K: usize = 2;

fn regular_moments(
    xs: &[(Point, f64)],
    ys: &[(Point, f64)],
    origin: &Point,
    ks: &[Complex64],
    with_c: bool,
    out: &mut [Moments; MAX_K],
) {
    *out = Default::default();
    for &(x, wx) in xs {
        let xp = x - origin;
        let mut a0 = [Complex64::default(); MAX_K];
        let mut ay = [CVec3::default(); MAX_K];
        let mut tg = [CVec3::default(); MAX_K];
        let mut tgy = [CVec3::default(); MAX_K];
        for &(y, wy) in ys {
            let yp = y - origin;
            let d = xp - yp;
            let r = d.norm();
            let xy = xp.cross(&yp);
            for (n, &k) in ks.iter().enumerate() {
                let (g, h) = green_and_radial(r, k);
                let gw = g * wy;
                a0[n] += gw;
                ay[n].add_scaled(gw, &yp);
                if with_c {
                    let hw = h * wy;
                    tg[n].add_scaled(hw, &d);
                    tgy[n].add_scaled(hw, &xy);
                }
            }
        }
        for n in 0..ks.len() {
            let m = &mut out[n];
            m.s0 += a0[n] * wx;
            m.sx.add_scaled(a0[n] * wx, &xp);
            m.sy.add(&ay[n], wx);
            m.sxy += ay[n].dot(&xp) * wx;
            if with_c {
                m.tg.add(&tg[n], wx);
                m.tgy.add(&tgy[n], wx);
            }
        }
    }
}

fn singular_moments(
    test: &Element,
    trial: &Element,
    adjacency: Adjacency,
    order: usize,
    origin: &Point,
    ks: &[Complex64],
    with_c: bool,
    out: &mut [Moments; MAX_K],
) {
    *out = Default::default();
    let (case, ot, os) = singular_orderings(adjacency).expect("touching pair");
    let rule = singular_rule(case, order);
    let a = ot.map(|i| test.corners[i] - origin);
    let b = os.map(|i| trial.corners[i] - origin);
    let jac = (a[1] - a[0]).cross(&(a[2] - a[0])).norm() * (b[1] - b[0]).cross(&(b[2] - b[0])).norm();
    // grad G is odd in x - y and tangential on a flat coincident pair, so C vanishes there.
    let with_c = with_c && case != SingularCase::Coincident;
    for q in 0..rule.len() {
        let x = ss_map(&a, &rule.test_points[q]);
        let y = ss_map(&b, &rule.trial_points[q]);
        let w = rule.weights[q] * jac;
        let d = x - y;
        let r = d.norm();
        let xy = x.cross(&y);
        for (n, &k) in ks.iter().enumerate() {
            let (g, h) = green_and_radial(r, k);
            let gw = g * w;
            let m = &mut out[n];
            m.s0 += gw;
            m.sx.add_scaled(gw, &x);
            m.sy.add_scaled(gw, &y);
            m.sxy += gw * x.dot(&y);
            if with_c {
                let hw = h * w;
                m.tg.add_scaled(hw, &d);
                m.tgy.add_scaled(hw, &xy);
            }
        }
    }
}

/// Basis piece in the shifted frame.
#[derive(Debug, Clone, Copy)]
struct Local {
    dof: usize,
    beta: f64,
    q: Point,
}

fn localize(pieces: &[Piece], origin: &Point, out: &mut Vec<Local>) {
    out.clear();
    out.extend(pieces.iter().map(|p| Local { dof: p.dof, beta: p.beta, q: p.q - p.beta * origin }));
}

/// Weak `S` entries for all (test, trial) combinations on one pair.
#[inline]
fn contract_s(m: &Moments, k: Complex64, test: &[Local], trial: &[Local], mut sink: impl FnMut(usize, usize, Complex64)) {
    let ik = Complex64::i() * k;
    let inv = 4.0 / ik;
    for a in test {
        let b_i = m.sy.dot(&a.q);
        for b in trial {
            let x = m.sxy * (a.beta * b.beta) - m.sx.dot(&b.q) * a.beta - b_i * b.beta + m.s0 * a.q.dot(&b.q);
            sink(a.dof, b.dof, -ik * x - inv * (a.beta * b.beta) * m.s0);
        }
    }
}

/// Weak `C` entries, `-(beta_I q_J - beta_J q_I) . Tgy - Tg . (q_J x q_I)`.
#[inline]
fn contract_c(m: &Moments, test: &[Local], trial: &[Local], mut sink: impl FnMut(usize, usize, Complex64)) {
    for a in test {
        let d_i = m.tgy.dot(&a.q);
        for b in trial {
            let z = m.tgy.dot(&b.q) * a.beta - d_i * b.beta + m.tg.cross(&b.q).dot(&a.q);
            sink(a.dof, b.dof, -z);
        }
    }
}

/// Moments of one element pair, choosing singular or regular rules.
fn pair_moments(
    test_patch: &Patch,
    t: usize,
    trial_patch: &Patch,
    s: usize,
    same_mesh: bool,
    ks: &[Complex64],
    with_c: bool,
    opts: &QuadratureOptions,
    out: &mut [Moments; MAX_K],
) {
    let (et, es) = (&test_patch.elements[t], &trial_patch.elements[s]);
    let origin = et.centroid;
    let adjacency = if same_mesh { classify(&et.vertices, &es.vertices) } else { Adjacency::Disjoint };
    if adjacency == Adjacency::Disjoint {
        let kmax = ks.iter().map(|k| k.norm()).fold(0.0, f64::max);
        let order =
            opts.regular_order_for((et.centroid - es.centroid).norm(), et.diameter.max(es.diameter), kmax);
        regular_moments(test_patch.points(t, order), trial_patch.points(s, order), &origin, ks, with_c, out);
    } else {
        singular_moments(et, es, adjacency, opts.singular_order, &origin, ks, with_c, out);
    }
}

/// Splits `0..n` into `parts` contiguous ranges of similar work for a loop
/// whose row `t` costs `n - t` (upper-triangular pair loop).
fn balanced_ranges(n: usize, parts: usize, triangular: bool) -> Vec<Range<usize>> {
    let parts = parts.max(1).min(n.max(1));
    let cost = |t: usize| if triangular { (n - t) as f64 } else { 1.0 };
    let total: f64 = (0..n).map(cost).sum();
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    let mut acc = 0.0;
    for t in 0..n {
        acc += cost(t);
        if acc >= total * (out.len() + 1) as f64 / parts as f64 && out.len() + 1 < parts {
            out.push(start..t + 1);
            start = t + 1;
        }
    }
    out.push(start..n);
    out
}

/// Runs `body` over ranges of test elements in parallel, each with its own
/// accumulator, and sums the accumulators in a fixed order so results do
/// not depend on scheduling.
fn parallel_accumulate<A, F>(n: usize, triangular: bool, init: impl Fn() -> A + Sync, body: F) -> A
where
    A: Send + std::ops::AddAssign,
    F: Fn(Range<usize>, &mut A) + Sync,
{
    let ranges = balanced_ranges(n, rayon::current_num_threads(), triangular);
    let parts: Vec<A> = ranges
        .into_par_iter()
        .map(|r| {
            let mut acc = init();
            body(r, &mut acc);
            acc
        })
        .collect();
    let mut it = parts.into_iter();
    let mut total = it.next().unwrap_or_else(&init);
    for p in it {
        total += p;
    }
    total
}

struct Mats(Vec<CMatrix>);

impl std::ops::AddAssign for Mats {
    fn add_assign(&mut self, o: Self) {
        for (a, b) in self.0.iter_mut().zip(o.0) {
            *a += b;
        }
    }
}

fn check_ks(ks: &[Complex64]) -> Result<()> {
    if ks.is_empty() || ks.len() > MAX_K {
        return Err(BemError::InvalidParameter(format!("between 1 and {MAX_K} wavenumbers per pass")));
    }
    Ok(())
}

/// `S_rr` between the RWG spaces of the primal meshes; symmetric half loop
/// when both are the same surface.
fn assemble_s_rr(
    test: &SurfaceSpaces,
    trial: &SurfaceSpaces,
    same: bool,
    ks: &[Complex64],
    opts: &QuadratureOptions,
) -> Result<Vec<CMatrix>> {
    let tp = Patch::new(&test.mesh, opts)?;
    let sp = if same { None } else { Some(Patch::new(&trial.mesh, opts)?) };
    let sp_ref = sp.as_ref().unwrap_or(&tp);
    let (nr, nc) = (test.dim(), trial.dim());
    let result = parallel_accumulate(
        tp.len(),
        same,
        || Mats(vec![CMatrix::zeros(nr, nc); ks.len()]),
        |range, acc| {
            let mut mom = [Moments::default(); MAX_K];
            let (mut lt, mut ls) = (Vec::new(), Vec::new());
            for t in range {
                let first = if same { t } else { 0 };
                for s in first..sp_ref.len() {
                    pair_moments(&tp, t, sp_ref, s, same, ks, false, opts, &mut mom);
                    let origin = tp.elements[t].centroid;
                    localize(test.rwg.pieces(t), &origin, &mut lt);
                    localize(trial.rwg.pieces(s), &origin, &mut ls);
                    for (n, &k) in ks.iter().enumerate() {
                        let m = &mut acc.0[n];
                        contract_s(&mom[n], k, &lt, &ls, |i, j, v| {
                            m[(i, j)] += v;
                            if same && s != t {
                                m[(j, i)] += v;
                            }
                        });
                    }
                }
            }
        },
    );
    Ok(result.0)
}

/// All four blocks of one surface with itself, for one or two wavenumbers
/// (typically the exterior and the interior medium) in a single pass.
pub fn assemble_self_blocks(
    surface: &SurfaceSpaces,
    ks: &[Complex64],
    opts: &QuadratureOptions,
) -> Result<Vec<OperatorBlocks>> {
    check_ks(ks)?;
    let s_rr = assemble_s_rr(surface, surface, true, ks, opts)?;
    let rp = Patch::new(&surface.refinement.mesh, opts)?;
    let n = surface.dim();
    let nk = ks.len();
    // Layout: [s_bb(k0), c_rb(k0), s_bb(k1), c_rb(k1)].
    let result = parallel_accumulate(
        rp.len(),
        true,
        || Mats(vec![CMatrix::zeros(n, n); 2 * nk]),
        |range, acc| {
            let mut mom = [Moments::default(); MAX_K];
            let (mut bt, mut bs, mut rt, mut rs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for t in range {
                let origin = rp.elements[t].centroid;
                localize(surface.bc.pieces(t), &origin, &mut bt);
                localize(surface.rwg_refined.pieces(t), &origin, &mut rt);
                for s in t..rp.len() {
                    pair_moments(&rp, t, &rp, s, true, ks, s != t, opts, &mut mom);
                    localize(surface.bc.pieces(s), &origin, &mut bs);
                    for (kn, &k) in ks.iter().enumerate() {
                        let sbb = &mut acc.0[2 * kn];
                        contract_s(&mom[kn], k, &bt, &bs, |i, j, v| {
                            sbb[(i, j)] += v;
                            if s != t {
                                sbb[(j, i)] += v;
                            }
                        });
                    }
                    if s == t {
                        continue;
                    }
                    localize(surface.rwg_refined.pieces(s), &origin, &mut rs);
                    for kn in 0..nk {
                        let crb = &mut acc.0[2 * kn + 1];
                        contract_c(&mom[kn], &rt, &bs, |i, j, v| crb[(i, j)] += v);
                        // Mirrored pair: RWG on s tested against BC on t.
                        contract_c(&mom[kn], &bt, &rs, |i, j, v| crb[(j, i)] += v);
                    }
                }
            }
        },
    );
    let mut mats = result.0.into_iter();
    let mut out = Vec::with_capacity(nk);
    for s_rr in s_rr {
        let s_bb = mats.next().expect("s_bb block");
        let c_rb = mats.next().expect("c_rb block");
        let c_br = c_rb.transpose();
        let blocks = OperatorBlocks { s_rr, s_bb, c_rb, c_br };
        if !blocks.is_finite() {
            return Err(BemError::Assembly(0, 0));
        }
        out.push(blocks);
    }
    Ok(out)
}

/// Interaction blocks between two distinct surfaces for one wavenumber:
/// returns `(blocks(test <- trial), blocks(trial <- test))`.
pub fn assemble_cross_blocks(
    test: &SurfaceSpaces,
    trial: &SurfaceSpaces,
    k: Complex64,
    opts: &QuadratureOptions,
) -> Result<(OperatorBlocks, OperatorBlocks)> {
    let ks = [k];
    let s_rr = assemble_s_rr(test, trial, false, &ks, opts)?.pop().expect("one wavenumber");
    let tp = Patch::new(&test.refinement.mesh, opts)?;
    let sp = Patch::new(&trial.refinement.mesh, opts)?;
    let (nr, nc) = (test.dim(), trial.dim());
    let result = parallel_accumulate(
        tp.len(),
        false,
        || Mats(vec![CMatrix::zeros(nr, nc); 3]),
        |range, acc| {
            let mut mom = [Moments::default(); MAX_K];
            let (mut bt, mut bs, mut rt, mut rs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for t in range {
                let origin = tp.elements[t].centroid;
                localize(test.bc.pieces(t), &origin, &mut bt);
                localize(test.rwg_refined.pieces(t), &origin, &mut rt);
                for s in 0..sp.len() {
                    pair_moments(&tp, t, &sp, s, false, &ks, true, opts, &mut mom);
                    localize(trial.bc.pieces(s), &origin, &mut bs);
                    localize(trial.rwg_refined.pieces(s), &origin, &mut rs);
                    let [sbb, crb, cbr] = &mut acc.0[..] else { unreachable!() };
                    contract_s(&mom[0], k, &bt, &bs, |i, j, v| sbb[(i, j)] += v);
                    contract_c(&mom[0], &rt, &bs, |i, j, v| crb[(i, j)] += v);
                    contract_c(&mom[0], &bt, &rs, |i, j, v| cbr[(i, j)] += v);
                }
            }
        },
    );
    let mut mats = result.0.into_iter();
    let blocks = OperatorBlocks {
        s_rr,
        s_bb: mats.next().expect("s_bb"),
        c_rb: mats.next().expect("c_rb"),
        c_br: mats.next().expect("c_br"),
    };
    if !blocks.is_finite() {
        return Err(BemError::Assembly(0, 1));
    }
    let reverse = blocks.transposed();
    Ok((blocks, reverse))
}

/// Generic full-loop assembly of one operator between arbitrary spaces.
/// Touching pairs are detected only when both spaces live on the same mesh
/// object.
fn assemble_generic(
    test: (&TriangleMesh, &FunctionSpace),
    trial: (&TriangleMesh, &FunctionSpace),
    k: Complex64,
    magnetic: bool,
    opts: &QuadratureOptions,
) -> Result<CMatrix> {
    let (tm, ts) = test;
    let (sm, ss) = trial;
    if ts.triangle_count() != tm.triangle_count() || ss.triangle_count() != sm.triangle_count() {
        return Err(BemError::SpaceMismatch);
    }
    let same = std::ptr::eq(tm, sm);
    let tp = Patch::new(tm, opts)?;
    let sp = if same { None } else { Some(Patch::new(sm, opts)?) };
    let sp = sp.as_ref().unwrap_or(&tp);
    let (nr, nc) = (ts.dim(), ss.dim());
    let ks = [k];
    let result = parallel_accumulate(
        tp.len(),
        false,
        || Mats(vec![CMatrix::zeros(nr, nc)]),
        |range, acc| {
            let mut mom = [Moments::default(); MAX_K];
            let (mut lt, mut ls) = (Vec::new(), Vec::new());
            for t in range {
                let origin = tp.elements[t].centroid;
                localize(ts.pieces(t), &origin, &mut lt);
                for s in 0..sp.len() {
                    pair_moments(&tp, t, sp, s, same, &ks, magnetic, opts, &mut mom);
                    localize(ss.pieces(s), &origin, &mut ls);
                    let m = &mut acc.0[0];
                    if magnetic {
                        if !(same && s == t) {
                            contract_c(&mom[0], &lt, &ls, |i, j, v| m[(i, j)] += v);
                        }
                    } else {
                        contract_s(&mom[0], k, &lt, &ls, |i, j, v| m[(i, j)] += v);
                    }
                }
            }
        },
    );
    let m = result.0.into_iter().next().expect("one matrix");
    if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(BemError::Assembly(0, 0));
    }
    Ok(m)
}

/// Weak electric operator: entry `(i, j) = <S trial_j, test_i>`.
pub fn assemble_s(
    test: (&TriangleMesh, &FunctionSpace),
    trial: (&TriangleMesh, &FunctionSpace),
    k: Complex64,
    opts: &QuadratureOptions,
) -> Result<CMatrix> {
    assemble_generic(test, trial, k, false, opts)
}

/// Weak principal-value magnetic operator: entry `(i, j) = <C trial_j, test_i>`.
pub fn assemble_c(
    test: (&TriangleMesh, &FunctionSpace),
    trial: (&TriangleMesh, &FunctionSpace),
    k: Complex64,
    opts: &QuadratureOptions,
) -> Result<CMatrix> {
    assemble_generic(test, trial, k, true, opts)
}

/// Twisted Gram matrix, entry `(i, j) = int trial_j . (n x test_i)`. Both
/// spaces must live on `mesh`; products of affine pieces are quadratic, so
/// the degree-2 rule is exact.
pub fn assemble_mass(mesh: &TriangleMesh, test: &FunctionSpace, trial: &FunctionSpace) -> Result<DMatrix<f64>> {
    if test.triangle_count() != mesh.triangle_count() || trial.triangle_count() != mesh.triangle_count() {
        return Err(BemError::SpaceMismatch);
    }
    let rule = gauss_rule(2)?;
    let mut g = DMatrix::zeros(test.dim(), trial.dim());
    for t in 0..mesh.triangle_count() {
        let normal = mesh.normals()[t];
        for (x, w) in rule.map(&mesh.corners(t)) {
            for pi in test.pieces(t) {
                let nb = normal.cross(&pi.value(&x));
                for pj in trial.pieces(t) {
                    g[(pi.dof, pj.dof)] += w * pj.value(&x).dot(&nb);
                }
            }
        }
    }
    Ok(g)
}

/// Plain `L^2` Gram matrix `G_ij = int f_i . f_j` of one space.
pub fn l2_gram(mesh: &TriangleMesh, space: &FunctionSpace) -> Result<DMatrix<f64>> {
    if space.triangle_count() != mesh.triangle_count() {
        return Err(BemError::SpaceMismatch);
    }
    let rule = gauss_rule(2)?;
    let mut g = DMatrix::zeros(space.dim(), space.dim());
    for t in 0..mesh.triangle_count() {
        for (x, w) in rule.map(&mesh.corners(t)) {
            for pi in space.pieces(t) {
                let fi = pi.value(&x);
                for pj in space.pieces(t) {
                    g[(pi.dof, pj.dof)] += w * pj.value(&x).dot(&fi);
                }
            }
        }
    }
    Ok(g)
}

/// `T_ij = <RWG_j, BC_i> = int RWG_j . (n x BC_i)`, the only nonzero block
/// of the twisted identity on one surface.
pub fn twisted_gram(surface: &SurfaceSpaces) -> DMatrix<f64> {
    assemble_mass(&surface.refinement.mesh, &surface.bc, &surface.rwg_refined)
        .expect("spaces of one surface share the refinement")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cube_with_divisions, generate_icosphere};

    fn k() -> Complex64 {
        Complex64::new(2.0, 0.3)
    }

    fn opts() -> QuadratureOptions {
        QuadratureOptions::default()
    }

    #[test]
    fn balanced_ranges_cover() {
        for (n, p) in [(10, 3), (1, 4), (100, 7), (0, 2)] {
            let r = balanced_ranges(n, p, true);
            assert_eq!(r.first().unwrap().start, 0);
            assert_eq!(r.last().unwrap().end, n);
            for w in r.windows(2) {
                assert_eq!(w[0].end, w[1].start);
            }
        }
    }

    #[test]
    fn well_separated_s_matches_pointwise_quadrature() {
        let a = SurfaceSpaces::new(generate_icosphere(0.5, 1).unwrap()).unwrap();
        let far = generate_icosphere(0.5, 1).unwrap().translated(&Point::new(6.0, 1.0, 0.0));
        let b = SurfaceSpaces::new(far).unwrap();
        let s = assemble_s((&a.mesh, &a.rwg), (&b.mesh, &b.rwg), k(), &opts()).unwrap();
        // Naive double loop with an order-4 rule, no moments.
        let rule = gauss_rule(4).unwrap();
        let (i, j) = (3, 11);
        let mut naive = Complex64::default();
        let ik = Complex64::i() * k();
        for t in 0..a.mesh.triangle_count() {
            for (x, wx) in rule.map(&a.mesh.corners(t)) {
                let Ok(v) = a.rwg.evaluate(i, t, &x) else { continue };
                let dv = a.rwg.divergence(i, t);
                for u_t in 0..b.mesh.triangle_count() {
                    for (y, wy) in rule.map(&b.mesh.corners(u_t)) {
                        let Ok(u) = b.rwg.evaluate(j, u_t, &y) else { continue };
                        let du = b.rwg.divergence(j, u_t);
                        let g = super::super::green(&x, &y, k()).unwrap();
                        naive += wx * wy * g * (-ik * v.dot(&u) - dv * du / ik);
                    }
                }
            }
        }
        let far_opts = QuadratureOptions::uniform(4, 4);
        let s4 = assemble_s((&a.mesh, &a.rwg), (&b.mesh, &b.rwg), k(), &far_opts).unwrap();
        assert!((s4[(i, j)] - naive).norm() < 1e-10 * naive.norm(), "{} vs {}", s4[(i, j)], naive);
        assert!((s[(i, j)] - naive).norm() < 1e-3 * naive.norm());
    }

    #[test]
    fn conjugate_wavenumber_gives_conjugate_matrix() {
        let a = SurfaceSpaces::new(generate_icosphere(1.0, 1).unwrap()).unwrap();
        let kr = Complex64::new(1.5, 0.0);
        let s1 = assemble_s((&a.mesh, &a.rwg), (&a.mesh, &a.rwg), kr, &opts()).unwrap();
        // For real k, S(conj k) = conj(S(k)) requires flipping the sign of k
        // since conj(exp(ikr)) = exp(-ikr) and the ik prefactors also flip.
        let s2 = assemble_s((&a.mesh, &a.rwg), (&a.mesh, &a.rwg), -kr, &opts()).unwrap();
        assert!((s1.map(|z| z.conj()) - s2).norm() < 1e-12 * s1.norm());
        let c1 = assemble_c((&a.mesh, &a.rwg), (&a.mesh, &a.rwg), kr, &opts()).unwrap();
        let c2 = assemble_c((&a.mesh, &a.rwg), (&a.mesh, &a.rwg), -kr, &opts()).unwrap();
        assert!((c1.map(|z| z.conj()) - c2).norm() < 1e-12 * c1.norm());
    }

    #[test]
    fn self_blocks_agree_with_generic_assembly() {
        // The two paths integrate mirrored touching pairs with differently oriented
        // singular rules, so they agree to quadrature accuracy only.
        let opts = || QuadratureOptions { singular_order: 6, ..QuadratureOptions::default() };
        let a = SurfaceSpaces::new(generate_cube_with_divisions(1.0, 2).unwrap()).unwrap();
        let km = Complex64::new(3.0, 0.5);
        let blocks = assemble_self_blocks(&a, &[k(), km], &opts()).unwrap();
        let rm = &a.refinement.mesh;
        for (n, &kk) in [k(), km].iter().enumerate() {
            let b = &blocks[n];
            let srr = assemble_s((&a.mesh, &a.rwg), (&a.mesh, &a.rwg), kk, &opts()).unwrap();
            let sbb = assemble_s((rm, &a.bc), (rm, &a.bc), kk, &opts()).unwrap();
            let crb = assemble_c((rm, &a.rwg_refined), (rm, &a.bc), kk, &opts()).unwrap();
            let cbr = assemble_c((rm, &a.bc), (rm, &a.rwg_refined), kk, &opts()).unwrap();
            for (name, x, y) in [("srr", &b.s_rr, &srr), ("sbb", &b.s_bb, &sbb), ("crb", &b.c_rb, &crb), ("cbr", &b.c_br, &cbr)] {
                let rel = (x - y).norm() / y.norm();
                assert!(rel < 1e-4, "{name}: relative difference {rel}");
            }
            // Symmetry of S.
            assert!((&b.s_rr - b.s_rr.transpose()).norm() < 1e-12 * b.s_rr.norm());
        }
    }

    #[test]
    fn cross_blocks_are_transpose_compatible() {
        let a = SurfaceSpaces::new(generate_cube_with_divisions(0.4, 2).unwrap()).unwrap();
        let b = SurfaceSpaces::new(
            generate_cube_with_divisions(0.4, 2).unwrap().translated(&Point::new(0.8, 0.1, 0.0)),
        )
        .unwrap();
        let (ab, ba) = assemble_cross_blocks(&a, &b, k(), &opts()).unwrap();
        let (ba2, _) = assemble_cross_blocks(&b, &a, k(), &opts()).unwrap();
        for (x, y) in [(&ba.s_rr, &ba2.s_rr), (&ba.s_bb, &ba2.s_bb), (&ba.c_rb, &ba2.c_rb), (&ba.c_br, &ba2.c_br)] {
            let rel = (x - y).norm() / y.norm();
            assert!(rel < 1e-6, "{rel}");
        }
        assert_eq!(ab.rows(), a.dim());
    }

    #[test]
    fn c_decays_with_separation() {
        let a = SurfaceSpaces::new(generate_icosphere(0.5, 1).unwrap()).unwrap();
        let kk = Complex64::new(2.0 * std::f64::consts::PI, 0.0);
        let far = SurfaceSpaces::new(generate_icosphere(0.5, 1).unwrap().translated(&Point::new(100.0, 0.0, 0.0))).unwrap();
        let self_c = assemble_self_blocks(&a, &[kk], &opts()).unwrap().remove(0).c_rb;
        let (cross, _) = assemble_cross_blocks(&a, &far, kk, &opts()).unwrap();
        let max = |m: &CMatrix| m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(max(&cross.c_rb) < 1e-2 * max(&self_c));
        assert!(max(&cross.c_rb) > 0.0);
    }

    #[test]
    fn mass_matrices() {
        let a = SurfaceSpaces::new(generate_icosphere(1.0, 1).unwrap()).unwrap();
        let rr = assemble_mass(&a.mesh, &a.rwg, &a.rwg).unwrap();
        assert!((&rr + rr.transpose()).amax() < 1e-12);
        assert!(rr.diagonal().amax() < 1e-12);
        let t = twisted_gram(&a);
        assert!(t.singular_values().min() > 1e-6);
        assert!(matches!(assemble_mass(&a.mesh, &a.bc, &a.rwg), Err(BemError::SpaceMismatch)));
    }
}

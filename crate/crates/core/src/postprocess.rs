//! Field reconstruction from solved traces.
//!
//! With `u = (u_D, u_N)` the scattered traces of scatterer `m`, the
//! exterior scattered field is
//! `E_s = -sum_m [H_e(u_D) + (mu_e/k_e) E_e(u_N)]`, and the interior field of
//! scatterer `m` is `E_m = H_m(v_D) + (mu_m/k_m) E_m(v_N)` with `v = u + u_inc`.
//! Far-field patterns strip `exp(i k_e r)/r` and keep the `1/(4 pi)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::mesh::Point;
use crate::operators::{far_field_e, far_field_h, potential_e, potential_h, CVector3, Density};
use crate::pmchwt::{BlockSystem, IncidentWave};
use crate::quadrature::gauss_legendre;
use crate::solver::{solve, FormulationKind, GmresOptions};

/// Points closer to a surface than this fraction of its diameter are masked.
pub const SURFACE_BAND: f64 = 1e-6;

/// Per-scatterer densities for field evaluation.
struct TraceDensities {
    dirichlet: Density,
    neumann: Density,
}

impl TraceDensities {
    fn new(system: &BlockSystem, m: usize, coeffs: &[Complex64]) -> Result<Self> {
        let s = &system.surfaces()[m];
        let l = system.layout();
        Ok(Self {
            dirichlet: Density::new(&s.mesh, &s.rwg, &coeffs[l.dirichlet(m)])?,
            neumann: Density::new(&s.refinement.mesh, &s.bc, &coeffs[l.neumann(m)])?,
        })
    }
}

/// Scattered and interior fields of one solved configuration.
pub struct FieldEvaluator<'a> {
    system: &'a BlockSystem,
    wave: IncidentWave,
    scattered: Vec<TraceDensities>,
    interior: Vec<TraceDensities>,
}

/// Where a sample point lies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Exterior,
    Interior(usize),
    /// Too close to a surface for reliable evaluation.
    Masked,
}

impl Region {
    /// Integer code used in exports: -1 exterior, -2 masked, `m` inside scatterer `m`.
    pub fn code(self) -> i64 {
        match self {
            Region::Exterior => -1,
            Region::Masked => -2,
            Region::Interior(m) => m as i64,
        }
    }
}

fn combine(a: Vec<CVector3>, b: Vec<CVector3>, scale_b: Complex64, sign: f64) -> Vec<CVector3> {
    a.into_iter().zip(b).map(|(a, b)| (a + b * scale_b) * Complex64::new(sign, 0.0)).collect()
}

impl<'a> FieldEvaluator<'a> {
    /// `solution` holds the scattered traces returned by the solver.
    pub fn new(system: &'a BlockSystem, wave: &IncidentWave, solution: &[Complex64]) -> Result<Self> {
        if solution.len() != system.dim() {
            return Err(BemError::SpaceMismatch);
        }
        let f = system.incident_projection(wave)?;
        let c_inc = system.solve_mass(&f);
        let total: Vec<Complex64> = solution.iter().zip(&c_inc).map(|(a, b)| a + b).collect();
        let mut scattered = Vec::new();
        let mut interior = Vec::new();
        for m in 0..system.scatterers() {
            scattered.push(TraceDensities::new(system, m, solution)?);
            interior.push(TraceDensities::new(system, m, &total)?);
        }
        Ok(Self { system, wave: *wave, scattered, interior })
    }

    pub fn wave(&self) -> &IncidentWave {
        &self.wave
    }

    /// Exterior representation of the scattered field. Inside a scatterer it
    /// should vanish, which makes it a useful diagnostic there.
    pub fn scattered(&self, points: &[Point]) -> Result<Vec<CVector3>> {
        let ext = self.system.exterior();
        let mut out = vec![CVector3::zeros(); points.len()];
        for d in &self.scattered {
            let h = potential_h(&d.dirichlet, ext.k, points)?;
            let e = potential_e(&d.neumann, ext.k, points)?;
            for (o, v) in out.iter_mut().zip(combine(h, e, ext.mu / ext.k, -1.0)) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Interior representation for scatterer `m`.
    pub fn interior(&self, m: usize, points: &[Point]) -> Result<Vec<CVector3>> {
        let med = self.system.interior(m);
        let d = &self.interior[m];
        let h = potential_h(&d.dirichlet, med.k, points)?;
        let e = potential_e(&d.neumann, med.k, points)?;
        Ok(combine(h, e, med.mu / med.k, 1.0))
    }

    /// Incident field at `x`.
    pub fn incident(&self, x: &Point) -> CVector3 {
        CVector3::from(self.wave.field(x, self.system.exterior().k))
    }

    /// Classifies a point against all scatterers.
    pub fn region(&self, x: &Point) -> Region {
        for s in self.system.surfaces() {
            if s.mesh.distance_to(x) <= SURFACE_BAND * s.mesh.diameter() {
                return Region::Masked;
            }
        }
        match self.system.surfaces().iter().position(|s| s.mesh.contains(x)) {
            Some(m) => Region::Interior(m),
            None => Region::Exterior,
        }
    }

    /// Total field (incident plus scattered outside, interior field inside);
    /// masked points yield `None`.
    pub fn total(&self, points: &[Point]) -> Result<Vec<(Region, Option<CVector3>)>> {
        let regions: Vec<Region> = points.iter().map(|x| self.region(x)).collect();
        let mut out: Vec<(Region, Option<CVector3>)> = regions.iter().map(|r| (*r, None)).collect();
        let mut groups: Vec<(Region, Vec<usize>)> = Vec::new();
        for (i, r) in regions.iter().enumerate() {
            if *r == Region::Masked {
                continue;
            }
            match groups.iter_mut().find(|(g, _)| g == r) {
                Some((_, idx)) => idx.push(i),
                None => groups.push((*r, vec![i])),
            }
        }
        for (region, idx) in groups {
            let pts: Vec<Point> = idx.iter().map(|&i| points[i]).collect();
            let values = match region {
                Region::Exterior => {
                    let s = self.scattered(&pts)?;
                    s.into_iter().zip(&pts).map(|(e, x)| e + self.incident(x)).collect()
                }
                Region::Interior(m) => self.interior(m, &pts)?,
                Region::Masked => unreachable!("masked points are skipped"),
            };
            for (i, v) in idx.into_iter().zip(values) {
                out[i].1 = Some(v);
            }
        }
        Ok(out)
    }

    /// Far-field pattern of the scattered field.
    pub fn far_field(&self, directions: &[Point]) -> Result<FarFieldPattern> {
        let ext = self.system.exterior();
        let mut amp = vec![CVector3::zeros(); directions.len()];
        for d in &self.scattered {
            let h = far_field_h(&d.dirichlet, ext.k, directions)?;
            let e = far_field_e(&d.neumann, ext.k, directions)?;
            for (a, v) in amp.iter_mut().zip(combine(h, e, ext.mu / ext.k, -1.0)) {
                *a += v;
            }
        }
        let directions = directions.iter().map(|d| d.normalize()).collect();
        Ok(FarFieldPattern { directions, amplitudes: amp })
    }
}

/// Far-field amplitudes `F` with `E_s ~ F exp(i k_e r)/r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldPattern {
    pub directions: Vec<Point>,
    pub amplitudes: Vec<CVector3>,
}

fn spherical_basis(d: &Point) -> (f64, f64, Point, Point) {
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x);
    let e_theta = Point::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin());
    let e_phi = Point::new(-phi.sin(), phi.cos(), 0.0);
    (theta, phi, e_theta, e_phi)
}

fn cdot(a: &CVector3, b: &Point) -> Complex64 {
    a.x * b.x + a.y * b.y + a.z * b.z
}

impl FarFieldPattern {
    /// Largest `|F . d| / |F|` over all samples with nonzero amplitude.
    pub fn transversality(&self) -> f64 {
        self.directions
            .iter()
            .zip(&self.amplitudes)
            .filter(|(_, a)| a.norm() > 0.0)
            .map(|(d, a)| cdot(a, d).norm() / a.norm())
            .fold(0.0, f64::max)
    }

    /// Relative L2 distance `||F - G|| / ||G||` over matching samples.
    pub fn relative_l2_error(&self, reference: &[CVector3]) -> f64 {
        let num: f64 = self.amplitudes.iter().zip(reference).map(|(a, b)| (a - b).norm_squared()).sum();
        let den: f64 = reference.iter().map(|b| b.norm_squared()).sum();
        (num / den).sqrt()
    }

    /// CSV with columns `theta,phi,ReFtheta,ImFtheta,ReFphi,ImFphi`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("theta,phi,ReFtheta,ImFtheta,ReFphi,ImFphi\n");
        for (d, a) in self.directions.iter().zip(&self.amplitudes) {
            let (theta, phi, et, ep) = spherical_basis(d);
            let (ft, fp) = (cdot(a, &et), cdot(a, &ep));
            out.push_str(&format!("{theta},{phi},{},{},{},{}\n", ft.re, ft.im, fp.re, fp.im));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Directions on a `n_theta x n_phi` grid, cell-centred in `theta`.
pub fn direction_grid(n_theta: usize, n_phi: usize) -> Vec<Point> {
    let mut dirs = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let theta = PI * (i as f64 + 0.5) / n_theta as f64;
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            dirs.push(Point::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    dirs
}

/// Product rule on the unit sphere: Gauss-Legendre in `cos(theta)` times the
/// trapezoidal rule in `phi`. Returns directions and weights summing to `4 pi`.
pub fn sphere_quadrature(n_theta: usize, n_phi: usize) -> (Vec<Point>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre(n_theta);
    let mut dirs = Vec::with_capacity(n_theta * n_phi);
    let mut w = Vec::with_capacity(n_theta * n_phi);
    for (t, wt) in nodes.iter().zip(&weights) {
        let cos_t = 2.0 * t - 1.0;
        let sin_t = (1.0 - cos_t * cos_t).sqrt();
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            dirs.push(Point::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t));
            w.push(2.0 * wt * 2.0 * PI / n_phi as f64);
        }
    }
    (dirs, w)
}

/// Relative `L2(S^2)` error `||F - G|| / ||G||` under quadrature weights.
pub fn weighted_relative_error(values: &[CVector3], reference: &[CVector3], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), w) in values.iter().zip(reference).zip(weights) {
        num += w * (a - b).norm_squared();
        den += w * b.norm_squared();
    }
    (num / den).sqrt()
}

/// A rectangular sampling plane `origin + i du/(nu-1) + j dv/(nv-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub origin: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    pub nu: usize,
    pub nv: usize,
}

impl PlaneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nu < 2 || self.nv < 2 {
            return Err(BemError::InvalidParameter("a field plane needs at least 2x2 samples".into()));
        }
        let u = Vector3::from(self.axis_u);
        let v = Vector3::from(self.axis_v);
        if u.cross(&v).norm() == 0.0 {
            return Err(BemError::InvalidParameter("plane axes must be independent".into()));
        }
        Ok(())
    }

    /// Sample points in row-major order (`u` fastest).
    pub fn points(&self) -> Vec<Point> {
        let o = Vector3::from(self.origin);
        let u = Vector3::from(self.axis_u) / (self.nu - 1) as f64;
        let v = Vector3::from(self.axis_v) / (self.nv - 1) as f64;
        (0..self.nv)
            .flat_map(|j| (0..self.nu).map(move |i| o + u * i as f64 + v * j as f64))
            .collect()
    }
}

/// Total electric field sampled on a plane.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub plane: PlaneSpec,
    pub points: Vec<Point>,
    pub regions: Vec<Region>,
    /// `None` on masked samples.
    pub values: Vec<Option<CVector3>>,
}

#[derive(Serialize, Deserialize)]
struct GridMetadata {
    plane: PlaneSpec,
    samples: usize,
    /// Per-sample region code: -1 exterior, -2 masked, m inside scatterer m.
    regions: Vec<i64>,
    /// Little-endian f64 file with ReEx, ImEx, ReEy, ImEy, ReEz, ImEz per
    /// sample; masked samples are NaN.
    binary: String,
}

/// Evaluates the total field on a plane.
pub fn near_field(evaluator: &FieldEvaluator<'_>, plane: &PlaneSpec) -> Result<FieldGrid> {
    plane.validate()?;
    let points = plane.points();
    let total = evaluator.total(&points)?;
    let (regions, values) = total.into_iter().unzip();
    Ok(FieldGrid { plane: plane.clone(), points, regions, values })
}

impl FieldGrid {
    fn components(v: &Option<CVector3>) -> [f64; 6] {
        match v {
            Some(e) => [e.x.re, e.x.im, e.y.re, e.y.im, e.z.re, e.z.im],
            None => [f64::NAN; 6],
        }
    }

    /// CSV with columns `x,y,z,ReEx,ImEx,ReEy,ImEy,ReEz,ImEz,absE2,region`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x,y,z,ReEx,ImEx,ReEy,ImEy,ReEz,ImEz,absE2,region\n");
        for ((p, v), r) in self.points.iter().zip(&self.values).zip(&self.regions) {
            let c = Self::components(v);
            let e2 = v.map_or(f64::NAN, |e| e.norm_squared());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                p.x,
                p.y,
                p.z,
                c[0],
                c[1],
                c[2],
                c[3],
                c[4],
                c[5],
                e2,
                r.code()
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Writes `<stem>.json` metadata next to `<stem>.bin` values.
    pub fn write_binary(&self, json_path: &Path) -> Result<()> {
        let bin_path = json_path.with_extension("bin");
        let mut bytes = Vec::with_capacity(self.values.len() * 48);
        for v in &self.values {
            for c in Self::components(v) {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        std::fs::File::create(&bin_path)?.write_all(&bytes)?;
        let meta = GridMetadata {
            plane: self.plane.clone(),
            samples: self.values.len(),
            regions: self.regions.iter().map(|r| r.code()).collect(),
            binary: bin_path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
        };
        std::fs::write(json_path, serde_json::to_string_pretty(&meta).expect("metadata serialises"))?;
        Ok(())
    }

    /// Reads a grid written by [`FieldGrid::write_binary`].
    pub fn read_binary(json_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(json_path)?;
        let meta: GridMetadata = serde_json::from_str(&text).map_err(|e| BemError::Parse(e.to_string()))?;
        let bytes = std::fs::read(json_path.with_file_name(&meta.binary))?;
        if bytes.len() != meta.samples * 48 || meta.regions.len() != meta.samples {
            return Err(BemError::Parse("grid binary does not match its metadata".into()));
        }
        let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let values = vals
            .chunks_exact(6)
            .map(|c| {
                if c[0].is_nan() {
                    None
                } else {
                    Some(CVector3::new(
                        Complex64::new(c[0], c[1]),
                        Complex64::new(c[2], c[3]),
                        Complex64::new(c[4], c[5]),
                    ))
                }
            })
            .collect();
        let regions = meta
            .regions
            .iter()
            .map(|&c| match c {
                -1 => Region::Exterior,
                -2 => Region::Masked,
                m => Region::Interior(m as usize),
            })
            .collect();
        Ok(Self { points: meta.plane.points(), plane: meta.plane, regions, values })
    }
}

/// Far-field reciprocity: solves for incidences `(d1, p1)` and `(d2, p2)` and
/// returns `|p2 . F1(-d2) - p1 . F2(-d1)| / max(|.|, |.|)`.
pub fn reciprocity_check(
    system: &BlockSystem,
    first: &IncidentWave,
    second: &IncidentWave,
    kind: FormulationKind,
    opts: &GmresOptions,
) -> Result<f64> {
    let pattern = |w: &IncidentWave, dir: Point| -> Result<CVector3> {
        let (b, _) = system.assemble_rhs(w)?;
        let (x, report) = solve(system, kind, &b, opts)?;
        if !report.converged {
            return Err(BemError::InvalidParameter(format!("{kind} did not converge in {} iterations", report.iterations)));
        }
        let eval = FieldEvaluator::new(system, w, &x)?;
        Ok(eval.far_field(&[dir])?.amplitudes[0])
    };
    let f1 = pattern(first, -second.direction)?;
    let f2 = pattern(second, -first.direction)?;
    let a = cdot(&f1, &second.polarization);
    let b = cdot(&f2, &first.polarization);
    let scale = a.norm().max(b.norm());
    Ok(if scale == 0.0 { 0.0 } else { (a - b).norm() / scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_icosphere, Scene};
    use crate::pmchwt::ScatteringConfig;

    fn system() -> BlockSystem {
        let scene = Scene::single(generate_icosphere(0.5, 2).unwrap());
        BlockSystem::assemble(&ScatteringConfig::uniform(scene, 2.0, Complex64::new(1.5, 0.1)).unwrap()).unwrap()
    }

    fn wave() -> IncidentWave {
        IncidentWave::new(Point::new(1.0, 0.0, 0.0), Point::new(0.0, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn zero_solution_zero_wave_gives_zero_fields() {
        let sys = system();
        let w = IncidentWave { polarization: Point::zeros(), direction: Point::new(0.0, 0.0, 1.0) };
        let zero = vec![Complex64::default(); sys.dim()];
        let ev = FieldEvaluator::new(&sys, &w, &zero).unwrap();
        let plane = PlaneSpec { origin: [-1.0, 0.0, -1.0], axis_u: [2.0, 0.0, 0.0], axis_v: [0.0, 0.0, 2.0], nu: 5, nv: 5 };
        let grid = near_field(&ev, &plane).unwrap();
        assert!(grid.values.iter().flatten().all(|v| v.norm() == 0.0));
        let ff = ev.far_field(&direction_grid(3, 4)).unwrap();
        assert!(ff.amplitudes.iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn far_field_is_linear_and_transverse() {
        let sys = system();
        let x: Vec<Complex64> = (0..sys.dim()).map(|i| Complex64::new((i as f64).sin(), 0.2)).collect();
        let alpha = Complex64::new(0.3, -1.7);
        let x2: Vec<Complex64> = x.iter().map(|z| z * alpha).collect();
        let dirs = direction_grid(4, 6);
        let f1 = FieldEvaluator::new(&sys, &wave(), &x).unwrap().far_field(&dirs).unwrap();
        let f2 = FieldEvaluator::new(&sys, &wave(), &x2).unwrap().far_field(&dirs).unwrap();
        for (a, b) in f1.amplitudes.iter().zip(&f2.amplitudes) {
            assert!((a * alpha - b).norm() <= 1e-12 * b.norm().max(1e-300));
        }
        assert!(f1.transversality() < 1e-8);
    }

    #[test]
    fn regions_follow_geometry() {
        let sys = system();
        let zero = vec![Complex64::default(); sys.dim()];
        let ev = FieldEvaluator::new(&sys, &wave(), &zero).unwrap();
        assert_eq!(ev.region(&Point::zeros()), Region::Interior(0));
        assert_eq!(ev.region(&Point::new(2.0, 0.0, 0.0)), Region::Exterior);
        let v = sys.surfaces()[0].mesh.vertices()[0];
        assert_eq!(ev.region(&v), Region::Masked);
    }

    #[test]
    fn grid_exports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sys = system();
        let x: Vec<Complex64> = (0..sys.dim()).map(|i| Complex64::new(0.01 * i as f64, 0.0)).collect();
        let ev = FieldEvaluator::new(&sys, &wave(), &x).unwrap();
        let plane = PlaneSpec { origin: [-1.0, 0.0, -1.0], axis_u: [2.0, 0.0, 0.0], axis_v: [0.0, 0.0, 2.0], nu: 4, nv: 3 };
        let grid = near_field(&ev, &plane).unwrap();
        let json = dir.path().join("grid.json");
        grid.write_binary(&json).unwrap();
        let back = FieldGrid::read_binary(&json).unwrap();
        assert_eq!(back.values, grid.values);
        assert_eq!(back.regions, grid.regions);
        let csv = dir.path().join("grid.csv");
        grid.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("x,y,z,ReEx"));
        let ff = ev.far_field(&direction_grid(2, 3)).unwrap();
        let fcsv = dir.path().join("ff.csv");
        ff.write_csv(&fcsv).unwrap();
        assert_eq!(std::fs::read_to_string(fcsv).unwrap().lines().count(), 7);
    }

    #[test]
    fn identical_waves_are_trivially_reciprocal() {
        let sys = system();
        let w = wave();
        let r = reciprocity_check(&sys, &w, &w, FormulationKind::AaStrong, &GmresOptions::default()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn sphere_quadrature_integrates_polynomials() {
        let (dirs, w) = sphere_quadrature(6, 12);
        assert!((w.iter().sum::<f64>() - 4.0 * PI).abs() < 1e-12);
        let z2: f64 = dirs.iter().zip(&w).map(|(d, w)| w * d.z * d.z).sum();
        let x2y2: f64 = dirs.iter().zip(&w).map(|(d, w)| w * d.x * d.x * d.y * d.y).sum();
        assert!((z2 - 4.0 * PI / 3.0).abs() < 1e-12);
        assert!((x2y2 - 4.0 * PI / 15.0).abs() < 1e-12);
    }

    #[test]
    fn bad_planes_are_rejected() {
        let p = PlaneSpec { origin: [0.0; 3], axis_u: [1.0, 0.0, 0.0], axis_v: [2.0, 0.0, 0.0], nu: 3, nv: 3 };
        assert!(p.validate().is_err());
    }
}

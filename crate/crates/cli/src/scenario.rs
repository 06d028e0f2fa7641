//! TOML scenario files.
//!
//! ```toml
//! name = "cube_k4"
//!
//! [exterior]
//! ke = 4.0          # or wavelength = ...
//! h = "auto"        # or a number
//!
//! [[particle]]
//! shape = { kind = "cube", side = 1.0 }
//! n = [1.311, 2.289e-9]
//!
//! [[wave]]
//! direction = [1.0, 0.0, 0.0]
//! polarization = [0.0, 0.0, 1.0]
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit};
use serde::Deserialize;

use pmchwt::mesh::{
    generate_cube, generate_hex_column, generate_icosphere, generate_sphere, load_mesh, MeshFormat, Point,
    Placement, Scene, TriangleMesh,
};
use pmchwt::operators::Medium;
use pmchwt::pmchwt::{IncidentWave, ScatteringConfig};
use pmchwt::postprocess::PlaneSpec;
use pmchwt::quadrature::QuadratureOptions;
use pmchwt::solver::{FormulationKind, GmresOptions};
use pmchwt::Complex64;

/// A scenario that failed to parse or validate. The message names the field.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ScenarioError(pub String);

fn invalid(field: impl std::fmt::Display, msg: impl std::fmt::Display) -> ScenarioError {
    ScenarioError(format!("{field}: {msg}"))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub exterior: Exterior,
    #[serde(rename = "particle")]
    pub particles: Vec<Particle>,
    #[serde(rename = "wave")]
    pub waves: Vec<Wave>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub output: Outputs,
    /// Directory of the scenario file; mesh paths are relative to it.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exterior {
    pub ke: Option<f64>,
    pub wavelength: Option<f64>,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default)]
    pub h: MeshWidth,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MeshWidth {
    Value(f64),
    Keyword(String),
}

impl Default for MeshWidth {
    fn default() -> Self {
        MeshWidth::Keyword("auto".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Cube { side: f64 },
    Sphere { radius: f64 },
    Icosphere { radius: f64, frequency: usize },
    HexColumn { width: f64, length: f64 },
    Mesh { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rotation {
    pub axis: [f64; 3],
    pub degrees: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Particle {
    pub shape: Shape,
    /// Refractive index `[re, im]` relative to the exterior.
    pub n: Option<[f64; 2]>,
    /// Interior wavenumber `[re, im]`, as an alternative to `n`.
    pub k: Option<[f64; 2]>,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default)]
    pub translation: [f64; 3],
    pub rotation: Option<Rotation>,
    /// Replicates the particle on a grid in the xy-plane around `translation`.
    pub grid: Option<Grid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wave {
    /// Propagation direction; normalised on load.
    pub direction: [f64; 3],
    pub polarization: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub formulations: Vec<String>,
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let g = GmresOptions::default();
        Self {
            formulations: vec!["A_strong".into()],
            tolerance: g.tolerance,
            restart: g.restart,
            max_iterations: g.max_iterations,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarFieldSpec {
    pub n_theta: usize,
    pub n_phi: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub far_field: Option<FarFieldSpec>,
    pub near_field: Vec<PlaneSpec>,
    /// Write every scatterer's mesh as OFF.
    pub echo_mesh: bool,
}

fn one() -> f64 {
    1.0
}

fn positive(field: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a positive finite number, got {v}")))
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(path.display(), e))?;
        let mut s = Self::parse(&text)?;
        s.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        s.validate()?;
        Ok(s)
    }

    /// Parses without validating; relative mesh paths resolve against the
    /// current directory.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError(format!("scenario: {}", e.message().trim())))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        match (self.exterior.ke, self.exterior.wavelength) {
            (Some(k), None) => positive("exterior.ke", k)?,
            (None, Some(l)) => positive("exterior.wavelength", l)?,
            _ => return Err(invalid("exterior", "give exactly one of ke and wavelength")),
        }
        if !(self.exterior.mu.is_finite() && self.exterior.mu != 0.0) {
            return Err(invalid("exterior.mu", "must be finite and nonzero"));
        }
        match &self.exterior.h {
            MeshWidth::Value(h) => positive("exterior.h", *h)?,
            MeshWidth::Keyword(k) if k == "auto" => {}
            MeshWidth::Keyword(k) => return Err(invalid("exterior.h", format!("expected a number or \"auto\", got \"{k}\""))),
        }
        if self.particles.is_empty() {
            return Err(invalid("particle", "at least one particle is required"));
        }
        for (i, p) in self.particles.iter().enumerate() {
            p.validate(&format!("particle[{i}]"), self.ke())?;
        }
        if self.waves.is_empty() {
            return Err(invalid("wave", "at least one incident wave is required"));
        }
        for i in 0..self.waves.len() {
            self.wave(i)?;
        }
        self.formulations()?;
        self.gmres()?;
        if let Some(f) = &self.output.far_field {
            if f.n_theta == 0 || f.n_phi == 0 {
                return Err(invalid("output.far_field", "n_theta and n_phi must be positive"));
            }
        }
        for (i, plane) in self.output.near_field.iter().enumerate() {
            plane.validate().map_err(|e| invalid(format!("output.near_field[{i}]"), e))?;
        }
        Ok(())
    }

    /// Exterior wavenumber.
    pub fn ke(&self) -> f64 {
        self.exterior.ke.unwrap_or_else(|| 2.0 * PI / self.exterior.wavelength.unwrap_or(f64::NAN))
    }

    /// Mesh width; "auto" resolves to ten elements per exterior wavelength.
    pub fn h(&self) -> f64 {
        match self.exterior.h {
            MeshWidth::Value(h) => h,
            MeshWidth::Keyword(_) => 2.0 * PI / (10.0 * self.ke()),
        }
    }

    pub fn wave(&self, i: usize) -> Result<IncidentWave, ScenarioError> {
        let field = format!("wave[{i}]");
        let w = &self.waves[i];
        let d = Point::from(w.direction);
        let p = Point::from(w.polarization);
        if !(d.norm() > 0.0 && d.iter().all(|x| x.is_finite())) {
            return Err(invalid(format!("{field}.direction"), "must be a finite nonzero vector"));
        }
        let d = d.normalize();
        if p.norm() == 0.0 || !p.iter().all(|x| x.is_finite()) {
            return Err(invalid(format!("{field}.polarization"), "must be a finite nonzero vector"));
        }
        let dot = p.dot(&d);
        if dot.abs() > 1e-12 * p.norm() {
            return Err(invalid(
                format!("{field}.polarization"),
                format!("must be orthogonal to the direction (p . d = {dot:.3e})"),
            ));
        }
        IncidentWave::new(p - dot * d, d).map_err(|e| invalid(&field, e))
    }

    pub fn formulations(&self) -> Result<Vec<FormulationKind>, ScenarioError> {
        parse_formulations(self.solver.formulations.iter().map(String::as_str), "solver.formulations")
    }

    pub fn gmres(&self) -> Result<GmresOptions, ScenarioError> {
        let opts = GmresOptions {
            tolerance: self.solver.tolerance,
            restart: self.solver.restart,
            max_iterations: self.solver.max_iterations,
        };
        opts.validate().map_err(|e| invalid("solver", e))?;
        Ok(opts)
    }

    /// Builds every particle mesh, in scene order, with the media inside them.
    pub fn build(&self) -> Result<(Scene, Vec<Medium>), ScenarioError> {
        let h = self.h();
        let mut meshes = Vec::new();
        let mut media = Vec::new();
        for (i, p) in self.particles.iter().enumerate() {
            let field = format!("particle[{i}]");
            let mesh = p.mesh(&field, h, &self.base)?;
            let medium = p.medium(&field, self.ke())?;
            let rotation = match &p.rotation {
                Some(r) => {
                    let axis = Unit::new_normalize(Point::from(r.axis));
                    Rotation3::from_axis_angle(&axis, r.degrees.to_radians()).into_inner()
                }
                None => nalgebra::Matrix3::identity(),
            };
            let placed = Placement { rotation, translation: Point::from(p.translation) };
            let mesh = Scene::single(mesh)
                .place(0, &placed)
                .map_err(|e| invalid(&field, e))?
                .meshes()[0]
                .clone();
            let copies = match &p.grid {
                Some(g) => {
                    let grid = Scene::grid(&mesh, g.nx, g.ny, g.spacing).map_err(|e| invalid(format!("{field}.grid"), e))?;
                    let shift = Point::from(p.translation);
                    grid.meshes().iter().map(|m| m.translated(&shift)).collect()
                }
                None => vec![mesh],
            };
            media.extend(std::iter::repeat_n(medium, copies.len()));
            meshes.extend(copies);
        }
        let scene = Scene::new(meshes).map_err(|e| invalid("particle", e))?;
        Ok((scene, media))
    }

    pub fn config(&self) -> Result<ScatteringConfig, ScenarioError> {
        let (scene, interiors) = self.build()?;
        let exterior = Medium::new(Complex64::new(self.ke(), 0.0), self.exterior.mu).map_err(|e| invalid("exterior", e))?;
        let gmres = self.gmres()?;
        let config = ScatteringConfig {
            exterior,
            interiors,
            scene,
            tolerance: gmres.tolerance,
            restart: gmres.restart,
            quadrature: QuadratureOptions::default(),
        };
        config.validate().map_err(|e| invalid("scenario", e))?;
        Ok(config)
    }
}

impl Particle {
    fn validate(&self, field: &str, ke: f64) -> Result<(), ScenarioError> {
        match &self.shape {
            Shape::Cube { side } => positive(&format!("{field}.shape.side"), *side)?,
            Shape::Sphere { radius } => positive(&format!("{field}.shape.radius"), *radius)?,
            Shape::Icosphere { radius, frequency } => {
                positive(&format!("{field}.shape.radius"), *radius)?;
                if *frequency == 0 {
                    return Err(invalid(format!("{field}.shape.frequency"), "must be at least 1"));
                }
            }
            Shape::HexColumn { width, length } => {
                positive(&format!("{field}.shape.width"), *width)?;
                positive(&format!("{field}.shape.length"), *length)?;
            }
            Shape::Mesh { path } => {
                mesh_format(path).map_err(|e| invalid(format!("{field}.shape.path"), e))?;
            }
        }
        if let Some(r) = &self.rotation {
            if Point::from(r.axis).norm() == 0.0 || !r.degrees.is_finite() {
                return Err(invalid(format!("{field}.rotation"), "needs a nonzero axis and finite angle"));
            }
        }
        if let Some(g) = &self.grid {
            if g.nx == 0 || g.ny == 0 {
                return Err(invalid(format!("{field}.grid"), "nx and ny must be at least 1"));
            }
            positive(&format!("{field}.grid.spacing"), g.spacing)?;
        }
        self.medium(field, ke).map(|_| ())
    }

    fn medium(&self, field: &str, ke: f64) -> Result<Medium, ScenarioError> {
        let k = match (self.n, self.k) {
            (Some([re, im]), None) => Complex64::new(re, im) * ke,
            (None, Some([re, im])) => Complex64::new(re, im),
            _ => return Err(invalid(field, "give exactly one of n and k")),
        };
        Medium::new(k, self.mu).map_err(|e| invalid(field, e))
    }

    fn mesh(&self, field: &str, h: f64, base: &Path) -> Result<TriangleMesh, ScenarioError> {
        let shape = format!("{field}.shape");
        match &self.shape {
            Shape::Cube { side } => generate_cube(*side, h),
            Shape::Sphere { radius } => generate_sphere(*radius, h),
            Shape::Icosphere { radius, frequency } => generate_icosphere(*radius, *frequency),
            Shape::HexColumn { width, length } => generate_hex_column(*width, *length, h),
            Shape::Mesh { path } => {
                let full = base.join(path);
                if !full.is_file() {
                    return Err(invalid(format!("{shape}.path"), format!("{} does not exist", full.display())));
                }
                let format = mesh_format(path).map_err(|e| invalid(format!("{shape}.path"), e))?;
                load_mesh(&full, format)
            }
        }
        .map_err(|e| invalid(shape, e))
    }
}

fn mesh_format(path: &Path) -> Result<MeshFormat, String> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("msh") => Ok(MeshFormat::GmshAscii),
        Some("off") => Ok(MeshFormat::Off),
        _ => Err(format!("unrecognised mesh extension in {} (expected .msh or .off)", path.display())),
    }
}

/// Parses formulation names case-insensitively, rejecting duplicates.
pub fn parse_formulations<'a>(
    names: impl IntoIterator<Item = &'a str>,
    field: &str,
) -> Result<Vec<FormulationKind>, ScenarioError> {
    let mut kinds = Vec::new();
    for name in names {
        let kind: FormulationKind = name.trim().parse().map_err(|e| invalid(field, e))?;
        if kinds.contains(&kind) {
            return Err(invalid(field, format!("{kind} listed twice")));
        }
        kinds.push(kind);
    }
    if kinds.is_empty() {
        return Err(invalid(field, "at least one formulation is required"));
    }
    Ok(kinds)
}

//! The `solve`, `bench` and `verify` subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::json;

use pmchwt::mesh::{generate_icosphere, generate_sphere, write_off, Point, Scene};
use pmchwt::mie::{mie_solve, self_check};
use pmchwt::operators::{twisted_gram, CVector3};
use pmchwt::pmchwt::{calderon_diagnostics, BlockSystem, IncidentWave, MassFactor, ScatteringConfig};
use pmchwt::postprocess::{
    direction_grid, near_field, reciprocity_check, sphere_quadrature, weighted_relative_error, FieldEvaluator,
};
use pmchwt::solver::{predicted_matvecs, solve, FormulationKind, GmresOptions, SolveReport};
use pmchwt::spaces::SurfaceSpaces;
use pmchwt::{BemError, Complex64};

use crate::scenario::{Scenario, ScenarioError};

/// Failure classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    NotConverged(String),
    #[error("assembly failed: {0}")]
    Assembly(BemError),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Assembly(_) => 4,
            CliError::Verification(_) | CliError::Other(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Units attached to every exported file.
fn units() -> serde_json::Value {
    json!({
        "length": "scene length unit",
        "wavenumber": "1/length",
        "field": "relative to the incident amplitude |p| = 1",
        "far_field": "F with E_s ~ F exp(ikr)/r",
        "wall_ms": "milliseconds",
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).context("serialising JSON")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn assemble(config: &ScatteringConfig) -> CliResult<BlockSystem> {
    BlockSystem::assemble(config).map_err(CliError::Assembly)
}

fn edge_counts(config: &ScatteringConfig) -> Vec<usize> {
    config.scene.meshes().iter().map(|m| m.edge_count()).collect()
}

fn mib(bytes: usize) -> f64 {
    bytes as f64 / (1024.0 * 1024.0)
}

fn report_value(scenario: &str, wave: usize, r: &SolveReport) -> serde_json::Value {
    let mut v = serde_json::to_value(r).expect("report serialises");
    let obj = v.as_object_mut().expect("report is an object");
    obj.insert("scenario".into(), json!(scenario));
    obj.insert("wave".into(), json!(wave));
    obj.insert("units".into(), units());
    v
}

pub struct SolveArgs {
    pub scenario: PathBuf,
    pub formulation: Option<FormulationKind>,
    pub out: Option<PathBuf>,
    pub dry_run: bool,
}

fn out_dir(out: &Option<PathBuf>, scenario: &Scenario) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from("out").join(&scenario.name))
}

pub fn run_solve(args: &SolveArgs) -> CliResult<()> {
    let scenario = Scenario::load(&args.scenario)?;
    let kinds = match args.formulation {
        Some(k) => vec![k],
        None => scenario.formulations()?,
    };
    let config = scenario.config()?;
    let waves: Vec<IncidentWave> = (0..scenario.waves.len()).map(|i| scenario.wave(i)).collect::<Result<_, _>>()?;
    let edges = edge_counts(&config);
    if args.dry_run {
        println!("scenario {}: k_e = {}, h = {:.4}", scenario.name, scenario.ke(), scenario.h());
        for (m, n) in edges.iter().enumerate() {
            println!("  scatterer {m}: {n} edges, {} DOFs", 2 * n);
        }
        let total: usize = edges.iter().map(|n| 2 * n).sum();
        println!("  total {total} DOFs, predicted memory {:.1} MiB", mib(BlockSystem::predicted_bytes(&edges)));
        return Ok(());
    }
    let dir = out_dir(&args.out, &scenario);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let opts = scenario.gmres()?;
    let t = Instant::now();
    let system = assemble(&config)?;
    eprintln!("assembled {} DOFs in {:.1} s", system.dim(), t.elapsed().as_secs_f64());

    let mut files = Vec::new();
    if scenario.output.echo_mesh {
        for (m, mesh) in config.scene.meshes().iter().enumerate() {
            let path = dir.join(format!("mesh_{m}.off"));
            fs::write(&path, write_off(mesh)).with_context(|| format!("writing {}", path.display()))?;
            files.push(json!({"path": path.file_name().unwrap().to_string_lossy(), "kind": "mesh"}));
        }
    }
    let mut failures = Vec::new();
    for (w, wave) in waves.iter().enumerate() {
        let (b, _) = system.assemble_rhs(wave).map_err(CliError::Assembly)?;
        for &kind in &kinds {
            let (x, report) = solve(&system, kind, &b, &opts).context("solving")?;
            println!(
                "wave {w} {kind}: {} iterations, {} matvecs, converged {}",
                report.iterations, report.matvecs, report.converged
            );
            let stem = format!("{kind}_w{w}");
            let path = dir.join(format!("report_{stem}.json"));
            write_json(&path, &report_value(&scenario.name, w, &report))?;
            files.push(json!({"path": path.file_name().unwrap().to_string_lossy(), "kind": "report", "formulation": kind, "wave": w}));
            if !report.converged {
                failures.push(format!("wave {w} {kind} did not converge in {} iterations", report.iterations));
                continue;
            }
            let eval = FieldEvaluator::new(&system, wave, &x).context("field evaluation")?;
            if let Some(ff) = &scenario.output.far_field {
                let pattern = eval.far_field(&direction_grid(ff.n_theta, ff.n_phi)).context("far field")?;
                let path = dir.join(format!("farfield_{stem}.csv"));
                pattern.write_csv(&path).context("writing far field")?;
                files.push(json!({"path": path.file_name().unwrap().to_string_lossy(), "kind": "far_field", "formulation": kind, "wave": w}));
            }
            for (j, plane) in scenario.output.near_field.iter().enumerate() {
                let grid = near_field(&eval, plane).context("near field")?;
                let csv = dir.join(format!("nearfield_{stem}_p{j}.csv"));
                let meta = dir.join(format!("nearfield_{stem}_p{j}.json"));
                grid.write_csv(&csv).context("writing near field")?;
                grid.write_binary(&meta).context("writing near field")?;
                for p in [&csv, &meta] {
                    files.push(json!({"path": p.file_name().unwrap().to_string_lossy(), "kind": "near_field", "formulation": kind, "wave": w}));
                }
            }
        }
    }
    write_json(
        &dir.join("manifest.json"),
        &json!({"scenario": scenario.name, "ke": scenario.ke(), "h": scenario.h(), "units": units(), "files": files}),
    )?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotConverged(failures.join("; ")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub kind: FormulationKind,
    #[serde(rename = "M")]
    pub scatterers: usize,
    #[serde(rename = "G")]
    pub iterations: usize,
    pub matvecs: u64,
    pub predicted: u64,
    pub converged: bool,
    pub wall_ms: u128,
}

pub fn run_bench(scenario_path: &Path, kinds: Option<Vec<FormulationKind>>, out: &Option<PathBuf>) -> CliResult<Vec<BenchRow>> {
    let scenario = Scenario::load(scenario_path)?;
    let kinds = match kinds {
        Some(k) => k,
        None => FormulationKind::ALL.to_vec(),
    };
    let config = scenario.config()?;
    let wave = scenario.wave(0)?;
    let opts = scenario.gmres()?;
    let system = assemble(&config)?;
    let (b, _) = system.assemble_rhs(&wave).map_err(CliError::Assembly)?;
    let mut rows = Vec::new();
    for kind in kinds {
        let (_, r) = solve(&system, kind, &b, &opts).context("solving")?;
        let predicted = predicted_matvecs(kind, r.scatterers, r.iterations, opts.restart).context("matvec formula")?;
        rows.push(BenchRow {
            kind,
            scatterers: r.scatterers,
            iterations: r.iterations,
            matvecs: r.matvecs,
            predicted,
            converged: r.converged,
            wall_ms: r.wall_ms,
        });
    }
    println!("{:<10} {:>14} {:>10} {:>10}", "", "G (matvecs)", "predicted", "wall ms");
    for r in &rows {
        let cell = format!("{} ({})", r.iterations, r.matvecs);
        println!("{:<10} {:>14} {:>10} {:>10}", r.kind.name(), cell, r.predicted, r.wall_ms);
    }
    let dir = out_dir(out, &scenario);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut csv = String::from("formulation,M,G,matvecs,predicted,converged,wall_ms\n");
    for r in &rows {
        csv += &format!("{},{},{},{},{},{},{}\n", r.kind, r.scatterers, r.iterations, r.matvecs, r.predicted, r.converged, r.wall_ms);
    }
    fs::write(dir.join("bench.csv"), csv).context("writing bench.csv")?;
    write_json(
        &dir.join("bench.json"),
        &json!({"scenario": scenario.name, "ke": scenario.ke(), "units": units(), "rows": rows}),
    )?;
    let failed: Vec<String> = rows.iter().filter(|r| !r.converged).map(|r| r.kind.to_string()).collect();
    if failed.is_empty() {
        Ok(rows)
    } else {
        Err(CliError::NotConverged(format!("{} did not converge", failed.join(", "))))
    }
}

struct Suite {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn suite(name: &'static str, passed: bool, detail: String) -> Suite {
    println!("{:<22} {} {detail}", name, if passed { "PASS" } else { "FAIL" });
    Suite { name, passed, detail }
}

fn uniform(scene: Scene, ke: f64, n: Complex64) -> anyhow::Result<BlockSystem> {
    Ok(BlockSystem::assemble(&ScatteringConfig::uniform(scene, ke, n)?)?)
}

fn mass_suite(corrupt_bc: bool) -> anyhow::Result<Suite> {
    let mut spaces = SurfaceSpaces::new(generate_icosphere(1.0, 3)?)?;
    if corrupt_bc {
        spaces.bc.scale_dof(0, 0.0);
    }
    Ok(match MassFactor::new(twisted_gram(&spaces), 0) {
        Ok(m) => suite("mass invertibility", true, format!("pivot ratio {:.2e}", m.condition_estimate())),
        Err(e) => suite("mass invertibility", false, e.to_string()),
    })
}

fn matvec_suite(quick: bool) -> anyhow::Result<Suite> {
    let opts = GmresOptions { max_iterations: 200, ..GmresOptions::default() };
    let n = Complex64::new(1.311, 0.01);
    let sphere = generate_icosphere(0.5, 2)?;
    let mut scenes = vec![Scene::single(sphere.clone()), Scene::grid(&sphere, 2, 1, 1.5)?];
    if !quick {
        scenes.push(Scene::grid(&sphere, 2, 2, 1.5)?);
    }
    let wave = IncidentWave::new(Point::new(0.0, 0.0, 1.0), Point::new(1.0, 0.0, 0.0))?;
    let (mut exact, mut total) = (0, 0);
    for scene in scenes {
        let system = uniform(scene, 2.0, n)?;
        let (b, _) = system.assemble_rhs(&wave)?;
        for kind in FormulationKind::ALL {
            let (_, r) = solve(&system, kind, &b, &opts)?;
            total += 1;
            if predicted_matvecs(kind, r.scatterers, r.iterations, opts.restart)? == r.matvecs {
                exact += 1;
            }
        }
    }
    Ok(suite("matvec formula", exact == total, format!("{exact}/{total} solves exact")))
}

fn calderon_suite(quick: bool) -> anyhow::Result<Suite> {
    let levels = if quick { 1..=2 } else { 1..=3 };
    let mut residuals = Vec::new();
    for f in levels {
        let system = uniform(Scene::single(generate_icosphere(1.0, f)?), 2.0, Complex64::new(1.311, 2.289e-9))?;
        residuals.push(calderon_diagnostics(&system, 0)?.projector_residual);
    }
    let ok = residuals.windows(2).all(|w| w[1] < w[0]);
    let text: Vec<String> = residuals.iter().map(|r| format!("{r:.4}")).collect();
    Ok(suite("calderon residual", ok, format!("||P^2 - P|| / ||P|| = {}", text.join(", "))))
}

fn sphere_system(quick: bool) -> anyhow::Result<(BlockSystem, f64)> {
    let ke = 2.0;
    let mesh = if quick {
        generate_icosphere(1.0, 3)?
    } else {
        generate_sphere(1.0, 2.0 * std::f64::consts::PI / (10.0 * ke))?
    };
    Ok((uniform(Scene::single(mesh), ke, Complex64::new(1.311, 2.289e-9))?, ke))
}

fn reciprocity_suite(system: &BlockSystem) -> anyhow::Result<Suite> {
    let d1 = Point::new(1.0, 0.3, 0.2).normalize();
    let d2 = Point::new(-0.2, 1.0, 0.5).normalize();
    let w1 = IncidentWave::new(d1.cross(&Point::z()).normalize(), d1)?;
    let w2 = IncidentWave::new(d2.cross(&Point::x()).normalize(), d2)?;
    let r = reciprocity_check(system, &w1, &w2, FormulationKind::AStrong, &GmresOptions::default())?;
    Ok(suite("reciprocity", r < 0.01, format!("mismatch {r:.2e} (limit 1e-2)")))
}

fn far_field_suite(system: &BlockSystem, ke: f64) -> anyhow::Result<Suite> {
    let n = Complex64::new(1.311, 2.289e-9);
    let wave = IncidentWave::new(Point::new(1.0, 0.0, 0.0), Point::new(0.0, 0.0, 1.0))?;
    let (b, _) = system.assemble_rhs(&wave)?;
    let (x, r) = solve(system, FormulationKind::AStrong, &b, &GmresOptions::default())?;
    anyhow::ensure!(r.converged, "sphere solve did not converge");
    let (dirs, weights) = sphere_quadrature(24, 48);
    let reference: Vec<CVector3> = mie_solve(1.0, ke, n, 1.0)?
        .far_field(&wave.polarization, &wave.direction, &dirs)
        .into_iter()
        .map(Into::into)
        .collect();
    let pattern = FieldEvaluator::new(system, &wave, &x)?.far_field(&dirs)?;
    let err = weighted_relative_error(&pattern.amplitudes, &reference, &weights);
    Ok(suite("mie far field", err < 0.01, format!("relative L2 error {:.3}% (limit 1%)", 100.0 * err)))
}

pub fn run_verify(quick: bool, corrupt_bc: bool) -> CliResult<()> {
    let t = Instant::now();
    let mut suites = Vec::new();
    let check = self_check().context("Mie self-check")?;
    suites.push(suite(
        "mie oracle",
        check.passed(),
        format!(
            "energy {:.1e}, Rayleigh {:.1e}, truncation {:.1e}",
            check.energy_balance, check.rayleigh, check.truncation
        ),
    ));
    suites.push(mass_suite(corrupt_bc)?);
    suites.push(matvec_suite(quick)?);
    suites.push(calderon_suite(quick)?);
    let (system, ke) = sphere_system(quick)?;
    suites.push(reciprocity_suite(&system)?);
    if quick {
        println!("{:<22} skipped (--quick)", "mie far field");
    } else {
        suites.push(far_field_suite(&system, ke)?);
    }
    let failed: Vec<&str> = suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
    println!("{}/{} suites pass in {:.0} s", suites.len() - failed.len(), suites.len(), t.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        let detail: Vec<String> = suites.iter().filter(|s| !s.passed).map(|s| format!("{}: {}", s.name, s.detail)).collect();
        Err(CliError::Verification(detail.join("; ")))
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pmchwt"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
name = "small"

[exterior]
ke = 1.0

[[particle]]
shape = { kind = "icosphere", radius = 0.5, frequency = 2 }
n = [1.5, 0.05]

[[wave]]
direction = [0.0, 0.0, 2.0]
polarization = [1.0, 0.0, 0.0]

[solver]
formulations = ["A_strong", "AA_strong"]
"#;

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_reports_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL}
[output]
far_field = {{ n_theta = 4, n_phi = 8 }}
echo_mesh = true

[[output.near_field]]
origin = [-1.0, 0.0, -1.0]
axis_u = [2.0, 0.0, 0.0]
axis_v = [0.0, 0.0, 2.0]
nu = 5
nv = 5
"
    );
    let scenario = write_scenario(dir.path(), "s.toml", &text);
    let out = dir.path().join("out");
    let o = run(&["solve", arg(&scenario), "--out", arg(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report_AA_strong_w0.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "AA_strong");
    assert_eq!(report["M"], 1);
    assert_eq!(report["converged"], true);
    assert_eq!(report["scenario"], "small");
    let g = report["G"].as_u64().unwrap();
    assert_eq!(report["matvecs"].as_u64().unwrap(), 8 * 2 * (g + g / 20) + 8);
    assert!(report["units"].is_object());

    for f in [
        "report_A_strong_w0.json",
        "farfield_A_strong_w0.csv",
        "nearfield_A_strong_w0_p0.csv",
        "nearfield_A_strong_w0_p0.json",
        "nearfield_A_strong_w0_p0.bin",
        "mesh_0.off",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let far = fs::read_to_string(out.join("farfield_A_strong_w0.csv")).unwrap();
    assert_eq!(far.lines().count(), 1 + 32);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["files"].as_array().unwrap().iter().any(|f| f["formulation"] == "AA_strong"));
}

#[test]
fn dry_run_reports_sizes_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    let o = run(&["solve", arg(&scenario), "--out", arg(&out), "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("120 edges, 240 DOFs"), "{text}");
    assert!(text.contains("predicted memory"));
    assert!(!out.exists());
}

#[test]
fn bundled_scenarios_are_valid() {
    let mut count = 0;
    for entry in fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = run(&["solve", arg(&path), "--dry-run"]);
            assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
            count += 1;
        }
    }
    assert!(count >= 3);
}

#[test]
fn non_transverse_polarization_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("polarization = [1.0, 0.0, 0.0]", "polarization = [1.0, 0.0, 0.5]");
    let scenario = write_scenario(dir.path(), "s.toml", &text);
    let o = run(&["solve", arg(&scenario), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("wave[0].polarization") && err.contains("orthogonal"), "{err}");
}

#[test]
fn malformed_scenarios_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (SMALL.replace("ke = 1.0", "ke = 1.0\ncolour = 3"), "colour"),
        (SMALL.replace("ke = 1.0", "ke = -1.0"), "exterior.ke"),
        (SMALL.replace("n = [1.5, 0.05]", "n = [1.5, -0.05]"), "particle[0]"),
        (SMALL.replace("\"A_strong\", ", "\"B_strong\", "), "solver.formulations"),
        (SMALL.replace("frequency = 2", "frequency = 0"), "particle[0].shape.frequency"),
        (
            SMALL.replace("kind = \"icosphere\", radius = 0.5, frequency = 2", "kind = \"mesh\", path = \"nope.off\""),
            "particle[0].shape.path",
        ),
        ("name = ".to_string(), "scenario"),
    ];
    for (i, (text, field)) in cases.iter().enumerate() {
        let scenario = write_scenario(dir.path(), &format!("s{i}.toml"), text);
        let o = run(&["solve", arg(&scenario), "--dry-run"]);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "case {i}: {}", stderr(&o));
    }
}

#[test]
fn overlapping_particles_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("n = [1.5, 0.05]", "n = [1.5, 0.05]\ngrid = { nx = 2, ny = 1, spacing = 0.5 }");
    let scenario = write_scenario(dir.path(), "s.toml", &text);
    let o = run(&["solve", arg(&scenario), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("intersect"), "{}", stderr(&o));
}

#[test]
fn mesh_files_load_relative_to_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let off = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";
    fs::write(dir.path().join("tet.off"), off).unwrap();
    let text = SMALL.replace("kind = \"icosphere\", radius = 0.5, frequency = 2", "kind = \"mesh\", path = \"tet.off\"");
    let scenario = write_scenario(dir.path(), "s.toml", &text);
    let o = run(&["solve", arg(&scenario), "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("6 edges, 12 DOFs"), "{}", stdout(&o));
}

#[test]
fn unconverged_solve_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "formulations = [\"A_strong\", \"AA_strong\"]",
        "formulations = [\"A_weak\"]\ntolerance = 1e-12\nmax_iterations = 2",
    );
    let scenario = write_scenario(dir.path(), "s.toml", &text);
    let out = dir.path().join("out");
    let o = run(&["solve", arg(&scenario), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report_A_weak_w0.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
}

#[test]
fn bench_is_deterministic_and_da_equals_aa_for_one_scatterer() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "s.toml", SMALL);
    let table = |out: &str| {
        let out = dir.path().join(out);
        let o = run(&["bench", arg(&scenario), "--formulations", "aa_strong,da_strong,A_WEAK", "--out", arg(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: Value = serde_json::from_str(&fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
        assert!(out.join("bench.csv").is_file());
        v["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| (r["kind"].as_str().unwrap().to_string(), r["G"].as_u64().unwrap(), r["matvecs"].as_u64().unwrap(), r["predicted"].as_u64().unwrap()))
            .collect::<Vec<_>>()
    };
    let first = table("a");
    assert_eq!(first, table("b"));
    assert_eq!(first[0].0, "AA_strong");
    assert_eq!((first[0].1, first[0].2), (first[1].1, first[1].2));
    for row in &first {
        assert_eq!(row.2, row.3);
    }
}

#[test]
fn invalid_thread_count_exits_2() {
    let o = bin().args(["verify", "--quick"]).env("SOLVER_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SOLVER_THREADS"));
}

#[test]
fn corrupted_bc_fails_verification_loudly() {
    let o = bin().args(["verify", "--quick", "--corrupt-bc"]).env("SOLVER_THREADS", "1").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("mass invertibility") && l.contains("FAIL")), "{text}");
    assert!(stderr(&o).contains("singular"), "{}", stderr(&o));
}

#[test]
fn quick_verify_passes() {
    let o = run(&["verify", "--quick"]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("5/5 suites pass"), "{}", stdout(&o));
}

/// The bundled unit-cube scenario with the strong form.
#[test]
fn bundled_cube_scenario_converges_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "solve",
        arg(&scenarios().join("cube_k4.toml")),
        "--formulation",
        "a_strong",
        "--out",
        arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report_A_strong_w0.json")).unwrap()).unwrap();
    let g = report["G"].as_u64().unwrap();
    assert!((8..=20).contains(&g), "G = {g}");
    assert_eq!(report["matvecs"].as_u64().unwrap(), 8 * (g + g / 20));
}

//! Restarted GMRES and the six discrete formulations of the PMCHWT system.
//!
//! | kind        | operator          | right-hand side |
//! |-------------|-------------------|-----------------|
//! | `A_weak`    | `A`               | `b`             |
//! | `A_strong`  | `M^-1 A`          | `M^-1 b`        |
//! | `AA_weak`   | `A M^-1 A`        | `A M^-1 b`      |
//! | `AA_strong` | `M^-1 A M^-1 A`   | `M^-1 A M^-1 b` |
//! | `DA_weak`   | `D M^-1 A`        | `D M^-1 b`      |
//! | `DA_strong` | `M^-1 D M^-1 A`   | `M^-1 D M^-1 b` |
//!
//! `M` is the weak identity and `D` the block diagonal of `A`. All six share
//! the unknown, the scattered-field traces.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{BemError, Result};
use crate::pmchwt::BlockSystem;

/// Default iteration cap over all restart cycles.
pub const DEFAULT_MAX_ITERATIONS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormulationKind {
    #[serde(rename = "A_weak")]
    AWeak,
    #[serde(rename = "A_strong")]
    AStrong,
    #[serde(rename = "AA_weak")]
    AaWeak,
    #[serde(rename = "AA_strong")]
    AaStrong,
    #[serde(rename = "DA_weak")]
    DaWeak,
    #[serde(rename = "DA_strong")]
    DaStrong,
}

/// Operator family; weak and strong forms of a family cost the same.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorFamily {
    A,
    ASquared,
    DA,
}

impl FormulationKind {
    pub const ALL: [FormulationKind; 6] = [
        FormulationKind::AWeak,
        FormulationKind::AStrong,
        FormulationKind::AaWeak,
        FormulationKind::AaStrong,
        FormulationKind::DaWeak,
        FormulationKind::DaStrong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FormulationKind::AWeak => "A_weak",
            FormulationKind::AStrong => "A_strong",
            FormulationKind::AaWeak => "AA_weak",
            FormulationKind::AaStrong => "AA_strong",
            FormulationKind::DaWeak => "DA_weak",
            FormulationKind::DaStrong => "DA_strong",
        }
    }

    pub fn family(self) -> OperatorFamily {
        match self {
            FormulationKind::AWeak | FormulationKind::AStrong => OperatorFamily::A,
            FormulationKind::AaWeak | FormulationKind::AaStrong => OperatorFamily::ASquared,
            FormulationKind::DaWeak | FormulationKind::DaStrong => OperatorFamily::DA,
        }
    }

    pub fn is_strong(self) -> bool {
        matches!(self, FormulationKind::AStrong | FormulationKind::AaStrong | FormulationKind::DaStrong)
    }
}

impl fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FormulationKind {
    type Err = BemError;

    fn from_str(s: &str) -> Result<Self> {
        FormulationKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| BemError::InvalidParameter(format!("unknown formulation '{s}'")))
    }
}

/// Closed-form matvec count of a GMRES solve with `g` iterations.
pub fn predicted_matvecs(kind: FormulationKind, m: usize, g: usize, restart: usize) -> Result<u64> {
    if m == 0 || restart == 0 {
        return Err(BemError::InvalidParameter("scatterer count and restart must be positive".into()));
    }
    let (m, g, rho) = (m as u64, g as u64, restart as u64);
    let applications = g + g / rho;
    Ok(match kind.family() {
        OperatorFamily::A => 4 * m * (m + 1) * applications,
        OperatorFamily::ASquared => 8 * m * (m + 1) * applications + 4 * m * (m + 1),
        OperatorFamily::DA => 4 * m * (m + 3) * applications + 8 * m,
    })
}

/// A square linear map acting on complex vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64>;
}

impl LinearOperator for DMatrix<Complex64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (self * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
    }
}

/// One of the six formulations, wired to a block system's matvec counter.
#[derive(Debug, Clone, Copy)]
pub struct Formulation<'a> {
    system: &'a BlockSystem,
    kind: FormulationKind,
}

impl<'a> Formulation<'a> {
    pub fn new(system: &'a BlockSystem, kind: FormulationKind) -> Self {
        Self { system, kind }
    }

    pub fn kind(&self) -> FormulationKind {
        self.kind
    }

    /// Applies the row's left factors (everything left of the final `A`) to `v`.
    fn premultiply(&self, v: Vec<Complex64>) -> Vec<Complex64> {
        let s = self.system;
        match self.kind {
            FormulationKind::AWeak => v,
            FormulationKind::AStrong => s.solve_mass(&v),
            FormulationKind::AaWeak => s.apply_a(&s.solve_mass(&v)),
            FormulationKind::AaStrong => s.solve_mass(&s.apply_a(&s.solve_mass(&v))),
            FormulationKind::DaWeak => s.apply_d(&s.solve_mass(&v)),
            FormulationKind::DaStrong => s.solve_mass(&s.apply_d(&s.solve_mass(&v))),
        }
    }

    /// Weak rows are reordered so each scatterer's `[C, (mu/k) S]` equation
    /// (tested with BC) comes before its `[-(k/mu) S, C]` equation. GMRES is
    /// not invariant under row permutations, so this matters for the weak
    /// kinds; strong kinds end in a mass solve and need nothing.
    fn order_rows(&self, mut v: Vec<Complex64>) -> Vec<Complex64> {
        if !self.kind.is_strong() {
            let layout = self.system.layout();
            for m in 0..layout.scatterers() {
                v[layout.block(m)].rotate_left(layout.dim(m));
            }
        }
        v
    }

    /// The transformed right-hand side; its operator applications are counted.
    pub fn transform_rhs(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.order_rows(self.premultiply(b.to_vec()))
    }
}

impl LinearOperator for Formulation<'_> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.order_rows(self.premultiply(self.system.apply_a(x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { tolerance: 1e-5, restart: 20, max_iterations: DEFAULT_MAX_ITERATIONS }
    }
}

impl GmresOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(BemError::InvalidParameter("GMRES tolerance must lie in (0, 1)".into()));
        }
        if self.restart == 0 || self.max_iterations == 0 {
            return Err(BemError::InvalidParameter("restart and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: Vec<Complex64>,
    pub iterations: usize,
    /// Relative residual after each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
}

/// Complex Givens rotation `(c, s)` zeroing `b` in `(a, b)`; returns `(c, s, r)`.
fn givens(a: Complex64, b: Complex64) -> (f64, Complex64, Complex64) {
    let na = a.norm();
    if na == 0.0 {
        return (0.0, Complex64::new(1.0, 0.0), b);
    }
    let nu = na.hypot(b.norm());
    let phase = a / na;
    (na / nu, phase * b.conj() / nu, phase * nu)
}

/// Restarted GMRES from a zero initial guess.
///
/// Each iteration applies the operator once. After every complete cycle of
/// `restart` iterations the true residual is recomputed with one further
/// application; a cycle that converges part way stops without it. The
/// relative residual is measured against `||b||`.
pub fn gmres<A: LinearOperator + ?Sized>(op: &A, b: &[Complex64], opts: &GmresOptions) -> Result<GmresOutcome> {
    opts.validate()?;
    let n = op.dim();
    if b.len() != n {
        return Err(BemError::InvalidParameter(format!("right-hand side has length {}, expected {n}", b.len())));
    }
    let bnorm = norm(b);
    let mut x = vec![Complex64::default(); n];
    let mut residuals = Vec::new();
    if bnorm == 0.0 {
        return Ok(GmresOutcome { solution: x, iterations: 0, residuals, converged: true });
    }
    let rho = opts.restart;
    let mut r = b.to_vec();
    let mut beta = bnorm;
    let mut converged = false;
    while residuals.len() < opts.max_iterations {
        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut hess: Vec<Vec<Complex64>> = Vec::with_capacity(rho);
        let mut rot: Vec<(f64, Complex64)> = Vec::with_capacity(rho);
        let mut g = vec![Complex64::new(beta, 0.0)];
        let mut stop = false;
        while hess.len() < rho && residuals.len() < opts.max_iterations {
            let j = hess.len();
            let mut w = op.apply(&basis[j]);
            let mut col = Vec::with_capacity(j + 2);
            for v in &basis {
                let h: Complex64 = v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= h * vi;
                }
                col.push(h);
            }
            let hn = norm(&w);
            col.push(Complex64::new(hn, 0.0));
            for (i, &(c, s)) in rot.iter().enumerate() {
                let (a, b) = (col[i], col[i + 1]);
                col[i] = c * a + s * b;
                col[i + 1] = -s.conj() * a + c * b;
            }
            let (c, s, rr) = givens(col[j], col[j + 1]);
            col[j] = rr;
            col.truncate(j + 1);
            rot.push((c, s));
            g.push(-s.conj() * g[j]);
            g[j] *= c;
            hess.push(col);
            let est = g[j + 1].norm() / bnorm;
            residuals.push(est);
            // A vanishing new direction means the Krylov space is invariant.
            if est < opts.tolerance || hn <= f64::EPSILON * bnorm {
                stop = true;
                break;
            }
            basis.push(w.iter().map(|z| z / hn).collect());
        }
        let k = hess.len();
        let mut y = vec![Complex64::default(); k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for l in i + 1..k {
                acc -= hess[l][i] * y[l];
            }
            y[i] = acc / hess[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            for (xj, vj) in x.iter_mut().zip(v) {
                *xj += yi * vj;
            }
        }
        if k == rho {
            let ax = op.apply(&x);
            r = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            beta = norm(&r);
            let rel = beta / bnorm;
            *residuals.last_mut().expect("non-empty cycle") = rel;
            if rel < opts.tolerance {
                converged = true;
                break;
            }
            if beta == 0.0 {
                converged = true;
                break;
            }
        } else if stop {
            converged = true;
            break;
        }
    }
    Ok(GmresOutcome { iterations: residuals.len(), solution: x, residuals, converged })
}

/// Summary of one formulation solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub kind: FormulationKind,
    #[serde(rename = "M")]
    pub scatterers: usize,
    pub ke: f64,
    #[serde(rename = "G")]
    pub iterations: usize,
    pub matvecs: u64,
    pub converged: bool,
    pub residuals: Vec<f64>,
    pub wall_ms: u128,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Transforms `b`, runs GMRES on the chosen formulation and reports the
/// matvecs consumed, including the right-hand-side premultiplication.
pub fn solve(
    system: &BlockSystem,
    kind: FormulationKind,
    b: &[Complex64],
    opts: &GmresOptions,
) -> Result<(Vec<Complex64>, SolveReport)> {
    let start = Instant::now();
    let before = system.matvec_count();
    let form = Formulation::new(system, kind);
    let rhs = form.transform_rhs(b);
    let out = gmres(&form, &rhs, opts)?;
    let report = SolveReport {
        kind,
        scatterers: system.scatterers(),
        ke: system.exterior().k.re,
        iterations: out.iterations,
        matvecs: system.matvec_count() - before,
        converged: out.converged,
        residuals: out.residuals,
        wall_ms: start.elapsed().as_millis(),
    };
    Ok((out.solution, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cube_with_divisions, Point, Scene};
    use crate::pmchwt::{IncidentWave, ScatteringConfig};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn predicted_matches_published_counts() {
        assert_eq!(predicted_matvecs(FormulationKind::AWeak, 1, 599, 20).unwrap(), 5024);
        assert_eq!(predicted_matvecs(FormulationKind::AaStrong, 1, 34, 20).unwrap(), 568);
        assert_eq!(predicted_matvecs(FormulationKind::DaWeak, 4, 35, 20).unwrap(), 4064);
        assert_eq!(predicted_matvecs(FormulationKind::AStrong, 1, 11, 20).unwrap(), 88);
        assert!(predicted_matvecs(FormulationKind::AWeak, 0, 1, 20).is_err());
        assert!(predicted_matvecs(FormulationKind::AWeak, 1, 1, 0).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in FormulationKind::ALL {
            assert_eq!(k.name().parse::<FormulationKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("B_weak".parse::<FormulationKind>().is_err());
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let id = DMatrix::<Complex64>::identity(7, 7);
        let b: Vec<_> = (0..7).map(|i| c(i as f64, 1.0)).collect();
        let out = gmres(&id, &b, &GmresOptions::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        for (x, b) in out.solution.iter().zip(&b) {
            assert!((x - b).norm() < 1e-14);
        }
    }

    #[test]
    fn small_system_matches_direct_solve() {
        let a = DMatrix::from_fn(5, 5, |i, j| {
            let d = if i == j { 4.0 } else { 0.0 };
            c(d + ((i * 5 + j) as f64 * 0.7).sin(), ((i + 2 * j) as f64).cos() * 0.5)
        });
        let b: Vec<_> = (0..5).map(|i| c(1.0 + i as f64, -0.5 * i as f64)).collect();
        let opts = GmresOptions { tolerance: 1e-12, ..Default::default() };
        let out = gmres(&a, &b, &opts).unwrap();
        let direct = a.clone().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        for (x, d) in out.solution.iter().zip(direct.iter()) {
            assert!((x - d).norm() < 1e-8);
        }
    }

    #[test]
    fn restarts_keep_residuals_monotone_within_cycles() {
        let n = 40;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let d = if i == j { 1.0 + i as f64 * 0.1 } else { 0.0 };
            c(d + 0.3 * ((i * 7 + j * 3) as f64).sin() / (n as f64).sqrt(), 0.1 * ((i + j) as f64).cos())
        });
        let b: Vec<_> = (0..n).map(|i| c((i as f64).cos(), 0.0)).collect();
        let opts = GmresOptions { tolerance: 1e-10, restart: 5, max_iterations: 500 };
        let out = gmres(&a, &b, &opts).unwrap();
        assert!(out.converged);
        for cycle in out.residuals.chunks(5) {
            for w in cycle[..cycle.len() - 1].windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
        assert!(*out.residuals.last().unwrap() < 1e-10);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let n = 30;
        let a = DMatrix::from_fn(n, n, |i, j| if (i + 1) % n == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let b: Vec<_> = (0..n).map(|i| if i == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect();
        let opts = GmresOptions { tolerance: 1e-8, restart: 4, max_iterations: 12 };
        let out = gmres(&a, &b, &opts).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 12);
    }

    fn small_system(m: usize) -> BlockSystem {
        let cube = generate_cube_with_divisions(1.0, 2).unwrap();
        let meshes = (0..m).map(|i| cube.translated(&Point::new(2.0 * i as f64, 0.0, 0.0))).collect();
        let cfg = ScatteringConfig::uniform(Scene::new(meshes).unwrap(), 2.0, c(1.311, 0.1)).unwrap();
        BlockSystem::assemble(&cfg).unwrap()
    }

    #[test]
    fn counted_matvecs_equal_prediction() {
        let wave = IncidentWave::new(Point::new(1.0, 0.0, 0.0), Point::new(0.0, 0.0, 1.0)).unwrap();
        for m in [1, 2] {
            let sys = small_system(m);
            let (b, _) = sys.assemble_rhs(&wave).unwrap();
            for kind in FormulationKind::ALL {
                for restart in [5, 20] {
                    let opts = GmresOptions { restart, max_iterations: 300, ..Default::default() };
                    let (_, rep) = solve(&sys, kind, &b, &opts).unwrap();
                    if kind.is_strong() {
                        assert!(rep.converged, "{kind} M={m} restart={restart}");
                    }
                    assert_eq!(rep.residuals.len(), rep.iterations);
                    let predicted = predicted_matvecs(kind, m, rep.iterations, restart).unwrap();
                    assert_eq!(rep.matvecs, predicted, "{kind} M={m} restart={restart}");
                }
            }
        }
    }

    #[test]
    fn da_equals_aa_for_one_scatterer() {
        let sys = small_system(1);
        let x: Vec<_> = (0..sys.dim()).map(|i| c((i as f64 * 0.37).sin(), (i as f64).cos())).collect();
        let aa = Formulation::new(&sys, FormulationKind::AaStrong).apply(&x);
        let da = Formulation::new(&sys, FormulationKind::DaStrong).apply(&x);
        let scale = norm(&aa);
        let diff: Vec<_> = aa.iter().zip(&da).map(|(a, d)| a - d).collect();
        assert!(norm(&diff) <= 1e-12 * scale);
    }

    #[test]
    fn report_json_has_expected_keys() {
        let rep = SolveReport {
            kind: FormulationKind::DaStrong,
            scatterers: 4,
            ke: 7.0,
            iterations: 3,
            matvecs: 10,
            converged: true,
            residuals: vec![0.1, 0.01, 0.001],
            wall_ms: 5,
        };
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        for key in ["kind", "M", "ke", "G", "matvecs", "converged", "residuals", "wall_ms"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["kind"], "DA_strong");
    }
}

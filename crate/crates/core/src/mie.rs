//! Mie series for a homogeneous sphere, used as an independent reference.
//!
//! Coefficients follow Bohren and Huffman with time dependence `exp(-iwt)`;
//! the incident field is `p exp(i k_e d.x)` and the sphere is centred at the
//! origin. Riccati-Bessel functions of the (possibly complex) interior
//! argument come from the downward log-derivative recurrence.

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{BemError, Result};

type CVec = [Complex64; 3];

/// Expansion coefficients of the scattered (`a`, `b`) and interior (`c`, `d`)
/// fields, indexed from order 1.
#[derive(Debug, Clone)]
pub struct MieSolution {
    pub radius: f64,
    pub ke: f64,
    pub n: Complex64,
    /// Interior over exterior permeability.
    pub mu_ratio: f64,
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
    pub d: Vec<Complex64>,
}

/// Truncation order `ceil(x + 4 x^(1/3) + 2)`.
pub fn truncation_order(x: f64) -> usize {
    (x + 4.0 * x.cbrt() + 2.0).ceil() as usize
}

/// Logarithmic derivatives `D_0..=D_n` of `psi_n(z)` by downward recurrence.
fn log_derivatives(z: Complex64, n: usize) -> Vec<Complex64> {
    let start = n.max(z.norm().ceil() as usize) + 30;
    let mut d = Complex64::default();
    let mut out = vec![Complex64::default(); n + 1];
    for k in (1..=start).rev() {
        let kz = k as f64 / z;
        d = kz - 1.0 / (d + kz);
        if k - 1 <= n {
            out[k - 1] = d;
        }
    }
    out
}

/// `psi_k(z)` and `psi_k'(z)` for `k = 0..=n`.
fn riccati_psi(z: Complex64, n: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let dl = log_derivatives(z, n);
    let mut psi = vec![z.sin(); n + 1];
    for k in 1..=n {
        psi[k] = psi[k - 1] / (dl[k] + k as f64 / z);
    }
    let dpsi = psi.iter().zip(&dl).map(|(p, d)| p * d).collect();
    (psi, dpsi)
}

/// `xi_k(x) = x h_k^(1)(x)` and its derivative for real `x > 0`.
fn riccati_xi(x: f64, n: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut xi = Vec::with_capacity(n + 1);
    let xm1 = Complex64::new(x.cos(), x.sin());
    xi.push(Complex64::new(x.sin(), -x.cos()));
    if n >= 1 {
        xi.push(xi[0] / x - xm1);
    }
    for k in 2..=n {
        let next = (2 * k - 1) as f64 / x * xi[k - 1] - xi[k - 2];
        xi.push(next);
    }
    let mut dxi = Vec::with_capacity(n + 1);
    dxi.push(xm1);
    for k in 1..=n {
        dxi.push(xi[k - 1] - k as f64 * xi[k] / x);
    }
    (xi, dxi)
}

/// Angular functions `pi_k`, `tau_k` for `k = 0..=n` at `mu = cos(theta)`.
fn angular(mu: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pi = vec![0.0; n + 1];
    let mut tau = vec![0.0; n + 1];
    if n >= 1 {
        pi[1] = 1.0;
        tau[1] = mu;
    }
    for k in 2..=n {
        let kf = k as f64;
        pi[k] = (2.0 * kf - 1.0) / (kf - 1.0) * mu * pi[k - 1] - kf / (kf - 1.0) * pi[k - 2];
        tau[k] = kf * mu * pi[k] - (kf + 1.0) * pi[k - 1];
    }
    (pi, tau)
}

fn coefficients(x: f64, m: Complex64, mu_r: f64, order: usize) -> [Vec<Complex64>; 4] {
    let mx = m * x;
    let (psi, dpsi) = riccati_psi(Complex64::new(x, 0.0), order);
    let (xi, dxi) = riccati_xi(x, order);
    let (psi_m, dpsi_m) = riccati_psi(mx, order);
    let dm = log_derivatives(mx, order);
    let mut out = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for k in 1..=order {
        let (p, dp, z, dz, d) = (psi[k], dpsi[k], xi[k], dxi[k], dm[k]);
        out[0].push((m * dp - mu_r * d * p) / (m * dz - mu_r * d * z));
        out[1].push((mu_r * dp - m * d * p) / (mu_r * dz - m * d * z));
        let w = p * dz - z * dp;
        out[2].push(mu_r * w / (mu_r * psi_m[k] / m * dz - z * dpsi_m[k]));
        out[3].push(mu_r * m * w / (m * psi_m[k] * dz - mu_r * z * dpsi_m[k]));
    }
    out
}

/// Largest field-term magnitude of order `k` on the sphere surface, where
/// the series converge slowest.
fn surface_term(x: f64, m: Complex64, mu_r: f64, k: usize) -> f64 {
    let (psi, _) = riccati_psi(Complex64::new(x, 0.0), k);
    let (xi, _) = riccati_xi(x, k);
    let (psi_m, _) = riccati_psi(m * x, k);
    let [a, b, c, d] = coefficients(x, m, mu_r, k);
    let i = k - 1;
    let t = [
        psi[k].norm(),
        (a[i] * xi[k]).norm(),
        (b[i] * xi[k]).norm(),
        (c[i] * psi_m[k]).norm(),
        (d[i] * psi_m[k]).norm(),
    ];
    (2 * k + 1) as f64 * t.into_iter().fold(0.0, f64::max) / x.min(1.0)
}

/// Solves with the smallest order `L >= truncation_order(x)` whose surface
/// field terms fall below 1e-15, and checks that `a_n`, `b_n` have decayed
/// below 1e-15 by order `2L`.
pub fn mie_solve(radius: f64, ke: f64, n: Complex64, mu_ratio: f64) -> Result<MieSolution> {
    let x = ke * radius;
    let floor = truncation_order(x);
    mie_solve_with_order(radius, ke, n, mu_ratio, floor)?;
    let order = (floor..=4 * floor + 10)
        .find(|&k| surface_term(x, n, mu_ratio, k) < 1e-15)
        .ok_or(BemError::TruncationFailure(floor))?;
    let check = mie_solve_with_order(radius, ke, n, mu_ratio, 2 * order)?;
    let tail = check.a[2 * order - 1].norm().max(check.b[2 * order - 1].norm());
    if !(tail < 1e-15) {
        return Err(BemError::TruncationFailure(order));
    }
    mie_solve_with_order(radius, ke, n, mu_ratio, order)
}

/// Solves with an explicit truncation order.
pub fn mie_solve_with_order(radius: f64, ke: f64, n: Complex64, mu_ratio: f64, order: usize) -> Result<MieSolution> {
    if !(radius > 0.0 && ke > 0.0 && mu_ratio > 0.0) {
        return Err(BemError::InvalidParameter("radius, wavenumber and permeability must be positive".into()));
    }
    if n.im < 0.0 || n.norm() == 0.0 {
        return Err(BemError::InvalidParameter("refractive index needs Im(n) >= 0 and n != 0".into()));
    }
    if order == 0 {
        return Err(BemError::InvalidParameter("truncation order must be positive".into()));
    }
    let [a, b, c, d] = coefficients(ke * radius, n, mu_ratio, order);
    if a.iter().chain(&b).chain(&c).chain(&d).any(|z| !z.is_finite()) {
        return Err(BemError::TruncationFailure(order));
    }
    Ok(MieSolution { radius, ke, n, mu_ratio, a, b, c, d })
}

/// Rotation to the frame with `x' = p/|p|`, `z' = d`.
struct Frame {
    ex: Vector3<f64>,
    ey: Vector3<f64>,
    ez: Vector3<f64>,
    amplitude: f64,
}

impl Frame {
    fn new(p: &Vector3<f64>, d: &Vector3<f64>) -> Self {
        let amplitude = p.norm();
        let ex = if amplitude > 0.0 { p / amplitude } else { d.cross(&Vector3::x()).normalize() };
        let ez = d.normalize();
        Self { ey: ez.cross(&ex), ex, ez, amplitude }
    }

    fn local(&self, x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(x.dot(&self.ex), x.dot(&self.ey), x.dot(&self.ez))
    }

    fn global(&self, v: [Complex64; 3]) -> CVec {
        let mut out = [Complex64::default(); 3];
        for i in 0..3 {
            out[i] = v[0] * self.ex[i] + v[1] * self.ey[i] + v[2] * self.ez[i];
        }
        out
    }
}

/// Spherical angles and unit vectors of a local point.
struct Angles {
    r: f64,
    cos_t: f64,
    sin_t: f64,
    cos_p: f64,
    sin_p: f64,
}

impl Angles {
    fn new(x: &Vector3<f64>) -> Self {
        let r = x.norm();
        let rho = x.x.hypot(x.y);
        let (cos_p, sin_p) = if rho > 0.0 { (x.x / rho, x.y / rho) } else { (1.0, 0.0) };
        let (cos_t, sin_t) = if r > 0.0 { (x.z / r, rho / r) } else { (1.0, 0.0) };
        Self { r, cos_t, sin_t, cos_p, sin_p }
    }

    /// Cartesian components of `(E_r, E_theta, E_phi)`.
    fn to_cartesian(&self, e: [Complex64; 3]) -> [Complex64; 3] {
        let r_hat = [self.sin_t * self.cos_p, self.sin_t * self.sin_p, self.cos_t];
        let t_hat = [self.cos_t * self.cos_p, self.cos_t * self.sin_p, -self.sin_t];
        let p_hat = [-self.sin_p, self.cos_p, 0.0];
        let mut out = [Complex64::default(); 3];
        for i in 0..3 {
            out[i] = e[0] * r_hat[i] + e[1] * t_hat[i] + e[2] * p_hat[i];
        }
        out
    }
}

fn order_prefactor(k: usize) -> Complex64 {
    let kf = k as f64;
    Complex64::i().powu(k as u32) * ((2.0 * kf + 1.0) / (kf * (kf + 1.0)))
}

impl MieSolution {
    pub fn order(&self) -> usize {
        self.a.len()
    }

    pub fn size_parameter(&self) -> f64 {
        self.ke * self.radius
    }

    pub fn interior_wavenumber(&self) -> Complex64 {
        self.n * self.ke
    }

    /// Extinction and scattering efficiencies.
    pub fn efficiencies(&self) -> (f64, f64) {
        let x2 = self.size_parameter().powi(2);
        let mut ext = 0.0;
        let mut sca = 0.0;
        for (k, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let w = (2 * k + 3) as f64;
            ext += w * (a + b).re;
            sca += w * (a.norm_sqr() + b.norm_sqr());
        }
        (2.0 * ext / x2, 2.0 * sca / x2)
    }

    /// Local-frame field from series with Riccati functions `z(rho)` and
    /// `z'(rho)`: `sum E_n (alpha_n M_o1n - beta_n N_e1n)` (BH 4.50).
    fn series(
        &self,
        ang: &Angles,
        rho: Complex64,
        z: &[Complex64],
        dz: &[Complex64],
        alpha: &[Complex64],
        beta: &[Complex64],
    ) -> [Complex64; 3] {
        let order = alpha.len();
        let (pi, tau) = angular(ang.cos_t, order);
        let mut e = [Complex64::default(); 3];
        for k in 1..=order {
            let en = order_prefactor(k);
            let kf = k as f64;
            // z_n(rho) = z/rho; [rho z_n]'/rho = dz/rho.
            let (zr, dzr) = (z[k] / rho, dz[k] / rho);
            let m_t = ang.cos_p * pi[k] * zr;
            let m_p = -ang.sin_p * tau[k] * zr;
            let n_r = ang.cos_p * kf * (kf + 1.0) * ang.sin_t * pi[k] * zr / rho;
            let n_t = ang.cos_p * tau[k] * dzr;
            let n_p = -ang.sin_p * pi[k] * dzr;
            let (al, be) = (alpha[k - 1] * en, beta[k - 1] * en);
            e[0] -= be * n_r;
            e[1] += al * m_t - be * n_t;
            e[2] += al * m_p - be * n_p;
        }
        e
    }

    /// Scattered field outside the sphere.
    pub fn scattered_field(&self, p: &Vector3<f64>, d: &Vector3<f64>, x: &Vector3<f64>) -> CVec {
        let frame = Frame::new(p, d);
        let ang = Angles::new(&frame.local(x));
        let rho = Complex64::new(self.ke * ang.r, 0.0);
        let (xi, dxi) = riccati_xi(rho.re, self.order());
        // E_s = sum E_n (i a_n N3_e1n - b_n M3_o1n)
        let alpha: Vec<_> = self.b.iter().map(|b| -b).collect();
        let beta: Vec<_> = self.a.iter().map(|a| -Complex64::i() * a).collect();
        let e = self.series(&ang, rho, &xi, &dxi, &alpha, &beta);
        frame.global(ang.to_cartesian(e).map(|v| v * frame.amplitude))
    }

    /// Field inside the sphere.
    pub fn interior_field(&self, p: &Vector3<f64>, d: &Vector3<f64>, x: &Vector3<f64>) -> CVec {
        let frame = Frame::new(p, d);
        let local = frame.local(x);
        let ang = Angles::new(&local);
        let rho = self.interior_wavenumber() * ang.r;
        if rho.norm() < 1e-10 {
            // Only the n = 1 electric term survives at the centre: -i d_1 E_1 (2/3) x'.
            let v = -Complex64::i() * self.d[0] * order_prefactor(1) * (2.0 / 3.0);
            return frame.global([v * frame.amplitude, Complex64::default(), Complex64::default()]);
        }
        let (psi, dpsi) = riccati_psi(rho, self.order());
        // E_1 = sum E_n (c_n M1_o1n - i d_n N1_e1n)
        let beta: Vec<_> = self.d.iter().map(|d| Complex64::i() * d).collect();
        let e = self.series(&ang, rho, &psi, &dpsi, &self.c, &beta);
        frame.global(ang.to_cartesian(e).map(|v| v * frame.amplitude))
    }

    /// Total field: incident plus scattered outside, interior field inside.
    pub fn field(&self, p: &Vector3<f64>, d: &Vector3<f64>, x: &Vector3<f64>) -> CVec {
        if x.norm() < self.radius {
            return self.interior_field(p, d, x);
        }
        let phase = Complex64::new(0.0, self.ke * d.dot(x)).exp();
        let s = self.scattered_field(p, d, x);
        [s[0] + phase * p.x, s[1] + phase * p.y, s[2] + phase * p.z]
    }

    /// Far-field pattern `F(x_hat)` with `E_s ~ F exp(i k r) / r`.
    pub fn far_field(&self, p: &Vector3<f64>, d: &Vector3<f64>, dirs: &[Vector3<f64>]) -> Vec<CVec> {
        let frame = Frame::new(p, d);
        dirs.iter()
            .map(|u| {
                let ang = Angles::new(&frame.local(u));
                let (pi, tau) = angular(ang.cos_t, self.order());
                let mut s1 = Complex64::default();
                let mut s2 = Complex64::default();
                for k in 1..=self.order() {
                    let w = (2 * k + 1) as f64 / (k * (k + 1)) as f64;
                    let (a, b) = (self.a[k - 1], self.b[k - 1]);
                    s1 += w * (a * pi[k] + b * tau[k]);
                    s2 += w * (a * tau[k] + b * pi[k]);
                }
                let scale = Complex64::i() / self.ke * frame.amplitude;
                let e = [Complex64::default(), scale * ang.cos_p * s2, -scale * ang.sin_p * s1];
                frame.global(ang.to_cartesian(e))
            })
            .collect()
    }
}

/// Outcome of the oracle's internal consistency checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MieSelfCheck {
    /// `|Q_ext - Q_sca| / Q_ext` for real `n = 1.311`, `x = 4`.
    pub energy_balance: f64,
    /// Relative deviation of `a_1` from the Rayleigh limit at `x = 0.01`, `n = 1.5`.
    pub rayleigh: f64,
    /// Largest relative change of near- and far-field samples when doubling the order.
    pub truncation: f64,
}

impl MieSelfCheck {
    pub fn passed(&self) -> bool {
        self.energy_balance < 1e-10 && self.rayleigh < 1e-2 && self.truncation < 1e-12
    }
}

/// Small-sphere electric dipole coefficient `-(2i x^3 / 3)(n^2 - 1)/(n^2 + 2)`.
pub fn rayleigh_a1(x: f64, n: Complex64) -> Complex64 {
    let n2 = n * n;
    -Complex64::i() * (2.0 * x.powi(3) / 3.0) * (n2 - 1.0) / (n2 + 2.0)
}

fn max_relative_change(a: &[CVec], b: &[CVec]) -> f64 {
    let scale = a.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).norm() / scale)
        .fold(0.0, f64::max)
}

/// Runs energy balance, Rayleigh limit and truncation convergence checks.
pub fn self_check() -> Result<MieSelfCheck> {
    let lossless = mie_solve(1.0, 4.0, Complex64::new(1.311, 0.0), 1.0)?;
    let (ext, sca) = lossless.efficiencies();
    let energy_balance = (ext - sca).abs() / ext;

    let n = Complex64::new(1.5, 0.0);
    let small = mie_solve(0.01, 1.0, n, 1.0)?;
    let reference = rayleigh_a1(0.01, n);
    let rayleigh = (small.a[0] - reference).norm() / reference.norm();

    let n = Complex64::new(1.311, 2.289e-9);
    let base = mie_solve(1.0, 2.0, n, 1.0)?;
    let doubled = mie_solve_with_order(1.0, 2.0, n, 1.0, 2 * base.order())?;
    let p = Vector3::new(1.0, 0.0, 0.0);
    let d = Vector3::new(0.0, 0.0, 1.0);
    let points: Vec<Vector3<f64>> = [
        [0.3, 0.2, -0.1],
        [0.0, 0.0, 0.0],
        [0.7, -0.4, 0.3],
        [1.2, 0.5, -0.8],
        [-2.0, 1.0, 3.0],
    ]
    .iter()
    .map(|v| Vector3::new(v[0], v[1], v[2]))
    .collect();
    let dirs: Vec<Vector3<f64>> = (0..12)
        .map(|i| {
            let t = 0.1 + i as f64 * 0.25;
            Vector3::new(t.sin() * (2.0 * t).cos(), t.sin() * (2.0 * t).sin(), t.cos())
        })
        .collect();
    let fa: Vec<CVec> = points.iter().map(|x| base.field(&p, &d, x)).collect();
    let fb: Vec<CVec> = points.iter().map(|x| doubled.field(&p, &d, x)).collect();
    let truncation = max_relative_change(&fa, &fb)
        .max(max_relative_change(&base.far_field(&p, &d, &dirs), &doubled.far_field(&p, &d, &dirs)));
    Ok(MieSelfCheck { energy_balance, rayleigh, truncation })
}

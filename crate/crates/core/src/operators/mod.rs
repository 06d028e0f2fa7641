//! Galerkin discretisation of the electric (`S`) and magnetic (`C`)
//! boundary operators, the twisted mass matrix, and the potentials.
//!
//! All bilinear forms use the twisted pairing `<a, b> = int a . (n x b)`.
//! With `gamma_D u = u x n` one has `(a x n) . (n x v) = -a . v`, so
//!
//! ```text
//! <S u, v> = -ik  int int G v(x).u(y) - 1/(ik) int int G div v(x) div u(y)
//! <C u, v> = -int int grad_x G(x, y) . (u(y) x v(x))
//! ```
//!
//! Both forms are symmetric under exchanging `u` and `v`, which the
//! assembler uses to halve the work. The principal-value `C` is assembled
//! as is; the `+-I/2` jump terms are added by the caller through the mass
//! matrix.

mod assembly;
mod dump;
mod potentials;

pub use assembly::{
    assemble_c, assemble_mass, assemble_s, assemble_self_blocks, assemble_cross_blocks,
    twisted_gram, l2_gram, OperatorBlocks,
};
pub use dump::{read_block, write_block, BlockKind};
pub use potentials::{
    far_field_e, far_field_h, potential_e, potential_h, CVector3, Density, MIN_FIELD_DISTANCE,
};

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{BemError, Result};
use crate::mesh::Point;

/// A homogeneous medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    pub k: Complex64,
    /// Relative permeability.
    pub mu: f64,
}

impl Medium {
    pub fn new(k: Complex64, mu: f64) -> Result<Self> {
        let m = Self { k, mu };
        m.validate()?;
        Ok(m)
    }

    /// Medium with wavenumber `n * k_e`.
    pub fn from_index(n: Complex64, ke: f64, mu: f64) -> Result<Self> {
        Self::new(n * ke, mu)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.re.is_finite() && self.k.im.is_finite()) || self.k.norm() == 0.0 {
            return Err(BemError::InvalidParameter(format!("wavenumber {} must be finite and nonzero", self.k)));
        }
        if self.k.im < 0.0 {
            return Err(BemError::InvalidParameter(format!(
                "wavenumber {} has negative imaginary part (gain medium)",
                self.k
            )));
        }
        if !self.mu.is_finite() || self.mu == 0.0 {
            return Err(BemError::InvalidParameter("permeability must be finite and nonzero".into()));
        }
        Ok(())
    }
}

/// `exp(ik|x - y|) / (4 pi |x - y|)`.
pub fn green(x: &Point, y: &Point, k: Complex64) -> Result<Complex64> {
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(BemError::CoincidentPoints);
    }
    Ok(green_r(r, k))
}

#[inline]
pub(crate) fn green_r(r: f64, k: Complex64) -> Complex64 {
    (Complex64::i() * k * r).exp() / (4.0 * PI * r)
}

/// `G` and `G'(r) / r`, so that `grad_x G = (G'(r)/r) (x - y)`.
#[inline]
pub(crate) fn green_and_radial(r: f64, k: Complex64) -> (Complex64, Complex64) {
    let g = green_r(r, k);
    let h = g * (Complex64::i() * k * r - 1.0) / (r * r);
    (g, h)
}

/// Complex 3-vector with just the operations the assembler needs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct CVec3(pub [Complex64; 3]);

impl CVec3 {
    #[inline]
    pub fn add_scaled(&mut self, s: Complex64, p: &Point) {
        self.0[0] += s * p.x;
        self.0[1] += s * p.y;
        self.0[2] += s * p.z;
    }

    #[inline]
    pub fn add(&mut self, o: &CVec3, w: f64) {
        for i in 0..3 {
            self.0[i] += o.0[i] * w;
        }
    }

    #[inline]
    pub fn dot(&self, p: &Point) -> Complex64 {
        self.0[0] * p.x + self.0[1] * p.y + self.0[2] * p.z
    }

    /// `self x p`.
    #[inline]
    pub fn cross(&self, p: &Point) -> CVec3 {
        let a = &self.0;
        CVec3([a[1] * p.z - a[2] * p.y, a[2] * p.x - a[0] * p.z, a[0] * p.y - a[1] * p.x])
    }

    pub fn scale(&self, s: Complex64) -> CVec3 {
        CVec3(self.0.map(|v| v * s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn green_values() {
        let o = Point::zeros();
        let g = green(&o, &Point::new(1.0, 0.0, 0.0), Complex64::new(0.0, 0.0)).unwrap();
        assert!((g.re - 0.079_577_471_545_947_67).abs() < 1e-15 && g.im == 0.0);
        let g = green(&o, &Point::new(0.0, PI, 0.0), Complex64::new(1.0, 0.0)).unwrap();
        assert!((g - Complex64::new(-1.0 / (4.0 * PI * PI), 0.0)).norm() < 1e-15);
        // Reference from a 30-digit evaluation.
        let g = green(&o, &Point::new(0.0, 0.0, 1.0), Complex64::new(1.0, 0.2)).unwrap();
        let exact = Complex64::new(0.035_202_058_521_791_461, 0.054_823_957_865_591_950);
        assert!((g - exact).norm() < 1e-14);
        assert!(matches!(green(&o, &o, Complex64::new(1.0, 0.0)), Err(BemError::CoincidentPoints)));
    }

    #[test]
    fn radial_derivative_matches_finite_difference() {
        let k = Complex64::new(2.0, 0.3);
        let r = 0.7;
        let (_, h) = green_and_radial(r, k);
        let d = 1e-6;
        let fd = (green_r(r + d, k) - green_r(r - d, k)) / (2.0 * d);
        assert!((h * r - fd).norm() < 1e-8);
    }

    #[test]
    fn media_validation() {
        assert!(Medium::new(Complex64::new(1.0, -0.1), 1.0).is_err());
        assert!(Medium::new(Complex64::new(1.0, 0.1), 0.0).is_err());
        let m = Medium::from_index(Complex64::new(1.311, 2.289e-9), 4.0, 1.0).unwrap();
        assert!((m.k.re - 5.244).abs() < 1e-12);
    }
}

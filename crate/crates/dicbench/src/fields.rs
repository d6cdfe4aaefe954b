//! Analytic deformation fields used as ground truth.
//!
//! A [`DeformationField`] maps a point of the undeformed surface to its
//! displacement, with analytic displacement gradients and strains. The
//! cantilever bending field is the benchmark field; rigid translation and
//! affine fields exercise the correlation engines with exactly known answers.
//!
//! Coordinates are in units of the specimen length (`L = 1` for the
//! normalized benchmark geometry). The mapping to image pixels is owned by
//! the simulator, not by the fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Displacement gradient tensor components at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub ux: f64,
    pub uy: f64,
    pub vx: f64,
    pub vy: f64,
}

/// Engineering strain components at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strain {
    pub ex: f64,
    pub ey: f64,
    pub gxy: f64,
}

impl Gradient {
    pub const ZERO: Gradient = Gradient { ux: 0.0, uy: 0.0, vx: 0.0, vy: 0.0 };

    /// Symmetric strain combinations of the gradient components.
    pub fn strain(&self) -> Strain {
        Strain { ex: self.ux, ey: self.vy, gxy: self.uy + self.vx }
    }
}

/// An evaluable deformation field with analytic gradients.
///
/// `strain` is defined through `gradient`, so the two are consistent for
/// every implementation.
pub trait DeformationField: Send + Sync {
    /// Displacement `(u, v)` at `(x, y)`.
    fn displacement(&self, x: f64, y: f64) -> Result<(f64, f64)>;

    /// Displacement gradient at `(x, y)`.
    fn gradient(&self, x: f64, y: f64) -> Result<Gradient>;

    /// Strain components at `(x, y)`.
    fn strain(&self, x: f64, y: f64) -> Result<Strain> {
        Ok(self.gradient(x, y)?.strain())
    }

    /// One-line human-readable description for metadata sidecars.
    fn describe(&self) -> String;
}

/// Material and geometry constants of the bent cantilever.
///
/// The beam occupies `0 <= x <= length`, `-half_width <= y <= half_width`,
/// is fixed at `x = length` and loaded at the free end `x = 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CantileverParams {
    /// Applied force `P`.
    pub force: f64,
    /// Young's modulus `E`.
    pub young: f64,
    /// Second moment of area `I`.
    pub inertia: f64,
    /// Poisson's ratio `nu`.
    pub poisson: f64,
    /// Shear modulus `G`.
    pub shear: f64,
    /// Half-width `c` of the beam cross section.
    pub half_width: f64,
    /// Beam length `L`.
    pub length: f64,
    /// Dimensionless multiplier applied to `(u, v)` and all derived
    /// quantities. The benchmark fits it so that `max |v|` hits a target.
    pub amplitude_scale: f64,
}

impl CantileverParams {
    /// Aluminium beam constants in SI units (force in N, moduli in Pa,
    /// lengths in m).
    pub fn aluminium() -> Self {
        CantileverParams {
            force: 4.8,
            young: 69e9,
            inertia: 175e-12,
            poisson: 0.334,
            shear: 26e9,
            half_width: 25e-3,
            length: 110e-3,
            amplitude_scale: 1.0,
        }
    }

    /// Normalized benchmark geometry: unit length, half-width 0.5 so the
    /// beam fills a square image, and a cross-section second moment
    /// consistent with the plane-stress strain formulas (`I = 2c^3/3` per
    /// unit thickness). Moduli keep the aluminium ratios.
    pub fn normalized_benchmark() -> Self {
        let c = 0.5;
        CantileverParams {
            force: 4.8,
            young: 69e9,
            inertia: 2.0 * c * c * c / 3.0,
            poisson: 0.334,
            shear: 26e9,
            half_width: c,
            length: 1.0,
            amplitude_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("E", self.young),
            ("G", self.shear),
            ("I", self.inertia),
            ("c", self.half_width),
            ("L", self.length),
            ("amplitude_scale", self.amplitude_scale),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return Err(Error::Parameter(format!(
                "poisson ratio must be in [0, 0.5), got {}",
                self.poisson
            )));
        }
        Ok(())
    }

    fn check_domain(&self, x: f64, y: f64) -> Result<()> {
        const TOL: f64 = 1e-9;
        if x < -TOL
            || x > self.length + TOL
            || y < -self.half_width - TOL
            || y > self.half_width + TOL
        {
            return Err(Error::OutOfDomain { x, y });
        }
        Ok(())
    }
}

/// Displacement of the bent cantilever at `(x, y)`.
///
/// `u = (P y / 6I) [ (1/E) {3(L^2 - x^2) - nu y^2} + (1/G) (y^2 - 3 c^2) ]`
/// `v = (P / 6EI) [ x (3 nu y^2 + x^2) + L^2 (2L - 3x) ]`
///
/// both multiplied by `amplitude_scale`. `u = v = 0` at the fixed end
/// `(L, 0)`.
pub fn cantilever_displacement(p: &CantileverParams, x: f64, y: f64) -> Result<(f64, f64)> {
    p.check_domain(x, y)?;
    Ok(cantilever_displacement_unchecked(p, x, y))
}

fn cantilever_displacement_unchecked(p: &CantileverParams, x: f64, y: f64) -> (f64, f64) {
    let (pf, e, i, nu, g, c, l) =
        (p.force, p.young, p.inertia, p.poisson, p.shear, p.half_width, p.length);
    let u = pf * y / (6.0 * i)
        * ((3.0 * (l * l - x * x) - nu * y * y) / e + (y * y - 3.0 * c * c) / g);
    let v = pf / (6.0 * e * i) * (x * (3.0 * nu * y * y + x * x) + l * l * (2.0 * l - 3.0 * x));
    (p.amplitude_scale * u, p.amplitude_scale * v)
}

fn cantilever_gradient_unchecked(p: &CantileverParams, x: f64, y: f64) -> Gradient {
    let (pf, e, i, nu, g, c, l) =
        (p.force, p.young, p.inertia, p.poisson, p.shear, p.half_width, p.length);
    let a = p.amplitude_scale;
    let ux = -a * pf * x * y / (e * i);
    let uy = a * pf / (6.0 * i)
        * ((3.0 * (l * l - x * x) - 3.0 * nu * y * y) / e + (3.0 * y * y - 3.0 * c * c) / g);
    let vx = a * pf / (6.0 * e * i) * (3.0 * nu * y * y + 3.0 * x * x - 3.0 * l * l);
    let vy = a * pf * nu * x * y / (e * i);
    Gradient { ux, uy, vx, vy }
}

/// Plane-stress strain field of the bent cantilever.
///
/// `ex = -3Pxy / (2c^3 E)`, `ey = 3 nu Pxy / (2c^3 E)`,
/// `gxy = -(3P / 4cG) (1 - y^2/c^2)`, each times `amplitude_scale`.
///
/// These closed forms agree with the displacement derivatives exactly when
/// `I = 2c^3/3` (the plane cross section per unit thickness), which the
/// normalized benchmark geometry uses.
pub fn cantilever_strain(p: &CantileverParams, x: f64, y: f64) -> Result<Strain> {
    p.check_domain(x, y)?;
    let (pf, e, nu, g, c) = (p.force, p.young, p.poisson, p.shear, p.half_width);
    let a = p.amplitude_scale;
    let ex = -a * 3.0 * pf * x * y / (2.0 * c * c * c * e);
    let ey = a * 3.0 * nu * pf * x * y / (2.0 * c * c * c * e);
    let gxy = -a * 3.0 * pf / (4.0 * c * g) * (1.0 - y * y / (c * c));
    Ok(Strain { ex, ey, gxy })
}

/// The cantilever bending field as a [`DeformationField`].
#[derive(Debug, Clone)]
pub struct CantileverField {
    params: CantileverParams,
    allow_outside: bool,
}

impl CantileverField {
    pub fn new(params: CantileverParams) -> Result<Self> {
        params.validate()?;
        Ok(CantileverField { params, allow_outside: false })
    }

    /// Permit evaluation slightly outside the beam domain (needed when a
    /// subset overhangs the specimen edge in pixel space).
    pub fn allow_outside(mut self) -> Self {
        self.allow_outside = true;
        self
    }

    pub fn params(&self) -> &CantileverParams {
        &self.params
    }

    /// Replace the amplitude multiplier.
    pub fn with_amplitude_scale(mut self, scale: f64) -> Result<Self> {
        self.params.amplitude_scale = scale;
        self.params.validate()?;
        Ok(self)
    }

    fn check(&self, x: f64, y: f64) -> Result<()> {
        if self.allow_outside {
            Ok(())
        } else {
            self.params.check_domain(x, y)
        }
    }
}

impl DeformationField for CantileverField {
    fn displacement(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.check(x, y)?;
        Ok(cantilever_displacement_unchecked(&self.params, x, y))
    }

    fn gradient(&self, x: f64, y: f64) -> Result<Gradient> {
        self.check(x, y)?;
        Ok(cantilever_gradient_unchecked(&self.params, x, y))
    }

    fn describe(&self) -> String {
        let p = &self.params;
        format!(
            "cantilever P={} E={} I={} nu={} G={} c={} L={} scale={}",
            p.force, p.young, p.inertia, p.poisson, p.shear, p.half_width, p.length,
            p.amplitude_scale
        )
    }
}

/// Constant displacement everywhere; zero gradients and strains.
#[derive(Debug, Clone, Copy)]
pub struct RigidTranslation {
    pub dx: f64,
    pub dy: f64,
}

/// Calibration field with constant displacement `(dx, dy)`.
pub fn rigid_translation(dx: f64, dy: f64) -> RigidTranslation {
    RigidTranslation { dx, dy }
}

impl DeformationField for RigidTranslation {
    fn displacement(&self, _x: f64, _y: f64) -> Result<(f64, f64)> {
        Ok((self.dx, self.dy))
    }

    fn gradient(&self, _x: f64, _y: f64) -> Result<Gradient> {
        Ok(Gradient::ZERO)
    }

    fn describe(&self) -> String {
        format!("rigid dx={} dy={}", self.dx, self.dy)
    }
}

/// Linear field `u = dx + a11 x + a12 y`, `v = dy + a21 x + a22 y`.
///
/// Gradients are constant and equal to the coefficients, which exercises
/// the six-parameter subset model exactly.
#[derive(Debug, Clone, Copy)]
pub struct AffineField {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub dx: f64,
    pub dy: f64,
}

pub fn affine_field(a11: f64, a12: f64, a21: f64, a22: f64, dx: f64, dy: f64) -> AffineField {
    AffineField { a11, a12, a21, a22, dx, dy }
}

impl DeformationField for AffineField {
    fn displacement(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        Ok((self.dx + self.a11 * x + self.a12 * y, self.dy + self.a21 * x + self.a22 * y))
    }

    fn gradient(&self, _x: f64, _y: f64) -> Result<Gradient> {
        Ok(Gradient { ux: self.a11, uy: self.a12, vx: self.a21, vy: self.a22 })
    }

    fn describe(&self) -> String {
        format!(
            "affine a11={} a12={} a21={} a22={} dx={} dy={}",
            self.a11, self.a12, self.a21, self.a22, self.dx, self.dy
        )
    }
}

/// Evaluates an inner field at shifted coordinates.
///
/// Used to place a field whose natural domain is not the unit square (e.g.
/// the cantilever with `y` symmetric about the beam axis) under an image
/// whose normalized coordinates run over `[0, 1)^2`.
pub struct ShiftedField<F> {
    inner: F,
    x0: f64,
    y0: f64,
}

impl<F: DeformationField> ShiftedField<F> {
    pub fn new(inner: F, x0: f64, y0: f64) -> Self {
        ShiftedField { inner, x0, y0 }
    }
}

impl<F: DeformationField> DeformationField for ShiftedField<F> {
    fn displacement(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.inner.displacement(x + self.x0, y + self.y0)
    }

    fn gradient(&self, x: f64, y: f64) -> Result<Gradient> {
        self.inner.gradient(x + self.x0, y + self.y0)
    }

    fn describe(&self) -> String {
        format!("{} shifted by ({}, {})", self.inner.describe(), self.x0, self.y0)
    }
}

/// Largest `|v|` over the field domain, located by dense sampling.
///
/// `nx x ny` samples over `[x_lo, x_hi] x [y_lo, y_hi]`; points outside a
/// strict domain are skipped.
pub fn max_abs_v(
    field: &dyn DeformationField,
    (x_lo, x_hi): (f64, f64),
    (y_lo, y_hi): (f64, f64),
    samples: usize,
) -> f64 {
    let n = samples.max(2);
    let mut best = 0.0f64;
    for i in 0..n {
        let x = x_lo + (x_hi - x_lo) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let y = y_lo + (y_hi - y_lo) * j as f64 / (n - 1) as f64;
            if let Ok((_, v)) = field.displacement(x, y) {
                best = best.max(v.abs());
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn fd_gradient(f: &dyn DeformationField, x: f64, y: f64, h: f64) -> Gradient {
        let dx = |s: f64| f.displacement(x + s, y).unwrap();
        let dy = |s: f64| f.displacement(x, y + s).unwrap();
        let (up, vp) = dx(h);
        let (um, vm) = dx(-h);
        let (uq, vq) = dy(h);
        let (ur, vr) = dy(-h);
        Gradient {
            ux: (up - um) / (2.0 * h),
            vx: (vp - vm) / (2.0 * h),
            uy: (uq - ur) / (2.0 * h),
            vy: (vq - vr) / (2.0 * h),
        }
    }

    #[test]
    fn fixed_end_has_zero_displacement() {
        let p = CantileverParams::aluminium();
        let (u, v) = cantilever_displacement(&p, p.length, 0.0).unwrap();
        assert_abs_diff_eq!(u, 0.0);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-18);
    }

    #[test]
    fn free_end_deflection_matches_beam_formula() {
        // v(0,0) = P L^3 / (3 E I), from collapsing the bracket at x = y = 0.
        let p = CantileverParams::aluminium();
        let (u, v) = cantilever_displacement(&p, 0.0, 0.0).unwrap();
        let expect = p.force * p.length.powi(3) / (3.0 * p.young * p.inertia);
        assert_abs_diff_eq!(u, 0.0);
        assert_relative_eq!(v, expect, max_relative = 1e-12);
    }

    #[test]
    fn strain_free_surface_and_neutral_axis() {
        let p = CantileverParams::aluminium();
        let s_top = cantilever_strain(&p, 0.04, p.half_width).unwrap();
        assert_abs_diff_eq!(s_top.gxy, 0.0, epsilon = 1e-15);
        let s_axis = cantilever_strain(&p, 0.07, 0.0).unwrap();
        assert_abs_diff_eq!(s_axis.ex, 0.0);
        assert_abs_diff_eq!(s_axis.ey, 0.0);
        let expect_gxy = -3.0 * p.force / (4.0 * p.half_width * p.shear);
        assert_relative_eq!(s_axis.gxy, expect_gxy, max_relative = 1e-12);
    }

    #[test]
    fn strain_formulas_match_gradients_for_consistent_section() {
        // With I = 2c^3/3 the closed-form strains equal the displacement
        // derivatives; two independent routes to the same numbers.
        let p = CantileverParams::normalized_benchmark();
        let f = CantileverField::new(p).unwrap();
        for &(x, y) in &[(0.1, 0.3), (0.5, -0.2), (0.9, 0.45), (0.33, 0.0)] {
            let s1 = cantilever_strain(&p, x, y).unwrap();
            let s2 = f.strain(x, y).unwrap();
            assert_relative_eq!(s1.ex, s2.ex, max_relative = 1e-10, epsilon = 1e-18);
            assert_relative_eq!(s1.ey, s2.ey, max_relative = 1e-10, epsilon = 1e-18);
            assert_relative_eq!(s1.gxy, s2.gxy, max_relative = 1e-10, epsilon = 1e-18);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fields: Vec<Box<dyn DeformationField>> = vec![
            Box::new(CantileverField::new(CantileverParams::normalized_benchmark()).unwrap()
                .allow_outside()),
            Box::new(affine_field(0.01, -0.003, 0.002, 0.007, 0.1, -0.2)),
            Box::new(rigid_translation(0.3, -0.4)),
        ];
        for f in &fields {
            for &h in &[1e-5, 1e-6] {
                for &(x, y) in &[(0.2, 0.1), (0.7, -0.3), (0.5, 0.4)] {
                    let g = f.gradient(x, y).unwrap();
                    let fd = fd_gradient(f.as_ref(), x, y, h);
                    for (a, b) in [(g.ux, fd.ux), (g.uy, fd.uy), (g.vx, fd.vx), (g.vy, fd.vy)] {
                        assert_relative_eq!(a, b, max_relative = 1e-4, epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn strain_is_symmetric_combination_of_gradient() {
        let f = CantileverField::new(CantileverParams::normalized_benchmark()).unwrap();
        let g = f.gradient(0.4, 0.2).unwrap();
        let s = f.strain(0.4, 0.2).unwrap();
        assert_relative_eq!(s.ex, g.ux, max_relative = 1e-12);
        assert_relative_eq!(s.ey, g.vy, max_relative = 1e-12);
        assert_relative_eq!(s.gxy, g.uy + g.vx, max_relative = 1e-12);
    }

    #[test]
    fn rigid_and_affine_reference_cases() {
        let id = rigid_translation(0.0, 0.0);
        assert_eq!(id.displacement(0.3, 0.9).unwrap(), (0.0, 0.0));
        assert_eq!(id.strain(0.1, 0.1).unwrap(), Strain { ex: 0.0, ey: 0.0, gxy: 0.0 });

        let r = rigid_translation(0.3, 0.0);
        assert_eq!(r.gradient(0.5, 0.5).unwrap(), Gradient::ZERO);

        let s = 0.004;
        let a = affine_field(s, 0.0, 0.0, 0.0, 0.0, 0.0);
        let st = a.strain(0.2, 0.8).unwrap();
        assert_eq!(st, Strain { ex: s, ey: 0.0, gxy: 0.0 });

        let g = 0.006;
        let sh = affine_field(0.0, g, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(sh.strain(0.4, 0.1).unwrap().gxy, g);

        let degenerate = affine_field(0.0, 0.0, 0.0, 0.0, 0.12, -0.05);
        assert_eq!(degenerate.displacement(0.9, 0.2).unwrap(), (0.12, -0.05));
    }

    #[test]
    fn cantilever_is_linear_in_force_and_scale() {
        let p = CantileverParams::normalized_benchmark();
        let mut kp = p;
        kp.force *= 3.0;
        let (u1, v1) = cantilever_displacement(&p, 0.3, 0.2).unwrap();
        let (u3, v3) = cantilever_displacement(&kp, 0.3, 0.2).unwrap();
        assert_relative_eq!(u3, 3.0 * u1, max_relative = 1e-12);
        assert_relative_eq!(v3, 3.0 * v1, max_relative = 1e-12);

        let mut sp = p;
        sp.amplitude_scale = 7.5;
        let (us, vs) = cantilever_displacement(&sp, 0.3, 0.2).unwrap();
        assert_relative_eq!(us, 7.5 * u1, max_relative = 1e-12);
        assert_relative_eq!(vs, 7.5 * v1, max_relative = 1e-12);
    }

    #[test]
    fn zero_amplitude_limit_has_zero_strain() {
        let mut p = CantileverParams::normalized_benchmark();
        p.amplitude_scale = 1e-300;
        let f = CantileverField::new(p).unwrap();
        let s = f.strain(0.5, 0.25).unwrap();
        assert!(s.ex.abs() < 1e-280 && s.ey.abs() < 1e-280 && s.gxy.abs() < 1e-280);
    }

    #[test]
    fn domain_violations_are_rejected() {
        let p = CantileverParams::aluminium();
        assert!(matches!(
            cantilever_displacement(&p, -0.01, 0.0),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(cantilever_strain(&p, 0.05, p.half_width * 1.5).is_err());
        let relaxed = CantileverField::new(p).unwrap().allow_outside();
        assert!(relaxed.displacement(-0.01, 0.0).is_ok());
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = CantileverParams::aluminium();
        p.poisson = 0.6;
        assert!(p.validate().is_err());
        let mut q = CantileverParams::aluminium();
        q.young = 0.0;
        assert!(q.validate().is_err());
        let mut r = CantileverParams::aluminium();
        r.amplitude_scale = -1.0;
        assert!(r.validate().is_err());
    }
}

//! Deterministic ball, annulus and sphere quadrature.
//!
//! Balls are integrated in polar form: a composite 4-point Gauss-Legendre
//! rule in the radius (with the `rho^{d-1}` Jacobian folded into the weights)
//! times a spherical rule. The circle uses equally spaced angles offset by
//! half a step, so no sample sits on a coordinate axis. The 2-sphere uses a
//! fixed product design: composite Gauss-Legendre in `cos(theta)` times
//! equally spaced azimuths. Every rule is symmetric under `x -> -x` and under
//! coordinate reflections, which keeps half-space indicators through the
//! centre exact.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::BallWindow;

const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Relative tolerance of the calibration gate on `|B_1|`.
pub const CALIBRATION_TOL: f64 = 1e-3;

/// Volume `omega_d` of the unit ball.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        d => {
            // omega_d = omega_{d-2} * 2 pi / d
            unit_ball_volume(d - 2) * 2.0 * PI / d as f64
        }
    }
}

/// Area of the unit sphere `S^{d-1}`.
pub fn unit_sphere_area(dim: usize) -> f64 {
    dim as f64 * unit_ball_volume(dim)
}

/// Composite 4-point Gauss-Legendre nodes and weights on `[a, b]`.
fn composite_gl4(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let width = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(4 * panels);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
            out.push((mid + 0.5 * width * x, 0.5 * width * w));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QuadratureResolution {
    /// Gauss-Legendre panels along the radius (4 nodes each).
    pub radial_panels: usize,
    /// Angles on the circle (d = 2) or azimuths on the sphere (d = 3).
    pub angular: usize,
}

impl QuadratureResolution {
    pub fn default_for(dim: usize) -> Self {
        match dim {
            2 => Self {
                radial_panels: 16,
                angular: 256,
            },
            _ => Self {
                radial_panels: 12,
                angular: 48,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Quadrature {
    dim: usize,
    /// Nodes on `[0, 1]` with weights summing to 1.
    radial: Vec<(f64, f64)>,
    /// Unit directions and weights summing to `|S^{d-1}|`.
    sphere: Vec<([f64; 3], f64)>,
}

impl Quadrature {
    pub fn new(dim: usize, res: QuadratureResolution) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidParameter(format!("quadrature for d = {dim}")));
        }
        if res.radial_panels == 0 || res.angular < 8 {
            return Err(Error::InvalidParameter(format!(
                "quadrature resolution too coarse: {res:?}"
            )));
        }
        let radial = composite_gl4(0.0, 1.0, res.radial_panels);
        let sphere = if dim == 2 {
            let m = res.angular;
            let w = 2.0 * PI / m as f64;
            (0..m)
                .map(|j| {
                    let t = (j as f64 + 0.5) * w;
                    ([t.cos(), t.sin(), 0.0], w)
                })
                .collect()
        } else {
            let m_az = res.angular;
            let polar_panels = (res.angular / 8).max(1);
            let polar = composite_gl4(-1.0, 1.0, polar_panels);
            let w_az = 2.0 * PI / m_az as f64;
            let mut dirs = Vec::with_capacity(polar.len() * m_az);
            for &(z, wz) in &polar {
                let s = (1.0 - z * z).max(0.0).sqrt();
                for j in 0..m_az {
                    let phi = (j as f64 + 0.5) * w_az;
                    dirs.push(([s * phi.cos(), s * phi.sin(), z], wz * w_az));
                }
            }
            dirs
        };
        Ok(Self { dim, radial, sphere })
    }

    pub fn default_for(dim: usize) -> Self {
        Self::new(dim, QuadratureResolution::default_for(dim)).expect("default resolution is valid")
    }

    /// Builds a rule from explicit tables (used to exercise the calibration gate).
    pub fn from_tables(dim: usize, radial: Vec<(f64, f64)>, sphere: Vec<([f64; 3], f64)>) -> Self {
        Self { dim, radial, sphere }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radial_table(&self) -> &[(f64, f64)] {
        &self.radial
    }

    pub fn sphere_table(&self) -> &[([f64; 3], f64)] {
        &self.sphere
    }

    pub fn point_count(&self) -> usize {
        self.radial.len() * self.sphere.len()
    }

    /// Relative error of the rule on `|B_1|`.
    pub fn calibration_error(&self) -> f64 {
        let ones = self.ball_unit(|_| 1.0);
        (ones - unit_ball_volume(self.dim)).abs() / unit_ball_volume(self.dim)
    }

    /// Fails when the rule does not reproduce `omega_d` within [`CALIBRATION_TOL`].
    pub fn check_calibration(&self) -> Result<()> {
        let err = self.calibration_error();
        if !(err <= CALIBRATION_TOL) {
            return Err(Error::InvalidParameter(format!(
                "quadrature calibration error {err:e} exceeds {CALIBRATION_TOL:e}"
            )));
        }
        Ok(())
    }

    fn ball_unit(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for &(t, wt) in &self.radial {
            let jac = wt * t.powi(d as i32 - 1);
            let mut ring = 0.0;
            for (dir, ws) in &self.sphere {
                let p = [t * dir[0], t * dir[1], t * dir[2]];
                ring += ws * f(&p[..d]);
            }
            acc += jac * ring;
        }
        acc
    }

    /// `int_{B_r(c)} f`.
    pub fn ball_integral(&self, window: &BallWindow, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.try_ball_integral(window, |x| Ok(f(x)))
            .expect("infallible sampler")
    }

    pub fn try_ball_integral(&self, window: &BallWindow, f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
        self.try_annulus_integral(window.center(), 0.0, window.radius(), f)
    }

    /// `int_{B_outer(c) \ B_inner(c)} f`.
    pub fn try_annulus_integral(
        &self,
        center: &[f64],
        inner: f64,
        outer: f64,
        mut f: impl FnMut(&[f64]) -> Result<f64>,
    ) -> Result<f64> {
        if !(outer > inner && inner >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "annulus radii must satisfy 0 <= {inner} < {outer}"
            )));
        }
        let d = self.dim;
        let width = outer - inner;
        let mut acc = 0.0;
        let mut p = [0.0; 3];
        for &(t, wt) in &self.radial {
            let rho = inner + width * t;
            let jac = width * wt * rho.powi(d as i32 - 1);
            let mut ring = 0.0;
            for (dir, ws) in &self.sphere {
                for a in 0..d {
                    p[a] = center[a] + rho * dir[a];
                }
                ring += ws * f(&p[..d])?;
            }
            acc += jac * ring;
        }
        Ok(acc)
    }

    /// `int_{dB_r(c)} f dH^{d-1}`.
    pub fn sphere_integral(&self, window: &BallWindow, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.try_sphere_integral(window, |x| Ok(f(x)))
            .expect("infallible sampler")
    }

    /// Sphere integral whose sampler also receives the outward unit normal.
    pub fn try_sphere_integral_with_normal(
        &self,
        window: &BallWindow,
        mut f: impl FnMut(&[f64], &[f64]) -> Result<f64>,
    ) -> Result<f64> {
        let d = self.dim;
        let r = window.radius();
        let c = window.center();
        let scale = r.powi(d as i32 - 1);
        let mut acc = 0.0;
        let mut p = [0.0; 3];
        for (dir, ws) in &self.sphere {
            for a in 0..d {
                p[a] = c[a] + r * dir[a];
            }
            acc += ws * f(&p[..d], &dir[..d])?;
        }
        Ok(scale * acc)
    }

    pub fn try_sphere_integral(&self, window: &BallWindow, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
        self.try_sphere_integral_with_normal(window, |x, _| f(x))
    }
}

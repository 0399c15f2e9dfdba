//! Closed-form model solutions: the one-phase half-plane solution
//! `alpha (x . nu)_+` and linear maps `x -> A x`.

use crate::error::{Error, Result};
use crate::grid::{FieldView, GridSpec, VectorField, WINDOW_MARGIN_CELLS};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSolution {
    /// `U(x) = alpha (x . nu)_+` with `|nu| = 1`.
    HalfPlane { alpha: Vec<f64>, nu: Vec<f64> },
    /// `U(x) = A x` with `A` stored `k x d` row-major.
    Linear { k: usize, d: usize, a: Vec<f64> },
}

impl ModelSolution {
    pub fn half_plane(alpha: &[f64], nu: &[f64]) -> Result<Self> {
        Ok(Self::HalfPlane {
            alpha: alpha.to_vec(),
            nu: unit_vector(nu)?,
        })
    }

    /// The rank-one map `A = alpha (x) nu`.
    pub fn rank_one(alpha: &[f64], nu: &[f64]) -> Result<Self> {
        let nu = unit_vector(nu)?;
        let a = alpha.iter().flat_map(|&al| nu.iter().map(move |&n| al * n)).collect();
        Ok(Self::Linear {
            k: alpha.len(),
            d: nu.len(),
            a,
        })
    }

    pub fn linear(k: usize, d: usize, a: &[f64]) -> Result<Self> {
        if a.len() != k * d {
            return Err(Error::Dimension(format!(
                "matrix has {} entries, expected {k} x {d}",
                a.len()
            )));
        }
        Ok(Self::Linear { k, d, a: a.to_vec() })
    }

    pub fn k(&self) -> usize {
        match self {
            Self::HalfPlane { alpha, .. } => alpha.len(),
            Self::Linear { k, .. } => *k,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::HalfPlane { nu, .. } => nu.len(),
            Self::Linear { d, .. } => *d,
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::HalfPlane { alpha, nu } => {
                let s: f64 = x.iter().zip(nu).map(|(a, b)| a * b).sum::<f64>().max(0.0);
                for (o, a) in out.iter_mut().zip(alpha) {
                    *o = a * s;
                }
            }
            Self::Linear { k, d, a } => {
                for l in 0..*k {
                    out[l] = (0..*d).map(|i| a[l * d + i] * x[i]).sum();
                }
            }
        }
    }

    /// Jacobian at `x`, `k x d` row-major.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::HalfPlane { alpha, nu } => {
                let d = nu.len();
                let s: f64 = x.iter().zip(nu).map(|(a, b)| a * b).sum();
                let on = if s > 0.0 { 1.0 } else { 0.0 };
                for (l, a) in alpha.iter().enumerate() {
                    for i in 0..d {
                        out[l * d + i] = on * a * nu[i];
                    }
                }
            }
            Self::Linear { a, .. } => out[..a.len()].copy_from_slice(a),
        }
    }

    pub fn sample(&self, grid: GridSpec) -> VectorField {
        VectorField::from_fn(grid, self.k(), |x, out| self.eval(x, out))
    }

    /// The exact field as a view on `[-extent, extent]^d`, with `spacing`
    /// standing in for the grid resolution.
    pub fn view(
        &self,
        spacing: f64,
        extent: f64,
    ) -> AnalyticView<impl Fn(&[f64], &mut [f64], Option<&mut [f64]>) + Sync + '_> {
        AnalyticView::new(self.dim(), self.k(), spacing, extent, 1.0, move |x, v, j| {
            self.eval(x, v);
            if let Some(j) = j {
                self.jacobian(x, j);
            }
        })
    }
}

/// A field given by a closure returning the value and, on request, the
/// Jacobian.
pub struct AnalyticView<F> {
    dim: usize,
    k: usize,
    spacing: f64,
    extent: f64,
    norm_scale: f64,
    f: F,
}

impl<F> AnalyticView<F>
where
    F: Fn(&[f64], &mut [f64], Option<&mut [f64]>) + Sync,
{
    pub fn new(dim: usize, k: usize, spacing: f64, extent: f64, norm_scale: f64, f: F) -> Self {
        Self {
            dim,
            k,
            spacing,
            extent,
            norm_scale,
            f,
        }
    }
}

impl<F> FieldView for AnalyticView<F>
where
    F: Fn(&[f64], &mut [f64], Option<&mut [f64]>) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn components(&self) -> usize {
        self.k
    }

    fn spacing(&self) -> f64 {
        self.spacing
    }

    fn norm_scale(&self) -> f64 {
        self.norm_scale
    }

    fn check_window(&self, center: &[f64], radius: f64) -> Result<()> {
        let margin = WINDOW_MARGIN_CELLS * self.spacing;
        let lim = self.extent * (1.0 + 1e-12) - radius - margin;
        if !(radius > 0.0) || center.len() < self.dim || center[..self.dim].iter().any(|c| c.abs() > lim) {
            return Err(Error::InvalidWindow {
                center: center[..self.dim.min(center.len())].to_vec(),
                radius,
                margin,
            });
        }
        Ok(())
    }

    fn eval(&self, x: &[f64], value: &mut [f64], jacobian: Option<&mut [f64]>) -> Result<()> {
        if x[..self.dim].iter().any(|c| c.abs() > self.extent * (1.0 + 1e-12)) {
            return Err(Error::OutOfDomain {
                point: x[..self.dim].to_vec(),
                extent: self.extent,
            });
        }
        (self.f)(x, value, jacobian);
        Ok(())
    }
}

fn unit_vector(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter(format!("direction {v:?} has no length")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

//! Discrete Alt-Caffarelli energy `J(U) = int |grad U|^2 + Lambda |{|U| > 0}|`.
//!
//! The Dirichlet part is the edge form of the multilinear interpolant: a cell
//! carries `h^{d-2} / 2^{d-1}` times the sum over its edges of the squared
//! nodal differences. It is exact on affine fields, and on a fixed phase set
//! its minimizer is exactly the 5-point (7-point in 3-D) discrete harmonic
//! function, so harmonic replacement never increases `J`.
//!
//! A cell counts towards the positivity set when any of its corners has
//! `|U| > tau0`. Node regions enter cell sums through the fraction of a
//! cell's corners that belong to the region.

use crate::error::{Error, Result};
use crate::grid::{BallWindow, FieldView, GridSpec, VectorField, POSITIVITY_REL};
use crate::quadrature::Quadrature;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyParams {
    /// Energy density of the positivity set.
    pub lambda: f64,
    /// Width of the relaxed indicator used by [`smoothed_energy`].
    pub eps_smooth: f64,
    /// Relative positivity floor: `tau0 = tau_rel * max |U|`.
    pub tau_rel: f64,
}

impl EnergyParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("Lambda = {lambda} must be positive")));
        }
        Ok(Self {
            lambda,
            eps_smooth: 0.0,
            tau_rel: POSITIVITY_REL,
        })
    }

    pub fn with_smoothing(mut self, eps: f64) -> Self {
        self.eps_smooth = eps;
        self
    }

    pub fn threshold(&self, field: &VectorField) -> f64 {
        self.tau_rel * field.max_norm()
    }
}

/// A subset of grid nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRegion {
    mask: Vec<bool>,
}

impl NodeRegion {
    pub fn all(grid: &GridSpec) -> Self {
        Self {
            mask: vec![true; grid.node_count()],
        }
    }

    /// Nodes in the closed ball `|x - center| <= radius`.
    pub fn ball(grid: &GridSpec, center: &[f64], radius: f64) -> Self {
        let d = grid.dim();
        let mask = (0..grid.node_count())
            .map(|node| {
                let p = grid.node_point(node);
                let r2: f64 = (0..d).map(|a| (p[a] - center[a]).powi(2)).sum();
                r2 <= radius * radius * (1.0 + 1e-12)
            })
            .collect();
        Self { mask }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn contains(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Splits the region into the nodes satisfying `pred` and the rest.
    pub fn split(&self, grid: &GridSpec, pred: impl Fn(&[f64]) -> bool) -> (Self, Self) {
        let d = grid.dim();
        let mut a = vec![false; self.mask.len()];
        let mut b = vec![false; self.mask.len()];
        for (node, &m) in self.mask.iter().enumerate() {
            if m {
                let p = grid.node_point(node);
                if pred(&p[..d]) {
                    a[node] = true;
                } else {
                    b[node] = true;
                }
            }
        }
        (Self { mask: a }, Self { mask: b })
    }
}

/// Corner offsets and edge list of a grid cell.
#[derive(Debug, Clone)]
pub struct CellStencil {
    pub corners: Vec<usize>,
    /// Pairs of corner slots joined by an edge.
    pub edges: Vec<(usize, usize)>,
    /// `h^{d-2} / 2^{d-1}`.
    pub edge_weight: f64,
    pub volume: f64,
}

impl CellStencil {
    pub fn new(grid: &GridSpec) -> Self {
        let d = grid.dim();
        let corners = grid.corner_offsets();
        let mut edges = Vec::new();
        for a in 0..d {
            for m in 0..1usize << d {
                if m >> a & 1 == 0 {
                    edges.push((m, m | 1 << a));
                }
            }
        }
        let h = grid.spacing();
        Self {
            corners,
            edges,
            edge_weight: h.powi(d as i32 - 2) / (1usize << (d - 1)) as f64,
            volume: grid.cell_volume(),
        }
    }

    /// Dirichlet energy of the cell with base node `base`.
    pub fn dirichlet(&self, values: &[f64], k: usize, base: usize) -> f64 {
        let mut s = 0.0;
        for &(p, q) in &self.edges {
            let a = (base + self.corners[p]) * k;
            let b = (base + self.corners[q]) * k;
            for l in 0..k {
                let diff = values[a + l] - values[b + l];
                s += diff * diff;
            }
        }
        self.edge_weight * s
    }

    /// Whether any corner exceeds `tau` in norm.
    pub fn positive(&self, values: &[f64], k: usize, base: usize, tau: f64) -> bool {
        let tau2 = tau * tau;
        self.corners.iter().any(|&c| {
            let i = (base + c) * k;
            values[i..i + k].iter().map(|v| v * v).sum::<f64>() > tau2
        })
    }

    /// Mean over corners of `|U|^2`.
    pub fn mean_square(&self, values: &[f64], k: usize, base: usize) -> f64 {
        let s: f64 = self
            .corners
            .iter()
            .map(|&c| {
                let i = (base + c) * k;
                values[i..i + k].iter().map(|v| v * v).sum::<f64>()
            })
            .sum();
        s / self.corners.len() as f64
    }

    /// Fraction of the cell's corners inside `region`.
    pub fn weight(&self, region: &NodeRegion, base: usize) -> f64 {
        let inside = self.corners.iter().filter(|&&c| region.contains(base + c)).count();
        inside as f64 / self.corners.len() as f64
    }
}

fn weighted_cells<'a>(
    grid: &'a GridSpec,
    stencil: &'a CellStencil,
    region: &'a NodeRegion,
) -> impl Iterator<Item = (usize, f64)> + 'a {
    grid.cell_bases()
        .map(move |base| (base, stencil.weight(region, base)))
        .filter(|&(_, w)| w > 0.0)
}

/// `sum_j int |grad u_j|^2` over the cells touching `region`.
pub fn dirichlet_energy(u: &VectorField, region: &NodeRegion) -> f64 {
    let grid = u.grid();
    let st = CellStencil::new(grid);
    weighted_cells(grid, &st, region)
        .map(|(base, w)| w * st.dirichlet(u.values(), u.k(), base))
        .sum()
}

/// Volume of the cells touching `region` that have a corner with `|U| > tau0`.
pub fn phase_volume(u: &VectorField, region: &NodeRegion, params: &EnergyParams) -> f64 {
    let grid = u.grid();
    let st = CellStencil::new(grid);
    let tau = params.threshold(u);
    weighted_cells(grid, &st, region)
        .filter(|&(base, _)| st.positive(u.values(), u.k(), base, tau))
        .map(|(_, w)| w * st.volume)
        .sum()
}

pub fn total_energy(u: &VectorField, region: &NodeRegion, params: &EnergyParams) -> f64 {
    dirichlet_energy(u, region) + params.lambda * phase_volume(u, region, params)
}

/// Dirichlet energy plus `Lambda * sum_cells min(mean |U|^2 / eps^2, 1) h^d`,
/// together with its gradient with respect to every nodal component.
pub fn smoothed_energy(u: &VectorField, region: &NodeRegion, params: &EnergyParams) -> Result<(f64, Vec<f64>)> {
    let eps = params.eps_smooth;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "smoothing width {eps} must be positive"
        )));
    }
    let grid = u.grid();
    let k = u.k();
    let st = CellStencil::new(grid);
    let vals = u.values();
    let mut grad = vec![0.0; vals.len()];
    let mut energy = 0.0;
    let corner_share = 1.0 / st.corners.len() as f64;
    for (base, w) in weighted_cells(grid, &st, region) {
        energy += w * st.dirichlet(vals, k, base);
        for &(p, q) in &st.edges {
            let a = (base + st.corners[p]) * k;
            let b = (base + st.corners[q]) * k;
            for l in 0..k {
                let g = 2.0 * w * st.edge_weight * (vals[a + l] - vals[b + l]);
                grad[a + l] += g;
                grad[b + l] -= g;
            }
        }
        let ratio = st.mean_square(vals, k, base) / (eps * eps);
        if ratio < 1.0 {
            energy += params.lambda * w * st.volume * ratio;
            let c = params.lambda * w * st.volume * 2.0 * corner_share / (eps * eps);
            for &off in &st.corners {
                let i = (base + off) * k;
                for l in 0..k {
                    grad[i + l] += c * vals[i + l];
                }
            }
        } else {
            energy += params.lambda * w * st.volume;
        }
    }
    Ok((energy, grad))
}

/// `int_{B_r(c)} |grad V|^2 + Lambda |{|V| > tau} cap B_r(c)|` by quadrature,
/// for any field view (grid fields or their rescalings).
pub fn ball_energy(view: &impl FieldView, window: &BallWindow, params: &EnergyParams, q: &Quadrature) -> Result<f64> {
    view.check_window(window.center(), window.radius())?;
    let k = view.components();
    let d = view.dim();
    let tau = view.positivity_threshold(params.tau_rel);
    let mut val = vec![0.0; k];
    let mut jac = vec![0.0; k * d];
    q.try_ball_integral(window, |x| {
        view.eval(x, &mut val, Some(&mut jac))?;
        let norm2: f64 = val.iter().map(|v| v * v).sum();
        let ind = if norm2 > tau * tau { params.lambda } else { 0.0 };
        Ok(jac.iter().map(|g| g * g).sum::<f64>() + ind)
    })
}

//! Uniform node-centred grids on the cube `[-extent, extent]^d` and the
//! vector fields sampled on them.
//!
//! Node coordinates are `(i - (n-1)/2) * h` on every axis, so the origin is
//! always a node and the coordinates are symmetric bit-for-bit. Nodes are
//! numbered with axis 0 running fastest; field values are stored node-major
//! with the `k` components of a node contiguous.

use crate::error::{Error, Result};

/// Largest supported grid per dimension (`n` nodes per axis).
pub const MAX_NODES_2D: usize = 513;
pub const MAX_NODES_3D: usize = 65;
pub const MIN_NODES: usize = 33;

/// Relative positivity floor: a node belongs to the positivity set when
/// `|U| > POSITIVITY_REL * max |U|`.
pub const POSITIVITY_REL: f64 = 1e-12;

/// Margin, in units of `h`, that every analysis ball keeps from the cube
/// boundary.
pub const WINDOW_MARGIN_CELLS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    extent: f64,
    h: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, extent: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if n.is_multiple_of(2) || n < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "n = {n} must be odd and at least {MIN_NODES}"
            )));
        }
        let max = if dim == 2 { MAX_NODES_2D } else { MAX_NODES_3D };
        if n > max {
            return Err(Error::InvalidGrid(format!(
                "n = {n} exceeds the supported maximum {max} for d = {dim}"
            )));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidGrid(format!("extent {extent} must be positive")));
        }
        Ok(Self {
            dim,
            n,
            extent,
            h: 2.0 * extent / (n - 1) as f64,
        })
    }

    /// The default unit cube `[-1, 1]^d`.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Index offsets of a unit step along each axis (unused axes are 0).
    pub fn strides(&self) -> [usize; 3] {
        let n = self.n;
        match self.dim {
            2 => [1, n, 0],
            _ => [1, n, n * n],
        }
    }

    /// Coordinate of grid line `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - ((self.n - 1) / 2) as f64) * self.h
    }

    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let n = self.n;
        let mut idx = [0usize; 3];
        let mut rest = node;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = rest % n;
            rest /= n;
        }
        idx
    }

    pub fn node_at(&self, idx: &[usize]) -> usize {
        let s = self.strides();
        idx.iter().zip(s.iter()).map(|(i, s)| i * s).sum()
    }

    /// Coordinates of a node; entries beyond `dim` are zero.
    pub fn node_point(&self, node: usize) -> [f64; 3] {
        let idx = self.multi_index(node);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.coord(idx[a]);
        }
        p
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        idx[..self.dim].iter().any(|&i| i == 0 || i == self.n - 1)
    }

    /// Nearest node to `point` (rounded per axis), if the point is in the cube.
    pub fn nearest_node(&self, point: &[f64]) -> Option<usize> {
        let c = ((self.n - 1) / 2) as f64;
        let mut idx = [0usize; 3];
        for a in 0..self.dim {
            let t = (point[a] / self.h + c).round();
            if t < 0.0 || t > (self.n - 1) as f64 {
                return None;
            }
            idx[a] = t as usize;
        }
        Some(self.node_at(&idx[..self.dim]))
    }

    /// Base nodes (lowest corner) of every cell, in lexicographic order.
    pub fn cell_bases(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.n;
        let dim = self.dim;
        (0..self.node_count()).filter(move |&node| {
            let mut rest = node;
            for _ in 0..dim {
                if rest % n == n - 1 {
                    return false;
                }
                rest /= n;
            }
            true
        })
    }

    /// Offsets from a cell's base node to its `2^d` corners.
    pub fn corner_offsets(&self) -> Vec<usize> {
        let s = self.strides();
        (0..1usize << self.dim)
            .map(|mask| (0..self.dim).filter(|a| mask >> a & 1 == 1).map(|a| s[a]).sum())
            .collect()
    }

    /// Base nodes of the cells that have `node` as a corner.
    pub fn cells_around(&self, node: usize) -> Vec<usize> {
        let idx = self.multi_index(node);
        let s = self.strides();
        let mut out = Vec::with_capacity(1 << self.dim);
        'mask: for mask in 0..1usize << self.dim {
            let mut base = node;
            for a in 0..self.dim {
                if mask >> a & 1 == 1 {
                    if idx[a] == 0 {
                        continue 'mask;
                    }
                    base -= s[a];
                } else if idx[a] == self.n - 1 {
                    continue 'mask;
                }
            }
            out.push(base);
        }
        out
    }

    /// Edge-adjacent neighbours of a node.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let idx = self.multi_index(node);
        let s = self.strides();
        let mut out = Vec::with_capacity(2 * self.dim);
        for a in 0..self.dim {
            if idx[a] > 0 {
                out.push(node - s[a]);
            }
            if idx[a] + 1 < self.n {
                out.push(node + s[a]);
            }
        }
        out
    }

    fn contains(&self, point: &[f64], slack: f64) -> bool {
        let lim = self.extent * (1.0 + 1e-12) - slack;
        point[..self.dim].iter().all(|x| x.abs() <= lim)
    }

    /// Checks that `B_radius(center)` plus the stencil margin fits in the cube.
    pub fn check_window(&self, center: &[f64], radius: f64) -> Result<()> {
        let margin = WINDOW_MARGIN_CELLS * self.h;
        if !(radius > 0.0) || center.len() < self.dim || !self.contains(center, radius + margin) {
            return Err(Error::InvalidWindow {
                center: center[..self.dim.min(center.len())].to_vec(),
                radius,
                margin,
            });
        }
        Ok(())
    }

    /// Distance from `point` to the cube boundary.
    pub fn distance_to_boundary(&self, point: &[f64]) -> f64 {
        point[..self.dim]
            .iter()
            .map(|x| self.extent - x.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Position of a point inside its containing cell.
#[derive(Debug, Clone, Copy)]
struct CellLocation {
    base: usize,
    frac: [f64; 3],
}

impl GridSpec {
    fn locate(&self, point: &[f64]) -> Result<CellLocation> {
        if point.len() < self.dim || !self.contains(point, 0.0) {
            return Err(Error::OutOfDomain {
                point: point.to_vec(),
                extent: self.extent,
            });
        }
        let c = ((self.n - 1) / 2) as f64;
        let s = self.strides();
        let mut base = 0;
        let mut frac = [0.0; 3];
        for a in 0..self.dim {
            let mut t = point[a] / self.h + c;
            let r = t.round();
            if (t - r).abs() <= 1e-11 * r.abs().max(1.0) {
                t = r;
            }
            let i = (t.floor().max(0.0) as usize).min(self.n - 2);
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
            base += i * s[a];
        }
        Ok(CellLocation { base, frac })
    }
}

/// A read-only vector-valued function that can be probed pointwise.
///
/// Implemented by grid fields and by lazily rescaled views of them. The
/// Jacobian layout is `k x d`, row-major (`jac[l * d + i] = d u_l / d x_i`).
pub trait FieldView: Sync {
    fn dim(&self) -> usize;
    fn components(&self) -> usize;
    /// Grid spacing expressed in this view's coordinates.
    fn spacing(&self) -> f64;
    /// Largest nodal `|U|` in this view's units.
    fn norm_scale(&self) -> f64;
    fn check_window(&self, center: &[f64], radius: f64) -> Result<()>;
    fn eval(&self, x: &[f64], value: &mut [f64], jacobian: Option<&mut [f64]>) -> Result<()>;

    /// Positivity threshold `tau_rel * max |U|` in view units.
    fn positivity_threshold(&self, tau_rel: f64) -> f64 {
        tau_rel * self.norm_scale()
    }

    /// Rejects radii that resolve fewer than `floor_cells` grid cells.
    fn check_resolution(&self, radius: f64, floor_cells: f64) -> Result<()> {
        let floor = floor_cells * self.spacing();
        if radius < floor * (1.0 - 1e-12) {
            return Err(Error::Resolution { radius, floor });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    k: usize,
    values: Vec<f64>,
    max_norm: f64,
}

impl VectorField {
    pub fn zeros(grid: GridSpec, k: usize) -> Self {
        assert!(k >= 1, "a vector field needs at least one component");
        Self {
            grid,
            k,
            values: vec![0.0; grid.node_count() * k],
            max_norm: 0.0,
        }
    }

    pub fn from_values(grid: GridSpec, k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Dimension("k must be at least 1".into()));
        }
        if values.len() != grid.node_count() * k {
            return Err(Error::Dimension(format!(
                "expected {} values, got {}",
                grid.node_count() * k,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite field value at flat index {bad}"
            )));
        }
        let mut f = Self {
            grid,
            k,
            values,
            max_norm: 0.0,
        };
        f.refresh();
        Ok(f)
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: GridSpec, k: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut field = Self::zeros(grid, k);
        let d = grid.dim();
        for node in 0..grid.node_count() {
            let p = grid.node_point(node);
            f(&p[..d], &mut field.values[node * k..(node + 1) * k]);
        }
        field.refresh();
        field
    }

    /// Recomputes cached quantities after in-place edits.
    pub fn refresh(&mut self) {
        self.max_norm = (0..self.grid.node_count()).map(|i| self.norm(i)).fold(0.0, f64::max);
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values; call [`VectorField::refresh`] afterwards.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node_value(&self, node: usize) -> &[f64] {
        &self.values[node * self.k..(node + 1) * self.k]
    }

    pub fn norm(&self, node: usize) -> f64 {
        self.node_value(node).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    /// Multilinear interpolation of the node values.
    pub fn interpolate(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.k];
        self.eval(point, &mut out, None)?;
        Ok(out)
    }

    /// Central differences (step `h`) of the interpolant, as a `k x d`
    /// row-major matrix.
    pub fn gradient_at(&self, point: &[f64]) -> Result<Vec<f64>> {
        let d = self.grid.dim();
        let h = self.grid.spacing();
        if point.len() < d || !self.grid.contains(point, h) {
            return Err(Error::Stencil { point: point.to_vec() });
        }
        let mut grad = vec![0.0; self.k * d];
        let mut plus = vec![0.0; self.k];
        let mut minus = vec![0.0; self.k];
        let mut q = [0.0; 3];
        q[..d].copy_from_slice(&point[..d]);
        for a in 0..d {
            q[a] = point[a] + h;
            self.eval(&q[..d], &mut plus, None)?;
            q[a] = point[a] - h;
            self.eval(&q[..d], &mut minus, None)?;
            q[a] = point[a];
            for l in 0..self.k {
                grad[l * d + a] = (plus[l] - minus[l]) / (2.0 * h);
            }
        }
        Ok(grad)
    }
}

impl FieldView for VectorField {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn components(&self) -> usize {
        self.k
    }

    fn spacing(&self) -> f64 {
        self.grid.spacing()
    }

    fn norm_scale(&self) -> f64 {
        self.max_norm
    }

    fn check_window(&self, center: &[f64], radius: f64) -> Result<()> {
        self.grid.check_window(center, radius)
    }

    fn eval(&self, x: &[f64], value: &mut [f64], jacobian: Option<&mut [f64]>) -> Result<()> {
        let d = self.grid.dim();
        let k = self.k;
        let loc = self.grid.locate(x)?;
        let s = self.grid.strides();
        value[..k].fill(0.0);
        let mut jac = jacobian;
        if let Some(j) = jac.as_deref_mut() {
            j[..k * d].fill(0.0);
        }
        let inv_h = 1.0 / self.grid.spacing();
        for mask in 0..1usize << d {
            let mut w = 1.0;
            let mut node = loc.base;
            let mut dw = [1.0f64; 3];
            for a in 0..d {
                let t = loc.frac[a];
                let (wa, da) = if mask >> a & 1 == 1 {
                    node += s[a];
                    (t, inv_h)
                } else {
                    (1.0 - t, -inv_h)
                };
                w *= wa;
                for (b, dwb) in dw.iter_mut().enumerate().take(d) {
                    *dwb *= if b == a { da } else { wa };
                }
            }
            let v = &self.values[node * k..(node + 1) * k];
            for l in 0..k {
                value[l] += w * v[l];
            }
            if let Some(j) = jac.as_deref_mut() {
                for l in 0..k {
                    for a in 0..d {
                        j[l * d + a] += dw[a] * v[l];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Membership mask of the positivity set `{|U| > tau}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSet {
    grid: GridSpec,
    mask: Vec<bool>,
}

impl PhaseSet {
    pub fn from_mask(grid: GridSpec, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.node_count() {
            return Err(Error::Dimension(format!(
                "phase mask has {} entries for {} nodes",
                mask.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, mask })
    }

    pub fn all(grid: GridSpec) -> Self {
        Self {
            grid,
            mask: vec![true; grid.node_count()],
        }
    }

    pub fn empty(grid: GridSpec) -> Self {
        Self {
            grid,
            mask: vec![false; grid.node_count()],
        }
    }

    /// `{|U| > tau}` with an explicit threshold.
    pub fn above(field: &VectorField, tau: f64) -> Self {
        let mask = (0..field.grid().node_count()).map(|i| field.norm(i) > tau).collect();
        Self {
            grid: *field.grid(),
            mask,
        }
    }

    /// `{|U| > tau0}` with the default relative floor.
    pub fn from_field(field: &VectorField) -> Self {
        Self::above(field, POSITIVITY_REL * field.max_norm())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn contains(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn set(&mut self, node: usize, member: bool) {
        self.mask[node] = member;
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// A validated analysis ball `B_radius(center)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallWindow {
    center: Vec<f64>,
    radius: f64,
}

impl BallWindow {
    pub fn new(view: &impl FieldView, center: &[f64], radius: f64) -> Result<Self> {
        view.check_window(center, radius)?;
        Ok(Self {
            center: center[..view.dim()].to_vec(),
            radius,
        })
    }

    /// A window that is only checked against a grid.
    pub fn on_grid(grid: &GridSpec, center: &[f64], radius: f64) -> Result<Self> {
        grid.check_window(center, radius)?;
        Ok(Self {
            center: center[..grid.dim()].to_vec(),
            radius,
        })
    }

    /// A window that is not validated against any grid, for analytic samplers.
    pub fn free(center: &[f64], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
        }
        Ok(Self {
            center: center.to_vec(),
            radius,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

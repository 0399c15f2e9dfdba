//! Discrete local minimizers of `J` with prescribed boundary data.
//!
//! The solver alternates harmonic replacement on a fixed phase set (SOR on
//! the 5/7-point Laplacian) with greedy single-node phase flips. The initial
//! phase comes from an annealed majorize-minimize descent on the smoothed
//! energy, thresholded at the level that gives the lowest true energy.

use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, CellStencil, EnergyParams, NodeRegion};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, PhaseSet, VectorField};

/// Dirichlet data on the cube boundary.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    values: VectorField,
    lipschitz: f64,
}

impl BoundaryData {
    /// Samples `f` on the boundary nodes of `grid`.
    pub fn from_fn(grid: GridSpec, k: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let d = grid.dim();
        let mut values = VectorField::zeros(grid, k);
        let mut buf = vec![0.0; k];
        for node in 0..grid.node_count() {
            if grid.is_boundary_node(node) {
                let p = grid.node_point(node);
                f(&p[..d], &mut buf);
                values.values_mut()[node * k..(node + 1) * k].copy_from_slice(&buf);
            }
        }
        Self::from_field(&values)
    }

    /// Takes the boundary-node values of `field`.
    pub fn from_field(field: &VectorField) -> Result<Self> {
        let grid = *field.grid();
        let k = field.k();
        let mut values = VectorField::zeros(grid, k);
        for node in (0..grid.node_count()).filter(|&i| grid.is_boundary_node(i)) {
            let v = field.node_value(node);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "non-finite boundary value at node {node}"
                )));
            }
            values.values_mut()[node * k..(node + 1) * k].copy_from_slice(v);
        }
        values.refresh();
        let lipschitz = boundary_lipschitz(&values);
        Ok(Self { values, lipschitz })
    }

    pub fn grid(&self) -> &GridSpec {
        self.values.grid()
    }

    pub fn k(&self) -> usize {
        self.values.k()
    }

    /// The boundary values, zero at interior nodes.
    pub fn field(&self) -> &VectorField {
        &self.values
    }

    /// Largest difference quotient along boundary edges (recorded only).
    pub fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz
    }

    pub fn max_norm(&self) -> f64 {
        self.values.max_norm()
    }
}

fn boundary_lipschitz(values: &VectorField) -> f64 {
    let grid = values.grid();
    let h = grid.spacing();
    let mut best: f64 = 0.0;
    for node in (0..grid.node_count()).filter(|&i| grid.is_boundary_node(i)) {
        for nb in grid.neighbors(node) {
            if nb > node && grid.is_boundary_node(nb) {
                let diff: f64 = values
                    .node_value(node)
                    .iter()
                    .zip(values.node_value(nb))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.max(diff.sqrt() / h);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    Lexicographic,
}

/// Geometric schedule of smoothing widths for the initial descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    pub eps_start: f64,
    /// Final width in units of `h`.
    pub eps_end_cells: f64,
    pub stages: usize,
    /// Majorize-minimize iterations per stage.
    pub mm_iterations: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            eps_start: 0.5,
            eps_end_cells: 2.0,
            stages: 8,
            mm_iterations: 4,
        }
    }
}

impl AnnealSchedule {
    pub fn widths(&self, h: f64) -> Vec<f64> {
        let end = self.eps_end_cells * h;
        let start = self.eps_start.max(end);
        if self.stages <= 1 {
            return vec![end];
        }
        let ratio = (end / start).powf(1.0 / (self.stages - 1) as f64);
        (0..self.stages).map(|s| start * ratio.powi(s as i32)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Max of `|mean of neighbours - u|` over in-phase interior nodes.
    pub laplace_tol: f64,
    /// Minimum accepted energy decrease per flip, in units of `Lambda h^d`.
    pub flip_gain_rel: f64,
    pub max_outer: usize,
    /// SOR sweep cap; `None` picks `20 n + 2000`.
    pub max_sweeps: Option<usize>,
    pub anneal: AnnealSchedule,
    pub sweep: SweepOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            laplace_tol: 1e-11,
            flip_gain_rel: 1e-10,
            max_outer: 50,
            max_sweeps: None,
            anneal: AnnealSchedule::default(),
            sweep: SweepOrder::Lexicographic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.laplace_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "laplace_tol = {} must be positive",
                self.laplace_tol
            )));
        }
        if !(self.flip_gain_rel >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "flip_gain_rel = {} must be non-negative",
                self.flip_gain_rel
            )));
        }
        let a = &self.anneal;
        if !(a.eps_start > 0.0 && a.eps_end_cells > 0.0) || a.stages == 0 {
            return Err(Error::InvalidParameter("empty annealing schedule".into()));
        }
        Ok(())
    }

    pub fn flip_gain_min(&self, params: &EnergyParams, grid: &GridSpec) -> f64 {
        self.flip_gain_rel * params.lambda * grid.cell_volume()
    }

    fn sweep_cap(&self, grid: &GridSpec) -> usize {
        self.max_sweeps.unwrap_or(20 * grid.n() + 2000)
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub field: VectorField,
    /// `{|U| > tau0}` of the final field.
    pub phase: PhaseSet,
    /// `J` after initialization and after every harmonic replacement.
    pub energy_trace: Vec<f64>,
    pub converged: bool,
    /// Outer (sweep + replacement) iterations.
    pub iterations: usize,
    pub accepted_flips: usize,
}

impl MinimizeResult {
    pub fn energy(&self) -> f64 {
        *self.energy_trace.last().expect("trace is never empty")
    }
}

#[derive(Debug, Clone)]
pub struct TrimOutcome {
    pub phase: PhaseSet,
    pub accepted: usize,
    /// The field with every accepted local patch applied.
    pub field: VectorField,
}

struct Laplacian {
    strides: Vec<usize>,
    omega: f64,
}

impl Laplacian {
    fn new(grid: &GridSpec) -> Self {
        let s = grid.strides();
        let n = grid.n() as f64;
        Self {
            strides: s[..grid.dim()].to_vec(),
            omega: 2.0 / (1.0 + (std::f64::consts::PI / (n - 1.0)).sin()),
        }
    }

    fn target(&self, values: &[f64], k: usize, node: usize, l: usize, denom: f64) -> f64 {
        let mut s = 0.0;
        for &st in &self.strides {
            s += values[(node - st) * k + l] + values[(node + st) * k + l];
        }
        s / denom
    }

    fn residual(&self, values: &[f64], k: usize, nodes: &[usize], extra: Option<&[f64]>) -> f64 {
        let base = 2.0 * self.strides.len() as f64;
        let mut worst: f64 = 0.0;
        for (idx, &i) in nodes.iter().enumerate() {
            let denom = base + extra.map_or(0.0, |e| e[idx]);
            for l in 0..k {
                worst = worst.max((self.target(values, k, i, l, denom) - values[i * k + l]).abs());
            }
        }
        worst
    }

    /// SOR on `nodes` for `(2d + extra_i) u_i = sum of neighbours`.
    fn solve(
        &self,
        values: &mut [f64],
        k: usize,
        nodes: &[usize],
        extra: Option<&[f64]>,
        tol: f64,
        cap: usize,
    ) -> Result<usize> {
        let base = 2.0 * self.strides.len() as f64;
        let mut worst = 0.0;
        for sweep in 1..=cap {
            worst = 0.0f64;
            for (idx, &i) in nodes.iter().enumerate() {
                let denom = base + extra.map_or(0.0, |e| e[idx]);
                for l in 0..k {
                    let r = self.target(values, k, i, l, denom) - values[i * k + l];
                    worst = worst.max(r.abs());
                    values[i * k + l] += self.omega * r;
                }
            }
            if !worst.is_finite() {
                break;
            }
            if worst <= tol {
                worst = self.residual(values, k, nodes, extra);
                if worst <= tol {
                    return Ok(sweep);
                }
            }
        }
        Err(Error::SolverFailure {
            iterations: cap,
            residual: worst,
        })
    }
}

fn check_grids(a: &GridSpec, b: &GridSpec, k_a: usize, k_b: usize) -> Result<()> {
    if a != b || k_a != k_b {
        return Err(Error::Dimension(
            "field, phase and boundary data must share grid and component count".into(),
        ));
    }
    Ok(())
}

fn interior_nodes(grid: &GridSpec, phase: Option<&PhaseSet>) -> Vec<usize> {
    (0..grid.node_count())
        .filter(|&i| !grid.is_boundary_node(i) && phase.is_none_or(|p| p.contains(i)))
        .collect()
}

/// Makes every component discrete-harmonic on the in-phase interior nodes,
/// zero on the out-of-phase interior nodes and equal to `bd` on the boundary.
pub fn harmonic_replacement(
    u: &VectorField,
    phase: &PhaseSet,
    bd: &BoundaryData,
    cfg: &SolverConfig,
) -> Result<VectorField> {
    cfg.validate()?;
    check_grids(u.grid(), bd.grid(), u.k(), bd.k())?;
    check_grids(phase.grid(), bd.grid(), 1, 1)?;
    let mut out = u.clone();
    replace_in_place(&mut out, phase, bd, cfg)?;
    Ok(out)
}

fn replace_in_place(u: &mut VectorField, phase: &PhaseSet, bd: &BoundaryData, cfg: &SolverConfig) -> Result<usize> {
    let grid = *u.grid();
    let k = u.k();
    let bvals = bd.field().values();
    {
        let vals = u.values_mut();
        for node in 0..grid.node_count() {
            let range = node * k..(node + 1) * k;
            if grid.is_boundary_node(node) {
                vals[range.clone()].copy_from_slice(&bvals[range]);
            } else if !phase.contains(node) {
                vals[range].fill(0.0);
            }
        }
    }
    let nodes = interior_nodes(&grid, Some(phase));
    let lap = Laplacian::new(&grid);
    let sweeps = lap.solve(u.values_mut(), k, &nodes, None, cfg.laplace_tol, cfg.sweep_cap(&grid))?;
    u.refresh();
    Ok(sweeps)
}

/// Local geometry used by single-node flips: the Chebyshev 2-ring of a node
/// and the cells touching it.
struct FlipStencil {
    grid: GridSpec,
    cells: CellStencil,
    lap: Laplacian,
}

impl FlipStencil {
    fn new(grid: &GridSpec) -> Self {
        let lap = Laplacian {
            omega: 4.0 / 3.0,
            ..Laplacian::new(grid)
        };
        Self {
            grid: *grid,
            cells: CellStencil::new(grid),
            lap,
        }
    }

    /// Interior nodes within Chebyshev distance 2 of `node`, and the base
    /// nodes of all cells having a corner among them.
    fn neighbourhood(&self, node: usize, patch: &mut Vec<usize>, cells: &mut Vec<usize>) {
        let g = &self.grid;
        let d = g.dim();
        let n = g.n() as isize;
        let idx = g.multi_index(node);
        let s = g.strides();
        patch.clear();
        cells.clear();
        let span = |lo: isize, hi: isize, a: usize| {
            let c = idx[a] as isize;
            ((c + lo).max(0), (c + hi).min(n - 1))
        };
        let mut lo = [0isize; 3];
        let mut hi = [0isize; 3];
        // Patch: offsets -2..=2 clipped to the interior.
        for a in 0..d {
            let (l, h) = span(-2, 2, a);
            lo[a] = l.max(1);
            hi[a] = h.min(n - 2);
        }
        for_each_box(d, &lo, &hi, |m| {
            patch.push((0..d).map(|a| m[a] as usize * s[a]).sum());
        });
        // Cells: bases at offsets -3..=2 clipped to valid bases.
        for a in 0..d {
            let (l, h) = span(-3, 2, a);
            lo[a] = l;
            hi[a] = h.min(n - 2);
        }
        for_each_box(d, &lo, &hi, |m| {
            cells.push((0..d).map(|a| m[a] as usize * s[a]).sum());
        });
    }

    fn local_energy(&self, values: &[f64], k: usize, cells: &[usize], lambda: f64, tau: f64) -> f64 {
        cells
            .iter()
            .map(|&c| {
                let vol = if self.cells.positive(values, k, c, tau) {
                    lambda * self.cells.volume
                } else {
                    0.0
                };
                self.cells.dirichlet(values, k, c) + vol
            })
            .sum()
    }

    /// Gauss-Seidel on the in-phase patch nodes with the rest held fixed.
    fn relax_patch(&self, values: &mut [f64], k: usize, patch: &[usize], phase: &PhaseSet, tol: f64) {
        let denom = 2.0 * self.grid.dim() as f64;
        for _ in 0..500 {
            let mut worst: f64 = 0.0;
            for &i in patch.iter().filter(|&&i| phase.contains(i)) {
                for l in 0..k {
                    let r = self.lap.target(values, k, i, l, denom) - values[i * k + l];
                    worst = worst.max(r.abs());
                    values[i * k + l] += self.lap.omega * r;
                }
            }
            if worst <= tol {
                break;
            }
        }
    }

    /// Whether toggling `node` can possibly lower the energy.
    fn is_candidate(&self, values: &[f64], k: usize, node: usize, phase: &PhaseSet, tau: f64, zero: f64) -> bool {
        let tau2 = tau * tau;
        let sq = |i: usize| values[i * k..(i + 1) * k].iter().map(|v| v * v).sum::<f64>();
        if phase.contains(node) {
            if sq(node) <= zero * zero {
                return true;
            }
            // Removing the node only pays if some cell would lose positivity.
            self.grid.cells_around(node).into_iter().any(|c| {
                self.cells
                    .corners
                    .iter()
                    .map(|&o| c + o)
                    .filter(|&q| q != node)
                    .all(|q| !phase.contains(q) || sq(q) <= tau2)
            })
        } else {
            self.grid
                .neighbors(node)
                .into_iter()
                .any(|q| phase.contains(q) && sq(q) > tau2)
        }
    }
}

fn for_each_box(d: usize, lo: &[isize; 3], hi: &[isize; 3], mut f: impl FnMut(&[isize; 3])) {
    if (0..d).any(|a| lo[a] > hi[a]) {
        return;
    }
    let mut m = *lo;
    loop {
        f(&m);
        let mut a = 0;
        loop {
            if a == d {
                return;
            }
            if m[a] < hi[a] {
                m[a] += 1;
                break;
            }
            m[a] = lo[a];
            a += 1;
        }
    }
}

/// Nodal values up to this multiple of `laplace_tol` count as zero when
/// trimming.
pub const ZERO_NOISE_FACTOR: f64 = 1e3;

/// One lexicographic pass of single-node phase toggles. Each toggle is
/// followed by a local harmonic patch on the 2-ring and accepted iff the
/// energy drops by more than the configured minimum gain. Removing a node
/// whose value is below the solve noise floor (`tau0`, or `ZERO_NOISE_FACTOR`
/// times `laplace_tol`) is accepted unless it raises the energy by more than
/// that gain.
pub fn phase_trim_sweep(
    u: &VectorField,
    phase: &PhaseSet,
    bd: &BoundaryData,
    params: &EnergyParams,
    cfg: &SolverConfig,
) -> Result<TrimOutcome> {
    cfg.validate()?;
    check_grids(u.grid(), bd.grid(), u.k(), bd.k())?;
    check_grids(phase.grid(), bd.grid(), 1, 1)?;
    let grid = *u.grid();
    let k = u.k();
    let tau = params.threshold(u);
    let noise = tau.max(ZERO_NOISE_FACTOR * cfg.laplace_tol);
    let gain_min = cfg.flip_gain_min(params, &grid);
    let patch_tol = 1e-14 * u.max_norm().max(bd.max_norm());
    let fs = FlipStencil::new(&grid);
    let mut field = u.clone();
    let mut phase = phase.clone();
    let mut accepted = 0;
    let mut patch = Vec::new();
    let mut cells = Vec::new();
    let mut saved = Vec::new();
    for node in interior_nodes(&grid, None) {
        let vals = field.values_mut();
        if !fs.is_candidate(vals, k, node, &phase, tau, noise) {
            continue;
        }
        fs.neighbourhood(node, &mut patch, &mut cells);
        let before = fs.local_energy(vals, k, &cells, params.lambda, tau);
        saved.clear();
        saved.extend(patch.iter().flat_map(|&i| vals[i * k..(i + 1) * k].iter().copied()));
        let was_in = phase.contains(node);
        let was_zero = vals[node * k..(node + 1) * k].iter().map(|v| v * v).sum::<f64>() <= noise * noise;
        phase.set(node, !was_in);
        if was_in {
            vals[node * k..(node + 1) * k].fill(0.0);
        }
        fs.relax_patch(vals, k, &patch, &phase, patch_tol);
        let delta = fs.local_energy(vals, k, &cells, params.lambda, tau) - before;
        let keep = delta < -gain_min || (was_in && was_zero && delta <= gain_min);
        if keep {
            accepted += 1;
        } else {
            phase.set(node, was_in);
            for (j, &i) in patch.iter().enumerate() {
                vals[i * k..(i + 1) * k].copy_from_slice(&saved[j * k..(j + 1) * k]);
            }
        }
    }
    field.refresh();
    Ok(TrimOutcome { phase, accepted, field })
}

/// Annealed majorize-minimize descent on the smoothed energy, starting from
/// the harmonic extension of the boundary data over the whole cube.
fn anneal(bd: &BoundaryData, params: &EnergyParams, cfg: &SolverConfig) -> Result<VectorField> {
    let grid = *bd.grid();
    let k = bd.k();
    let d = grid.dim();
    let h = grid.spacing();
    let mut u = bd.field().clone();
    replace_in_place(&mut u, &PhaseSet::all(grid), bd, cfg)?;
    if bd.max_norm() == 0.0 {
        return Ok(u);
    }
    let nodes = interior_nodes(&grid, None);
    let slot: Vec<usize> = {
        let mut s = vec![usize::MAX; grid.node_count()];
        for (j, &i) in nodes.iter().enumerate() {
            s[i] = j;
        }
        s
    };
    let st = CellStencil::new(&grid);
    let lap = Laplacian::new(&grid);
    let tol = (1e-9 * bd.max_norm()).max(cfg.laplace_tol);
    let cap = cfg.sweep_cap(&grid);
    let bases: Vec<usize> = grid.cell_bases().collect();
    let corner_share = 1.0 / (1usize << d) as f64;
    for eps in cfg.anneal.widths(h) {
        let mut active: Vec<bool> = Vec::new();
        for _ in 0..cfg.anneal.mm_iterations.max(1) {
            let now: Vec<bool> = bases
                .iter()
                .map(|&c| st.mean_square(u.values(), k, c) < eps * eps)
                .collect();
            let changed = if active.is_empty() {
                now.len()
            } else {
                now.iter().zip(&active).filter(|(a, b)| a != b).count()
            };
            if changed * 1000 <= now.len() && !active.is_empty() {
                break;
            }
            let mut extra = vec![0.0; nodes.len()];
            let unit = params.lambda * h * h * corner_share / (eps * eps);
            for (&c, _) in bases.iter().zip(&now).filter(|(_, &a)| a) {
                for &o in &st.corners {
                    let j = slot[c + o];
                    if j != usize::MAX {
                        extra[j] += unit;
                    }
                }
            }
            lap.solve(u.values_mut(), k, &nodes, Some(&extra), tol, cap)?;
            active = now;
        }
    }
    u.refresh();
    Ok(u)
}

/// Thresholds, in units of the final smoothing width, tried for the initial
/// phase set.
const THRESHOLD_LEVELS: [f64; 15] = [
    0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.25, 1.5,
];

fn initial_phase(
    smooth: &VectorField,
    bd: &BoundaryData,
    params: &EnergyParams,
    cfg: &SolverConfig,
) -> Result<(VectorField, PhaseSet, f64)> {
    let grid = *smooth.grid();
    let eps_end = cfg.anneal.eps_end_cells * grid.spacing();
    let tau0 = params.threshold(smooth);
    let all = NodeRegion::all(&grid);
    let screen = SolverConfig {
        laplace_tol: (1e-9 * bd.max_norm()).max(cfg.laplace_tol),
        ..*cfg
    };
    let mut best: Option<(VectorField, PhaseSet, f64)> = None;
    let mut tried: Vec<PhaseSet> = Vec::new();
    for level in THRESHOLD_LEVELS {
        let phase = PhaseSet::above(smooth, (level * eps_end).max(tau0));
        if tried.contains(&phase) {
            continue;
        }
        let mut u = smooth.clone();
        replace_in_place(&mut u, &phase, bd, &screen)?;
        let j = total_energy(&u, &all, params);
        if best.as_ref().is_none_or(|b| j < b.2) {
            best = Some((u, phase.clone(), j));
        }
        tried.push(phase);
    }
    let (mut u, phase, _) = best.expect("at least one threshold is tried");
    replace_in_place(&mut u, &phase, bd, cfg)?;
    let j = total_energy(&u, &all, params);
    Ok((u, phase, j))
}

/// Squared gradient norm at an in-phase node, differencing towards the
/// phase where a neighbour is missing.
fn gradient_sq(values: &[f64], k: usize, grid: &GridSpec, node: usize, inside: &[bool]) -> f64 {
    let s = grid.strides();
    let h = grid.spacing();
    let mut total = 0.0;
    for &st in &s[..grid.dim()] {
        let (m, p) = (node - st, node + st);
        for l in 0..k {
            let c = values[node * k + l];
            let g = match (inside[m], inside[p]) {
                (true, true) => (values[p * k + l] - values[m * k + l]) / (2.0 * h),
                (false, true) => (values[p * k + l] - c) / h,
                (true, false) => (c - values[m * k + l]) / h,
                (false, false) => c / h,
            };
            total += g * g;
        }
    }
    total
}

/// Front nodes where the free-boundary condition `|grad U|^2 = Lambda` is
/// violated, with the size of the violation. Retraction candidates are in-phase nodes
/// next to the zero set with `|grad U|^2 < Lambda`; extension candidates are
/// zero nodes next to the phase whose in-phase neighbours have
/// `|grad U|^2 > Lambda`.
fn front_candidates(u: &VectorField, phase: &PhaseSet, lambda: f64, tau: f64, retract: bool) -> Vec<(f64, usize)> {
    let grid = *u.grid();
    let k = u.k();
    let vals = u.values();
    let inside: Vec<bool> = (0..grid.node_count())
        .map(|i| u.norm(i) > tau && (phase.contains(i) || grid.is_boundary_node(i)))
        .collect();
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for node in (0..grid.node_count()).filter(|&i| !grid.is_boundary_node(i)) {
        let nbs = grid.neighbors(node);
        if retract {
            if !inside[node] || nbs.iter().all(|&q| inside[q]) {
                continue;
            }
            let gap = lambda - gradient_sq(vals, k, &grid, node, &inside);
            if gap > 0.0 {
                scored.push((gap, node));
            }
        } else {
            if phase.contains(node) {
                continue;
            }
            let best = nbs
                .iter()
                .filter(|&&q| inside[q] && !grid.is_boundary_node(q))
                .map(|&q| gradient_sq(vals, k, &grid, q, &inside))
                .fold(f64::NEG_INFINITY, f64::max);
            if best - lambda > 0.0 {
                scored.push((best - lambda, node));
            }
        }
    }
    scored
}

/// Fractions of the largest violation used to cut front moves.
const MOVE_LEVELS: [f64; 8] = [0.0, 1.0 / 64.0, 1.0 / 16.0, 0.25, 0.5, 0.75, 0.9, 1.0 - 1e-6];

/// Moves whole stretches of the free boundary by one node layer at a time.
/// A move toggles the front nodes whose violation exceeds a fraction of
/// the largest one (all of them first, then ever stricter cuts) and is kept
/// only if a full harmonic replacement lowers `J`. Straight fronts cannot move through single-node toggles because a
/// lone toggled node never changes the positivity of its cells.
fn front_relaxation(
    u: &mut VectorField,
    phase: &mut PhaseSet,
    bd: &BoundaryData,
    params: &EnergyParams,
    cfg: &SolverConfig,
    trace: &mut Vec<f64>,
) -> Result<usize> {
    let grid = *u.grid();
    let all = NodeRegion::all(&grid);
    let gain_min = cfg.flip_gain_min(params, &grid);
    let screen = SolverConfig {
        laplace_tol: (1e-9 * bd.max_norm()).max(cfg.laplace_tol),
        ..*cfg
    };
    let mut moves = 0;
    let mut current = *trace.last().expect("trace is never empty");
    for _ in 0..4 * grid.n() {
        let tau = params.threshold(u);
        let mut improved = false;
        for retract in [true, false] {
            let cands = front_candidates(u, phase, params.lambda, tau, retract);
            let top = cands.iter().map(|c| c.0).fold(0.0, f64::max);
            let mut last = usize::MAX;
            for level in MOVE_LEVELS {
                // Groups are cut by score, not by count, so that nodes related
                // by a grid symmetry are always toggled together.
                let chosen: Vec<usize> = cands.iter().filter(|c| c.0 >= level * top).map(|c| c.1).collect();
                if chosen.is_empty() || chosen.len() == last {
                    continue;
                }
                last = chosen.len();
                let mut trial_phase = phase.clone();
                for &i in &chosen {
                    trial_phase.set(i, !retract);
                }
                let mut trial = u.clone();
                replace_in_place(&mut trial, &trial_phase, bd, &screen)?;
                let mut j = total_energy(&trial, &all, params);
                if j < current - gain_min {
                    replace_in_place(&mut trial, &trial_phase, bd, cfg)?;
                    j = total_energy(&trial, &all, params);
                }
                if j < current - gain_min {
                    *u = trial;
                    *phase = trial_phase;
                    current = j;
                    trace.push(j);
                    moves += 1;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(moves)
}

/// Computes a discrete local minimizer of `J` with boundary data `bd`.
pub fn minimize(bd: &BoundaryData, params: &EnergyParams, cfg: &SolverConfig) -> Result<MinimizeResult> {
    cfg.validate()?;
    let grid = *bd.grid();
    let all = NodeRegion::all(&grid);
    let smooth = anneal(bd, params, cfg)?;
    let (mut u, mut phase, j0) = initial_phase(&smooth, bd, params, cfg)?;

    let mut trace = vec![j0];
    let mut converged = false;
    let mut iterations = 0;
    let mut flips = 0;
    while iterations < cfg.max_outer {
        iterations += 1;
        let moved = front_relaxation(&mut u, &mut phase, bd, params, cfg, &mut trace)?;
        let trim = phase_trim_sweep(&u, &phase, bd, params, cfg)?;
        if trim.accepted == 0 {
            if moved == 0 {
                converged = true;
                break;
            }
            continue;
        }
        flips += trim.accepted;
        phase = trim.phase;
        u = trim.field;
        replace_in_place(&mut u, &phase, bd, cfg)?;
        trace.push(total_energy(&u, &all, params));
    }
    let phase = PhaseSet::from_field(&u);
    Ok(MinimizeResult {
        field: u,
        phase,
        energy_trace: trace,
        converged,
        iterations,
        accepted_flips: flips,
    })
}

//! Jones beta numbers of weighted point clouds, the beta/Weiss-pinching
//! estimate, directional energies on annuli and the quantitative splitting
//! probe.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::blowup::{stratum_membership, stratum_schedule};
use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::grid::FieldView;
use crate::monotonicity::{fmt_f64, is_free_boundary_point, weiss_energy, RESOLUTION_FLOOR_CELLS};
use crate::quadrature::Quadrature;

/// Largest cloud accepted by [`beta_brute_force`].
pub const ORACLE_MAX_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl PointMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points.first().map_or(0, Vec::len);
        if points
            .iter()
            .any(|p| p.len() != dim || p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Dimension("points must share one dimension and be finite".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("weights must be positive and finite".into()));
        }
        Ok(Self { dim, points, weights })
    }

    /// Unit mass at each point.
    pub fn counting(points: Vec<Vec<f64>>) -> Result<Self> {
        let w = vec![1.0; points.len()];
        Self::new(points, w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices of the points in the closed ball `B_r(x)`.
    pub fn in_ball(&self, x: &[f64], r: f64) -> Vec<usize> {
        let r2 = r * r * (1.0 + 1e-12);
        (0..self.len()).filter(|&i| dist_sq(&self.points[i], x) <= r2).collect()
    }

    pub fn mass(&self, x: &[f64], r: f64) -> f64 {
        self.in_ball(x, r).iter().map(|&i| self.weights[i]).sum()
    }

    fn nonempty_ball(&self, x: &[f64], r: f64) -> Result<(Vec<usize>, f64)> {
        if x.len() < self.dim {
            return Err(Error::Dimension(format!(
                "center has {} coordinates, expected {}",
                x.len(),
                self.dim
            )));
        }
        let idx = self.in_ball(x, r);
        let mass: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        if idx.is_empty() {
            return Err(Error::EmptyMeasure {
                center: x.to_vec(),
                radius: r,
            });
        }
        Ok((idx, mass))
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Mass-weighted mean of the points of `mu` in the closed ball `B_r(x)`.
pub fn barycenter(mu: &PointMeasure, x: &[f64], r: f64) -> Result<Vec<f64>> {
    let (idx, mass) = mu.nonempty_ball(x, r)?;
    let mut p = vec![0.0; mu.dim];
    for &i in &idx {
        for (a, c) in p.iter_mut().zip(&mu.points[i]) {
            *a += mu.weights[i] * c;
        }
    }
    p.iter_mut().for_each(|a| *a /= mass);
    Ok(p)
}

/// Weighted moment `sum w (y - p)(y - p)^t` over `idx`.
fn moment(mu: &PointMeasure, idx: &[usize], p: &[f64]) -> DMatrix<f64> {
    let d = mu.dim;
    let mut m = DMatrix::<f64>::zeros(d, d);
    for &i in idx {
        let y = &mu.points[i];
        let w = mu.weights[i];
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += w * (y[a] - p[a]) * (y[b] - p[b]);
            }
        }
    }
    m
}

/// Mass-averaged centered second moments of `mu` in `B_r(x)`.
pub fn second_moment_form(mu: &PointMeasure, x: &[f64], r: f64) -> Result<DMatrix<f64>> {
    let (idx, mass) = mu.nonempty_ball(x, r)?;
    let p = barycenter(mu, x, r)?;
    Ok(moment(mu, &idx, &p) / mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaResult {
    pub beta: f64,
    pub j: usize,
    pub r: f64,
    /// Barycenter of the ball.
    pub base: Vec<f64>,
    /// Orthonormal basis of the optimal plane's direction space.
    pub basis: Vec<Vec<f64>>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// All eigenvectors, in the order of `eigenvalues`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub mass: f64,
}

/// Flips `v` so its first entry above `1e-12` in magnitude is positive.
fn sign_normalize(v: &mut [f64]) {
    if let Some(&c) = v.iter().find(|c| c.abs() > 1e-12) {
        if c < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending; ties (within
/// `1e-12` of the trace) put the lexicographically larger sign-normalized
/// eigenvector first.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let tie = 1e-12 * m.trace().abs().max(f64::MIN_POSITIVE);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            sign_normalize(&mut v);
            (eig.eigenvalues[i].max(0.0), v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let lex = |a: &Vec<f64>, b: &Vec<f64>| {
        b.iter()
            .zip(a)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    };
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && pairs[start].0 - pairs[end].0 <= tie {
            end += 1;
        }
        let mut group: Vec<Vec<f64>> = pairs[start..end].iter().map(|p| p.1.clone()).collect();
        group.sort_by(lex);
        for (p, v) in pairs[start..end].iter_mut().zip(group) {
            p.1 = v;
        }
        start = end;
    }
    pairs.into_iter().unzip()
}

fn check_j(d: usize, j: usize) -> Result<()> {
    if j == 0 || j >= d {
        return Err(Error::InvalidParameter(format!(
            "plane dimension j = {j} must lie in 1..{d}"
        )));
    }
    Ok(())
}

/// `beta^j` of `mu` in `B_r(x)` from the eigenvalues of the second moment
/// form: `beta^2 = mass * sum_{i > j} lambda_i / r^(j+2)`.
pub fn beta_number(mu: &PointMeasure, x: &[f64], r: f64, j: usize) -> Result<BetaResult> {
    check_j(mu.dim, j)?;
    let mass = mu.mass(x, r);
    let form = second_moment_form(mu, x, r)?;
    let base = barycenter(mu, x, r)?;
    let (eigenvalues, eigenvectors) = sorted_eigen(&form);
    let tail: f64 = eigenvalues[j..].iter().sum();
    Ok(BetaResult {
        beta: (mass * tail / r.powi(j as i32 + 2)).sqrt(),
        j,
        r,
        basis: eigenvectors[..j].to_vec(),
        base,
        eigenvalues,
        eigenvectors,
        mass,
    })
}

/// `sum w dist(y, base + span(basis))^2` over the closed ball; `basis` must
/// be orthonormal.
pub fn plane_distance_integral(mu: &PointMeasure, x: &[f64], r: f64, base: &[f64], basis: &[Vec<f64>]) -> f64 {
    mu.in_ball(x, r)
        .into_iter()
        .map(|i| {
            let y: Vec<f64> = mu.points[i].iter().zip(base).map(|(a, b)| a - b).collect();
            let along: f64 = basis.iter().map(|v| dot(&y, v).powi(2)).sum();
            mu.weights[i] * (dot(&y, &y) - along).max(0.0)
        })
        .sum()
}

fn unit_from_angles(d: usize, t: f64, p: f64) -> [f64; 3] {
    if d == 2 {
        [t.cos(), t.sin(), 0.0]
    } else {
        [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
    }
}

/// Sum of squared distances to a plane through the moment's base, for the
/// line with direction `u` (`j = 1`) or the hyperplane with normal `u`
/// (`j = 2`, `d = 3`).
fn plane_cost(m: &DMatrix<f64>, j: usize, u: &[f64; 3]) -> f64 {
    let d = m.nrows();
    let mut q = 0.0;
    for a in 0..d {
        for b in 0..d {
            q += u[a] * m[(a, b)] * u[b];
        }
    }
    if j == 1 {
        m.trace() - q
    } else {
        q
    }
}

/// Minimizes `plane_cost` over directions: coarse angle grid, then
/// golden-section (d = 2) or compass search (d = 3) refinement.
fn best_direction(m: &DMatrix<f64>, j: usize) -> f64 {
    let d = m.nrows();
    let cost = |t: f64, p: f64| plane_cost(m, j, &unit_from_angles(d, t, p));
    if d == 2 {
        let n = 720;
        let step = std::f64::consts::PI / n as f64;
        let (mut bt, mut bc) = (0.0, f64::INFINITY);
        for i in 0..n {
            let t = i as f64 * step;
            let c = cost(t, 0.0);
            if c < bc {
                (bt, bc) = (t, c);
            }
        }
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (bt - step, bt + step);
        let mut c1 = b - g * (b - a);
        let mut c2 = a + g * (b - a);
        let (mut f1, mut f2) = (cost(c1, 0.0), cost(c2, 0.0));
        while b - a > 1e-13 {
            if f1 < f2 {
                b = c2;
                (c2, f2) = (c1, f1);
                c1 = b - g * (b - a);
                f1 = cost(c1, 0.0);
            } else {
                a = c1;
                (c1, f1) = (c2, f2);
                c2 = a + g * (b - a);
                f2 = cost(c2, 0.0);
            }
        }
        bc.min(f1).min(f2)
    } else {
        let (nt, np) = (24, 48);
        let (st, sp) = (std::f64::consts::PI / nt as f64, 2.0 * std::f64::consts::PI / np as f64);
        let (mut bt, mut bp, mut bc) = (0.0, 0.0, f64::INFINITY);
        for i in 0..=nt {
            for k in 0..np {
                let (t, p) = (i as f64 * st, k as f64 * sp);
                let c = cost(t, p);
                if c < bc {
                    (bt, bp, bc) = (t, p, c);
                }
            }
        }
        let mut step = st;
        while step > 1e-11 {
            let mut moved = false;
            for (dt, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                let c = cost(bt + dt, bp + dp);
                if c < bc {
                    (bt, bp, bc) = (bt + dt, bp + dp, c);
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        bc
    }
}

/// `beta^j` of `mu` in `B_r(x)` by direct search over planes: base points on
/// an 11-point-per-axis grid of half-width `r/4` around the barycenter
/// (refined three times by a factor 10), directions by grid search plus
/// local refinement. Limited to small clouds in `d = 2, 3`.
pub fn beta_brute_force(mu: &PointMeasure, x: &[f64], r: f64, j: usize) -> Result<f64> {
    let d = mu.dim;
    if mu.len() > ORACLE_MAX_POINTS || !(2..=3).contains(&d) {
        return Err(Error::OracleScope {
            points: mu.len(),
            dim: d,
            max_points: ORACLE_MAX_POINTS,
        });
    }
    check_j(d, j)?;
    let (idx, _) = mu.nonempty_ball(x, r)?;
    let mut center = barycenter(mu, x, r)?;
    let mut half = 0.25 * r;
    let per_axis = 11usize;
    let mut best = f64::INFINITY;
    for _level in 0..4 {
        let step = 2.0 * half / (per_axis - 1) as f64;
        let mut best_base = center.clone();
        let total = per_axis.pow(d as u32);
        for flat in 0..total {
            let mut p = center.clone();
            let mut rest = flat;
            for c in p.iter_mut() {
                *c += -half + (rest % per_axis) as f64 * step;
                rest /= per_axis;
            }
            let c = best_direction(&moment(mu, &idx, &p), j);
            if c < best {
                best = c;
                best_base = p;
            }
        }
        center = best_base;
        half = step;
    }
    Ok((best.max(0.0) / r.powi(j as i32 + 2)).sqrt())
}

/// `r^-(d+2) int_{A_{3r,4r}(x)} sum_i sum_l (v_i . grad u_l)^2`.
pub fn directional_energy(
    view: &impl FieldView,
    x: &[f64],
    r: f64,
    vectors: &[Vec<f64>],
    q: &Quadrature,
) -> Result<f64> {
    let d = view.dim();
    let k = view.components();
    for (a, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(Error::Dimension(format!("vector of length {} in d = {d}", v.len())));
        }
        for (b, w) in vectors.iter().enumerate().skip(a) {
            let target = if a == b { 1.0 } else { 0.0 };
            if (dot(v, w) - target).abs() > 1e-8 {
                return Err(Error::InvalidParameter("directions are not orthonormal".into()));
            }
        }
    }
    view.check_window(x, 4.0 * r)?;
    let mut val = vec![0.0; k];
    let mut jac = vec![0.0; k * d];
    let total = q.try_annulus_integral(&x[..d], 3.0 * r, 4.0 * r, |z| {
        view.eval(z, &mut val, Some(&mut jac))?;
        let mut s = 0.0;
        for v in vectors {
            for l in 0..k {
                s += (0..d).map(|i| v[i] * jac[l * d + i]).sum::<f64>().powi(2);
            }
        }
        Ok(s)
    })?;
    Ok(total / r.powi(d as i32 + 2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub x: Vec<f64>,
    pub r: f64,
    pub j: usize,
    /// `beta^2`.
    pub lhs: f64,
    /// `int_{B_r(x)} (Phi(y, 8r) - Phi(y, r)) dmu(y)`.
    pub rhs: f64,
    /// `lhs r^j / rhs`; `None` when `rhs <= 0 < lhs`.
    pub implied_constant: Option<f64>,
    pub infinite: bool,
    /// `rhs < -delta`: Weiss monotonicity failed on the support.
    pub negative_rhs: bool,
    /// `Phi(x, 8r) - Phi(x, s)` with `s = max(delta r, 8h)`.
    pub pinching: f64,
    pub pinching_radius: f64,
    /// `pinching < delta`.
    pub pinched: bool,
}

/// Evaluates both sides of `beta^2 <= C r^-j int (Phi(y,8r) - Phi(y,r)) dmu`
/// and the constant they imply, along with the pinching hypothesis at `x`.
#[allow(clippy::too_many_arguments)]
pub fn beta_estimate_check(
    view: &impl FieldView,
    mu: &PointMeasure,
    x: &[f64],
    r: f64,
    j: usize,
    delta: f64,
    params: &EnergyParams,
    q: &Quadrature,
) -> Result<EstimateReport> {
    beta_estimate_with(view, mu, x, r, j, delta, |y, s| weiss_energy(view, y, s, params, q))
}

/// As [`beta_estimate_check`] with the Weiss energy `phi(y, s)` supplied by
/// the caller (for example from a cache).
pub fn beta_estimate_with(
    view: &impl FieldView,
    mu: &PointMeasure,
    x: &[f64],
    r: f64,
    j: usize,
    delta: f64,
    mut phi: impl FnMut(&[f64], f64) -> Result<f64>,
) -> Result<EstimateReport> {
    let beta = beta_number(mu, x, r, j)?;
    let lhs = beta.beta * beta.beta;
    let mut rhs = 0.0;
    for i in mu.in_ball(x, r) {
        let y = &mu.points[i];
        rhs += mu.weights[i] * (phi(y, 8.0 * r)? - phi(y, r)?);
    }
    let pinching_radius = (delta * r).max(RESOLUTION_FLOOR_CELLS * view.spacing());
    let pinching = phi(x, 8.0 * r)? - phi(x, pinching_radius)?;
    let (implied_constant, infinite) = if rhs > 0.0 {
        (Some(lhs * r.powi(j as i32) / rhs), false)
    } else if lhs > 0.0 {
        (None, true)
    } else {
        (Some(0.0), false)
    };
    Ok(EstimateReport {
        x: x[..view.dim()].to_vec(),
        r,
        j,
        lhs,
        rhs,
        implied_constant,
        infinite,
        negative_rhs: rhs < -delta,
        pinching,
        pinching_radius,
        pinched: pinching < delta,
    })
}

/// CSV of beta reports: `x..., r, j, beta, lambda_1..lambda_d, mass, base...,
/// basis vectors...`.
pub fn beta_csv(centers: &[Vec<f64>], results: &[BetaResult]) -> String {
    let mut out = String::new();
    let Some(first) = results.first() else {
        return out;
    };
    let d = first.base.len();
    let axes = ["x", "y", "z"];
    for a in axes.iter().take(d) {
        let _ = write!(out, "{a},");
    }
    out.push_str("r,j,beta");
    for i in 1..=d {
        let _ = write!(out, ",lambda_{i}");
    }
    out.push_str(",mass");
    for a in axes.iter().take(d) {
        let _ = write!(out, ",base_{a}");
    }
    for b in 0..first.j {
        for a in axes.iter().take(d) {
            let _ = write!(out, ",v{b}_{a}");
        }
    }
    out.push('\n');
    for (x, res) in centers.iter().zip(results) {
        for c in x {
            let _ = write!(out, "{},", fmt_f64(*c));
        }
        let _ = write!(out, "{},{},{}", fmt_f64(res.r), res.j, fmt_f64(res.beta));
        for v in res.eigenvalues.iter().chain([res.mass].iter()).chain(&res.base) {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        for v in res.basis.iter().flatten() {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplittingProbeConfig {
    /// Spread radius, relative to `r`.
    pub rho: f64,
    /// Pinching scale and energy drop of the first alternative.
    pub gamma: f64,
    /// Fine pinching parameter.
    pub eta: f64,
    /// Reference level `E`; `None` uses the sampled `sup Phi(z, 3r)` over
    /// `B_3r(x)`.
    pub energy: Option<f64>,
    pub eps: f64,
    pub j: usize,
    /// Lattice step, in grid cells, for sampling `B_r(x)`.
    pub sample_stride: usize,
    /// Lattice step, in grid cells, for the supremum over `B_3r(x)`.
    pub sup_stride: usize,
    pub tau_rel: f64,
}

impl Default for SplittingProbeConfig {
    fn default() -> Self {
        Self {
            rho: 0.3,
            gamma: 0.75,
            eta: 0.4,
            energy: None,
            eps: 0.01,
            j: 1,
            sample_stride: 1,
            sup_stride: 4,
            tau_rel: crate::grid::POSITIVITY_REL,
        }
    }
}

impl SplittingProbeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("gamma", self.gamma), ("eta", self.eta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} not in (0, 1)")));
            }
        }
        if !(self.eps > 0.0) || self.j == 0 || self.sample_stride == 0 || self.sup_stride == 0 {
            return Err(Error::InvalidParameter(format!("invalid probe config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Every sampled stratum point keeps `Phi(z, gamma r) >= E - gamma`.
    Pinched,
    /// The pinched set lies in the `rho r`-tube of a `(j-1)`-plane.
    Concentrated,
    Neither,
    /// A precondition failed; nothing was tested.
    Skipped,
}

impl Alternative {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Pinched => "alt1",
            Self::Concentrated => "alt2",
            Self::Neither => "neither",
            Self::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingReport {
    pub x: Vec<f64>,
    pub r: f64,
    pub alternative: Alternative,
    pub skip_reason: Option<String>,
    /// `sup Phi(z, 3r)` over the sampled `B_3r(x)`.
    pub sup_energy: Option<f64>,
    pub energy: Option<f64>,
    /// Number of lattice points in the pinched set `P_eta`.
    pub pinched_count: usize,
    /// Greedy `rho r`-spread points of `P_eta`; the first is the base.
    pub spread_points: Vec<Vec<f64>>,
    /// Largest distance from `P_eta` to the affine span of the spread points
    /// (when there are at most `j` of them).
    pub tube_distance: Option<f64>,
    pub concentrated: bool,
    pub stratum_count: usize,
    pub pinched_holds: bool,
    /// Stratum points with `Phi(z, gamma r) < E - gamma`.
    pub witnesses: Vec<Vec<f64>>,
}

/// Lattice points `m * step` (integer `m`) in the closed ball `B_radius(x)`,
/// in lexicographic order (last axis fastest).
pub fn lattice_in_ball(x: &[f64], radius: f64, step: f64) -> Vec<Vec<f64>> {
    let d = x.len();
    let lo: Vec<i64> = x.iter().map(|c| ((c - radius) / step).ceil() as i64).collect();
    let hi: Vec<i64> = x.iter().map(|c| ((c + radius) / step).floor() as i64).collect();
    let mut out = Vec::new();
    let mut m = lo.clone();
    let r2 = radius * radius * (1.0 + 1e-12);
    if lo.iter().zip(&hi).any(|(a, b)| a > b) {
        return out;
    }
    loop {
        let z: Vec<f64> = m.iter().map(|&i| i as f64 * step).collect();
        if dist_sq(&z, x) <= r2 {
            out.push(z);
        }
        let mut a = d;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            if m[a] < hi[a] {
                m[a] += 1;
                break;
            }
            m[a] = lo[a];
        }
    }
}

/// Distance from `z` to the affine span of `pts`.
fn affine_distance(z: &[f64], pts: &[Vec<f64>]) -> f64 {
    let Some(base) = pts.first() else {
        return f64::INFINITY;
    };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for p in &pts[1..] {
        let mut v: Vec<f64> = p.iter().zip(base).map(|(a, b)| a - b).collect();
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(a, e)| *a -= c * e);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-14 {
            basis.push(v.iter().map(|a| a / n).collect());
        }
    }
    let mut y: Vec<f64> = z.iter().zip(base).map(|(a, b)| a - b).collect();
    for b in &basis {
        let c = dot(&y, b);
        y.iter_mut().zip(b).for_each(|(a, e)| *a -= c * e);
    }
    dot(&y, &y).sqrt()
}

/// Greedy farthest-point insertion: starts at the point nearest the mean,
/// then adds the point farthest from the current affine span while that
/// distance is at least `spread`.
fn spread_points(pts: &[Vec<f64>], spread: f64, max_count: usize) -> Vec<Vec<f64>> {
    if pts.is_empty() {
        return Vec::new();
    }
    let d = pts[0].len();
    let mut mean = vec![0.0; d];
    for p in pts {
        mean.iter_mut().zip(p).for_each(|(m, c)| *m += c / pts.len() as f64);
    }
    let first = pts
        .iter()
        .enumerate()
        .min_by(|a, b| dist_sq(a.1, &mean).total_cmp(&dist_sq(b.1, &mean)).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut chosen = vec![pts[first].clone()];
    while chosen.len() < max_count {
        let (far, dist) =
            pts.iter()
                .map(|p| affine_distance(p, &chosen))
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
                );
        if dist < spread {
            break;
        }
        chosen.push(pts[far].clone());
    }
    chosen
}

/// Tests the two alternatives of the quantitative splitting dichotomy at
/// `B_r(x)` on lattice samples.
pub fn splitting_probe(
    view: &impl FieldView,
    x: &[f64],
    r: f64,
    cfg: &SplittingProbeConfig,
    params: &EnergyParams,
    q: &Quadrature,
) -> Result<SplittingReport> {
    cfg.validate()?;
    let d = view.dim();
    let x = &x[..d];
    let h = view.spacing();
    let mut report = SplittingReport {
        x: x.to_vec(),
        r,
        alternative: Alternative::Skipped,
        skip_reason: None,
        sup_energy: None,
        energy: None,
        pinched_count: 0,
        spread_points: Vec::new(),
        tube_distance: None,
        concentrated: false,
        stratum_count: 0,
        pinched_holds: false,
        witnesses: Vec::new(),
    };
    if let Err(e) = view.check_window(x, 10.0 * r) {
        report.skip_reason = Some(format!("B_10r(x) leaves the domain: {e}"));
        return Ok(report);
    }
    let floor = RESOLUTION_FLOOR_CELLS * h;
    let fine = 2.0 * cfg.eta * r;
    if fine.min(cfg.gamma * r) < floor * (1.0 - 1e-12) {
        report.skip_reason = Some(format!(
            "pinching radii 2 eta r = {fine} and gamma r = {} must resolve {floor}",
            cfg.gamma * r
        ));
        return Ok(report);
    }

    let mut sup = f64::NEG_INFINITY;
    for z in lattice_in_ball(x, 3.0 * r, cfg.sup_stride as f64 * h) {
        sup = sup.max(weiss_energy(view, &z, 3.0 * r, params, q)?);
    }
    report.sup_energy = Some(sup);
    let energy = cfg.energy.unwrap_or(sup);
    report.energy = Some(energy);
    if sup > energy + 1e-12 * energy.abs().max(1.0) {
        report.skip_reason = Some(format!("sup Phi(z, 3r) = {sup} exceeds E = {energy}"));
        return Ok(report);
    }

    let samples = lattice_in_ball(x, r, cfg.sample_stride as f64 * h);
    let mut pinched = Vec::new();
    for z in &samples {
        if weiss_energy(view, z, fine, params, q)? >= energy - cfg.eta {
            pinched.push(z.clone());
        }
    }
    report.pinched_count = pinched.len();
    let spread = spread_points(&pinched, cfg.rho * r, cfg.j + 1);
    if spread.len() <= cfg.j {
        let tube = pinched.iter().map(|z| affine_distance(z, &spread)).fold(0.0, f64::max);
        report.tube_distance = Some(tube);
        report.concentrated = tube < cfg.rho * r;
    }
    report.spread_points = spread;

    let mut holds = true;
    for z in &samples {
        if !is_free_boundary_point(view, z, cfg.tau_rel)? {
            continue;
        }
        let sched = stratum_schedule(view, z);
        let rep = stratum_membership(view, z, cfg.eps, cfg.j, &sched, cfg.tau_rel, q)?;
        if !rep.member {
            continue;
        }
        report.stratum_count += 1;
        if weiss_energy(view, z, cfg.gamma * r, params, q)? < energy - cfg.gamma {
            holds = false;
            report.witnesses.push(z.clone());
        }
    }
    report.pinched_holds = holds;
    report.alternative = if report.concentrated {
        Alternative::Concentrated
    } else if holds {
        Alternative::Pinched
    } else {
        Alternative::Neither
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSolution;
    use std::f64::consts::PI;

    fn cross() -> PointMeasure {
        PointMeasure::counting(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap()
    }

    #[test]
    fn barycenters() {
        assert_eq!(barycenter(&cross(), &[0.0, 0.0], 2.0).unwrap(), vec![0.0, 0.0]);
        let two = PointMeasure::counting(vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(barycenter(&two, &[1.0, 0.0], 2.0).unwrap(), vec![1.0, 0.0]);
        let weighted = PointMeasure::new(vec![vec![0.0, 0.0], vec![2.0, 0.0]], vec![1.0, 3.0]).unwrap();
        let p = barycenter(&weighted, &[1.0, 0.0], 2.0).unwrap();
        assert!((p[0] - 1.5).abs() < 1e-15 && p[1] == 0.0);
        assert!(matches!(
            barycenter(&two, &[10.0, 0.0], 1.0),
            Err(Error::EmptyMeasure { .. })
        ));
    }

    #[test]
    fn closed_ball_includes_the_boundary() {
        let two = PointMeasure::counting(vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(two.in_ball(&[1.0, 0.0], 1.0), vec![0, 1]);
    }

    #[test]
    fn second_moments() {
        let m = second_moment_form(&cross(), &[0.0, 0.0], 2.0).unwrap();
        assert!((m[(0, 0)] - 0.5).abs() < 1e-15 && (m[(1, 1)] - 0.5).abs() < 1e-15 && m[(0, 1)] == 0.0);
        let line = PointMeasure::counting(vec![vec![-1.0, 0.0], vec![0.5, 0.0], vec![2.0, 0.0]]).unwrap();
        let (ev, _) = sorted_eigen(&second_moment_form(&line, &[0.0, 0.0], 3.0).unwrap());
        assert!(ev[0] > 0.0 && ev[1].abs() < 1e-15);
        let single = PointMeasure::counting(vec![vec![0.3, 0.1]]).unwrap();
        assert_eq!(second_moment_form(&single, &[0.0, 0.0], 1.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn cross_has_beta_one_half() {
        let b = beta_number(&cross(), &[0.0, 0.0], 2.0, 1).unwrap();
        assert!((b.beta - 0.5).abs() < 1e-15);
        assert_eq!(b.basis, vec![vec![1.0, 0.0]]);
        let bf = beta_brute_force(&cross(), &[0.0, 0.0], 2.0, 1).unwrap();
        assert!((bf - 0.5).abs() < 1e-6 * 0.5);
    }

    #[test]
    fn collinear_cloud_has_zero_beta() {
        let mu = PointMeasure::counting((0..7).map(|i| vec![0.1 * i as f64, 0.2 + 0.05 * i as f64]).collect()).unwrap();
        let b = beta_number(&mu, &[0.3, 0.35], 1.0, 1).unwrap();
        assert!(b.beta < 1e-7);
        let v = &b.basis[0];
        assert!((v[1] / v[0] - 0.5).abs() < 1e-12);
        assert!(beta_brute_force(&mu, &[0.3, 0.35], 1.0, 1).unwrap() < 1e-7);
    }

    #[test]
    fn eigen_route_attains_its_value() {
        let mu = PointMeasure::new(
            vec![
                vec![0.1, 0.2, -0.3],
                vec![0.5, -0.1, 0.0],
                vec![-0.2, 0.4, 0.1],
                vec![0.0, 0.0, 0.6],
                vec![0.3, 0.3, 0.3],
            ],
            vec![1.0, 2.0, 0.5, 1.5, 1.0],
        )
        .unwrap();
        for j in 1..3 {
            let b = beta_number(&mu, &[0.0, 0.0, 0.0], 1.0, j).unwrap();
            let direct = plane_distance_integral(&mu, &[0.0, 0.0, 0.0], 1.0, &b.base, &b.basis);
            assert!((b.beta.powi(2) - direct).abs() < 1e-12 * direct);
            let bf = beta_brute_force(&mu, &[0.0, 0.0, 0.0], 1.0, j).unwrap();
            assert!((b.beta - bf).abs() < 1e-6 * b.beta, "j = {j}: {} vs {bf}", b.beta);
        }
    }

    #[test]
    fn oracle_scope_is_enforced() {
        let mu = PointMeasure::counting((0..51).map(|i| vec![i as f64 * 0.01, 0.0]).collect()).unwrap();
        assert!(matches!(
            beta_brute_force(&mu, &[0.0, 0.0], 1.0, 1),
            Err(Error::OracleScope { .. })
        ));
        assert!(beta_number(&cross(), &[0.0, 0.0], 2.0, 2).is_err());
    }

    #[test]
    fn tied_eigenvectors_are_ordered_deterministically() {
        let m = DMatrix::<f64>::identity(3, 3);
        let (ev, vecs) = sorted_eigen(&m);
        assert_eq!(ev, vec![1.0; 3]);
        for a in 0..3 {
            for b in 0..3 {
                assert!((dot(&vecs[a], &vecs[b]) - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
            assert!(vecs[a].iter().find(|c| c.abs() > 1e-12).unwrap() > &0.0);
        }
        assert!(vecs.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn directional_energy_closed_forms() {
        let model = ModelSolution::rank_one(&[0.6, 0.8], &[1.0, 0.0]).unwrap();
        let view = model.view(1e-3, 5.0);
        let q = Quadrature::default_for(2);
        let e = directional_energy(&view, &[0.0, 0.0], 1.0, &[vec![1.0, 0.0]], &q).unwrap();
        assert!((e - 7.0 * PI).abs() < 1e-10, "{e}");
        let e = directional_energy(&view, &[0.0, 0.0], 1.0, &[vec![0.0, 1.0]], &q).unwrap();
        assert!(e.abs() < 1e-15);
        let zero = ModelSolution::linear(2, 2, &[0.0; 4]).unwrap();
        assert_eq!(
            directional_energy(&zero.view(1e-3, 5.0), &[0.0, 0.0], 1.0, &[vec![1.0, 0.0]], &q).unwrap(),
            0.0
        );
        assert!(directional_energy(&view, &[0.0, 0.0], 1.0, &[vec![1.0, 1e-3]], &q).is_err());
    }

    #[test]
    fn directional_energy_is_additive() {
        let model = ModelSolution::linear(2, 2, &[0.4, -1.1, 0.9, 0.3]).unwrap();
        let view = model.view(1e-3, 5.0);
        let q = Quadrature::default_for(2);
        let s = 0.5f64.sqrt();
        let (v, w) = (vec![s, s], vec![-s, s]);
        let x = [0.1, -0.2];
        let both = directional_energy(&view, &x, 0.5, &[v.clone(), w.clone()], &q).unwrap();
        let sum = directional_energy(&view, &x, 0.5, &[v], &q).unwrap()
            + directional_energy(&view, &x, 0.5, &[w], &q).unwrap();
        assert!((both - sum).abs() < 1e-12 * both);
    }

    #[test]
    fn estimate_on_the_exact_line_is_zero() {
        let model = ModelSolution::rank_one(&[0.6, 0.8], &[1.0, 0.0]).unwrap();
        let view = model.view(1.0 / 256.0, 1.0);
        let mu = PointMeasure::counting((-4..=4).map(|i| vec![0.0, i as f64 / 64.0]).collect()).unwrap();
        let params = EnergyParams::new(1.0).unwrap();
        let rep = beta_estimate_check(
            &view,
            &mu,
            &[0.0, 0.0],
            1.0 / 16.0,
            1,
            0.05,
            &params,
            &Quadrature::default_for(2),
        )
        .unwrap();
        assert!(rep.lhs < 1e-20);
        assert!(rep.rhs.abs() < 1e-9 && !rep.infinite);
        assert!(rep.pinched);
    }

    #[test]
    fn lattice_sampling() {
        let pts = lattice_in_ball(&[0.0, 0.0], 1.0, 0.5);
        assert_eq!(pts.len(), 13);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(lattice_in_ball(&[0.3, 0.3], 0.1, 1.0).is_empty());
    }

    #[test]
    fn spread_points_follow_the_cloud() {
        let line: Vec<Vec<f64>> = (-5..=5).map(|i| vec![0.0, 0.1 * i as f64]).collect();
        let s = spread_points(&line, 0.2, 2);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], vec![0.0, 0.0]);
        let blob: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.01, 0.0], vec![0.0, -0.01]];
        assert_eq!(spread_points(&blob, 0.2, 2).len(), 1);
        assert!((affine_distance(&[1.0, 1.0], &[vec![0.0, 0.0], vec![2.0, 0.0]]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn probe_alternatives_on_exact_fields() {
        let q = Quadrature::default_for(2);
        let params = EnergyParams::new(1.0).unwrap();
        let cfg = SplittingProbeConfig {
            sup_stride: 8,
            ..SplittingProbeConfig::default()
        };
        let h = 1.0 / 128.0;
        let lin = ModelSolution::rank_one(&[0.6, 0.8], &[1.0, 0.0]).unwrap();
        let view = lin.view(h, 1.0);
        let on = splitting_probe(&view, &[0.0, 0.0], 0.085, &cfg, &params, &q).unwrap();
        assert_eq!(on.alternative, Alternative::Pinched, "{on:?}");
        assert!(on.stratum_count > 0);
        let off = splitting_probe(&view, &[0.125, 0.0], 0.085, &cfg, &params, &q).unwrap();
        assert_eq!(off.alternative, Alternative::Concentrated, "{off:?}");
        let id = ModelSolution::linear(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let full = splitting_probe(&id.view(h, 1.0), &[0.0, 0.0], 0.085, &cfg, &params, &q).unwrap();
        assert_eq!(full.alternative, Alternative::Concentrated, "{full:?}");
        let edge = splitting_probe(&view, &[0.5, 0.0], 0.085, &cfg, &params, &q).unwrap();
        assert_eq!(edge.alternative, Alternative::Skipped);
    }

    #[test]
    fn beta_csv_layout() {
        let b = beta_number(&cross(), &[0.0, 0.0], 2.0, 1).unwrap();
        let csv = beta_csv(&[vec![0.0, 0.0]], &[b]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,r,j,beta,lambda_1,lambda_2,mass,base_x,base_y,v0_x,v0_y");
        assert_eq!(lines[1].split(',').count(), 12);
    }
}

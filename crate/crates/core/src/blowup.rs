//! Linear blow-ups by least squares over balls, their rank, the
//! `(j, eps)`-symmetry test and the `|A^t sigma|` stabilization check.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BallWindow, FieldView};
use crate::monotonicity::{dyadic_schedule, fmt_f64, is_free_boundary_point, RESOLUTION_FLOOR_CELLS};
use crate::quadrature::{unit_ball_volume, Quadrature};

/// Offsets `|U(x0)|` above this many grid cells mark a non-boundary point.
pub const OFFSET_CELLS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupFit {
    pub x0: Vec<f64>,
    pub r: f64,
    pub k: usize,
    pub d: usize,
    /// `k x d`, row-major.
    pub a: Vec<f64>,
    /// `r^-(d+2) int_{B_r} |U - U(x0) - A (x - x0)|^2`.
    pub residual: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `|U(x0)|`, subtracted before fitting.
    pub offset: f64,
    /// `offset > 10 h`: `x0` is not a free boundary point.
    pub offset_flagged: bool,
}

impl BlowupFit {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k, self.d, &self.a)
    }

    pub fn rank(&self, tol_rank: f64) -> usize {
        rank_from_singular_values(&self.singular_values, tol_rank)
    }

    /// `|A^t sigma|`.
    pub fn transpose_norm(&self, sigma: &[f64]) -> f64 {
        let (k, d) = (self.k, self.d);
        (0..d)
            .map(|i| (0..k).map(|l| self.a[l * d + i] * sigma[l]).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `r^-(d+2) int_{B_r} |A (x - x0)|^2 = omega_d |A|_F^2 / (d + 2)`.
    pub fn explained(&self) -> f64 {
        let f2: f64 = self.a.iter().map(|v| v * v).sum();
        unit_ball_volume(self.d) * f2 / (self.d + 2) as f64
    }
}

/// Singular values of a `k x d` row-major matrix, descending.
pub fn singular_values(a: &[f64], k: usize, d: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(k, d, a);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

fn rank_from_singular_values(sv: &[f64], tol_rank: f64) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= tol_rank * top).count()
}

/// Number of singular values at least `tol_rank` times the largest.
pub fn rank_estimate(a: &[f64], k: usize, d: usize, tol_rank: f64) -> Result<usize> {
    if !(tol_rank > 0.0 && tol_rank < 1.0) {
        return Err(Error::InvalidParameter(format!("tol_rank = {tol_rank} not in (0, 1)")));
    }
    Ok(rank_from_singular_values(&singular_values(a, k, d), tol_rank))
}

/// Rank-`m` truncation of the SVD of a `k x d` matrix.
pub fn truncate_rank(a: &[f64], k: usize, d: usize, m: usize) -> Vec<f64> {
    let mat = DMatrix::from_row_slice(k, d, a);
    let svd = mat.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });
    let mut out = DMatrix::<f64>::zeros(k, d);
    for &i in order.iter().take(m) {
        out += svd.singular_values[i] * u.column(i) * vt.row(i);
    }
    let mut flat = Vec::with_capacity(k * d);
    for l in 0..k {
        for i in 0..d {
            flat.push(out[(l, i)]);
        }
    }
    flat
}

fn sub_offset_distance(view: &impl FieldView, w: &BallWindow, u0: &[f64], a: &[f64], q: &Quadrature) -> Result<f64> {
    let k = view.components();
    let d = view.dim();
    let x0 = w.center().to_vec();
    let mut val = vec![0.0; k];
    q.try_ball_integral(w, |x| {
        view.eval(x, &mut val, None)?;
        let mut s = 0.0;
        for l in 0..k {
            let lin: f64 = (0..d).map(|i| a[l * d + i] * (x[i] - x0[i])).sum();
            s += (val[l] - u0[l] - lin).powi(2);
        }
        Ok(s)
    })
}

fn value_at(view: &impl FieldView, x: &[f64]) -> Result<Vec<f64>> {
    let mut v = vec![0.0; view.components()];
    view.eval(&x[..view.dim()], &mut v, None)?;
    Ok(v)
}

/// Least-squares linear fit `A` of `U - U(x0)` over `B_r(x0)`, using the
/// isotropy of ball moments: `A_li = c_r^-1 int (u_l - u_l(x0)) (x - x0)_i`
/// with `c_r = omega_d r^(d+2) / (d+2)`.
pub fn fit_linear_blowup(view: &impl FieldView, x0: &[f64], r: f64, q: &Quadrature) -> Result<BlowupFit> {
    view.check_resolution(r, RESOLUTION_FLOOR_CELLS)?;
    let w = BallWindow::new(view, x0, r)?;
    let k = view.components();
    let d = view.dim();
    let u0 = value_at(view, x0)?;
    let offset = u0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c_r = unit_ball_volume(d) * r.powi(d as i32 + 2) / (d + 2) as f64;
    let mut a = vec![0.0; k * d];
    let mut val = vec![0.0; k];
    for l in 0..k {
        for i in 0..d {
            a[l * d + i] = q.try_ball_integral(&w, |x| {
                view.eval(x, &mut val, None)?;
                Ok((val[l] - u0[l]) * (x[i] - x0[i]))
            })? / c_r;
        }
    }
    let residual = sub_offset_distance(view, &w, &u0, &a, q)? / r.powi(d as i32 + 2);
    Ok(BlowupFit {
        x0: x0[..d].to_vec(),
        r,
        k,
        d,
        singular_values: singular_values(&a, k, d),
        a,
        residual,
        offset,
        offset_flagged: offset > OFFSET_CELLS * view.spacing(),
    })
}

/// Unit probe vectors: the `k` canonical basis vectors followed by `extra`
/// pseudo-random unit vectors drawn from `seed`.
pub fn probe_sigmas(k: usize, extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..k)
        .map(|l| {
            let mut e = vec![0.0; k];
            e[l] = 1.0;
            e
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < k + extra {
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            out.push(v.iter().map(|x| x / n).collect());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupTrace {
    pub x0: Vec<f64>,
    /// Strictly decreasing.
    pub radii: Vec<f64>,
    pub fits: Vec<BlowupFit>,
    pub sigmas: Vec<Vec<f64>>,
    /// `|A_r^t sigma|`, indexed `[radius][sigma]`.
    pub transpose_norms: Vec<Vec<f64>>,
}

pub fn blowup_trace(
    view: &impl FieldView,
    x0: &[f64],
    radii: &[f64],
    sigmas: &[Vec<f64>],
    q: &Quadrature,
) -> Result<BlowupTrace> {
    if radii.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::InvalidParameter(
            "trace radii must be strictly decreasing".into(),
        ));
    }
    let fits: Vec<BlowupFit> = radii
        .iter()
        .map(|&r| fit_linear_blowup(view, x0, r, q))
        .collect::<Result<_>>()?;
    let transpose_norms = fits
        .iter()
        .map(|f| sigmas.iter().map(|s| f.transpose_norm(s)).collect())
        .collect();
    Ok(BlowupTrace {
        x0: x0[..view.dim()].to_vec(),
        radii: radii.to_vec(),
        fits,
        sigmas: sigmas.to_vec(),
        transpose_norms,
    })
}

/// Default floor of the consistency check, relative to the largest singular
/// value seen along the trace.
pub const CONSISTENCY_FLOOR_REL: f64 = 0.1;

impl BlowupTrace {
    /// Worst relative variation of `|A_r^t sigma|` over all radius pairs and
    /// probes, each difference divided by the larger of the two values or
    /// `floor_rel` times the largest singular value along the trace.
    pub fn consistency(&self, floor_rel: f64) -> Result<f64> {
        if self.radii.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "consistency check needs at least 3 radii, got {}",
                self.radii.len()
            )));
        }
        let scale = self
            .fits
            .iter()
            .filter_map(|f| f.singular_values.first().copied())
            .fold(0.0, f64::max);
        let floor = (floor_rel * scale).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for s in 0..self.sigmas.len() {
            for i in 0..self.radii.len() {
                for j in i + 1..self.radii.len() {
                    let (a, b) = (self.transpose_norms[i][s], self.transpose_norms[j][s]);
                    worst = worst.max((a - b).abs() / a.max(b).max(floor));
                }
            }
        }
        Ok(worst)
    }

    /// Ranks of the fitted matrices, one per radius.
    pub fn ranks(&self, tol_rank: f64) -> Vec<usize> {
        self.fits.iter().map(|f| f.rank(tol_rank)).collect()
    }

    /// CSV: `x0..., r, A entries, residual, singular values, |A^t sigma|...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.fits.first() else {
            return out;
        };
        let (k, d) = (first.k, first.d);
        let axes = ["x", "y", "z"];
        for a in axes.iter().take(d) {
            let _ = write!(out, "x0_{a},");
        }
        out.push('r');
        for l in 0..k {
            for i in 0..d {
                let _ = write!(out, ",A_{l}{i}");
            }
        }
        out.push_str(",residual");
        for i in 0..first.singular_values.len() {
            let _ = write!(out, ",sv_{i}");
        }
        for s in 0..self.sigmas.len() {
            let _ = write!(out, ",AtSigma_{s}");
        }
        out.push('\n');
        for (m, f) in self.fits.iter().enumerate() {
            for c in &self.x0 {
                let _ = write!(out, "{},", fmt_f64(*c));
            }
            out.push_str(&fmt_f64(f.r));
            for v in f.a.iter().chain([f.residual].iter()).chain(&f.singular_values) {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            for v in &self.transpose_norms[m] {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryParams {
    /// Number of symmetry directions; the candidate matrices have rank `d - j`.
    pub j: usize,
    pub eps: f64,
    /// Power of `r` normalizing the squared distance; `None` means `d + 2`.
    pub norm_exponent: Option<f64>,
}

impl SymmetryParams {
    pub fn new(j: usize, eps: f64) -> Self {
        Self {
            j,
            eps,
            norm_exponent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryOutcome {
    /// `d - j <= min(k, d)`.
    pub feasible: bool,
    pub symmetric: bool,
    /// Best rank-`(d - j)` matrix, `k x d` row-major (empty if infeasible).
    pub a: Vec<f64>,
    pub distance: f64,
}

/// Tests whether `U` is `(j, eps)`-symmetric in `B_r(x)`: some matrix of
/// rank `d - j` is within `eps` in normalized squared distance. The best
/// such matrix is the SVD truncation of the unconstrained fit.
pub fn symmetric_test(
    view: &impl FieldView,
    x: &[f64],
    r: f64,
    params: &SymmetryParams,
    q: &Quadrature,
) -> Result<SymmetryOutcome> {
    if !(params.eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps = {} must be positive",
            params.eps
        )));
    }
    let k = view.components();
    let d = view.dim();
    if params.j > d || d - params.j > k.min(d) {
        return Ok(SymmetryOutcome {
            feasible: false,
            symmetric: false,
            a: Vec::new(),
            distance: f64::INFINITY,
        });
    }
    let fit = fit_linear_blowup(view, x, r, q)?;
    let a = truncate_rank(&fit.a, k, d, d - params.j);
    let w = BallWindow::new(view, x, r)?;
    let u0 = value_at(view, x)?;
    let p = params.norm_exponent.unwrap_or((d + 2) as f64);
    let distance = sub_offset_distance(view, &w, &u0, &a, q)? / r.powf(p);
    Ok(SymmetryOutcome {
        feasible: true,
        symmetric: distance < params.eps,
        a,
        distance,
    })
}

/// Largest radius `r` for which `B_r(x)` is a valid window of `view`, to
/// relative precision `1e-9`; zero if none is.
pub fn window_room(view: &impl FieldView, x: &[f64]) -> f64 {
    let ok = |r: f64| view.check_window(x, r).is_ok();
    let mut lo = 0.0;
    let mut hi = view.spacing();
    while ok(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return lo;
        }
    }
    if lo == 0.0 {
        let mut t = hi;
        while !ok(t) {
            t *= 0.5;
            if t < 1e-9 * hi {
                return 0.0;
            }
        }
        lo = t;
    }
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Dyadic radii from `min(1, room)` down to eight cells, where `room` is the
/// largest radius whose window fits around `x`.
pub fn stratum_schedule(view: &impl FieldView, x: &[f64]) -> Vec<f64> {
    dyadic_schedule(window_room(view, x).min(1.0), RESOLUTION_FLOOR_CELLS * view.spacing())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub on_free_boundary: bool,
    /// `x` lies in `S^j_eps`.
    pub member: bool,
    pub radii: Vec<f64>,
    /// `(j + 1)`-symmetry distances per radius.
    pub distances: Vec<f64>,
}

/// `x` is in `S^j_eps` iff `U` is not `(j + 1, eps)`-symmetric in `B_r(x)`
/// at any radius of `schedule`. Points off the free boundary belong to no
/// stratum.
pub fn stratum_membership(
    view: &impl FieldView,
    x: &[f64],
    eps: f64,
    j: usize,
    schedule: &[f64],
    tau_rel: f64,
    q: &Quadrature,
) -> Result<StratumReport> {
    let on = is_free_boundary_point(view, x, tau_rel)?;
    let mut distances = Vec::with_capacity(schedule.len());
    let mut member = on && !schedule.is_empty();
    if on {
        let params = SymmetryParams::new(j + 1, eps);
        for &r in schedule {
            let out = symmetric_test(view, x, r, &params, q)?;
            distances.push(out.distance);
            if out.symmetric {
                member = false;
            }
        }
    }
    Ok(StratumReport {
        on_free_boundary: on,
        member,
        radii: schedule.to_vec(),
        distances,
    })
}

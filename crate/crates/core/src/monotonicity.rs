//! Weiss energy, its derivative bound, the Alt-Caffarelli-Friedman
//! functional, volume densities and the density classification of free
//! boundary points.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::grid::{BallWindow, FieldView};
use crate::quadrature::{unit_ball_volume, Quadrature};

/// Smallest analysis radius, in grid cells.
pub const RESOLUTION_FLOOR_CELLS: f64 = 8.0;

/// Largest radius of the default dyadic schedule.
pub const DEFAULT_R0: f64 = 0.25;

/// `U_{x0,r}(x) = U(x0 + r x) / r`, evaluated lazily.
#[derive(Debug, Clone)]
pub struct Rescaled<'a, V: FieldView> {
    inner: &'a V,
    center: Vec<f64>,
    r: f64,
}

/// The rescaling of `view` at `x0` and scale `r`; requires `B_r(x0)` to be a
/// valid window.
pub fn rescale<'a, V: FieldView>(view: &'a V, x0: &[f64], r: f64) -> Result<Rescaled<'a, V>> {
    view.check_window(x0, r)?;
    Ok(Rescaled {
        inner: view,
        center: x0[..view.dim()].to_vec(),
        r,
    })
}

impl<V: FieldView> Rescaled<'_, V> {
    fn map(&self, x: &[f64]) -> [f64; 3] {
        let mut y = [0.0; 3];
        for (a, c) in self.center.iter().enumerate() {
            y[a] = c + self.r * x[a];
        }
        y
    }
}

impl<V: FieldView> FieldView for Rescaled<'_, V> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn components(&self) -> usize {
        self.inner.components()
    }

    fn spacing(&self) -> f64 {
        self.inner.spacing() / self.r
    }

    fn norm_scale(&self) -> f64 {
        self.inner.norm_scale() / self.r
    }

    fn check_window(&self, center: &[f64], radius: f64) -> Result<()> {
        let y = self.map(center);
        self.inner.check_window(&y[..self.dim()], self.r * radius)
    }

    fn eval(&self, x: &[f64], value: &mut [f64], jacobian: Option<&mut [f64]>) -> Result<()> {
        let y = self.map(x);
        self.inner.eval(&y[..self.dim()], value, jacobian)?;
        let k = self.components();
        for v in &mut value[..k] {
            *v /= self.r;
        }
        Ok(())
    }
}

/// Radii `r0 2^-m` down to `floor`, decreasing.
pub fn dyadic_schedule(r0: f64, floor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r0;
    while r >= floor * (1.0 - 1e-12) && out.len() < 64 {
        out.push(r);
        r *= 0.5;
    }
    out
}

/// The default schedule for a view: from `r0` down to eight grid cells.
pub fn default_schedule(view: &impl FieldView, r0: f64) -> Vec<f64> {
    dyadic_schedule(r0, RESOLUTION_FLOOR_CELLS * view.spacing())
}

fn unit_window(view: &impl FieldView) -> Result<BallWindow> {
    BallWindow::new(view, &vec![0.0; view.dim()], 1.0)
}

/// The three terms of the Weiss energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeissTerms {
    pub dirichlet: f64,
    pub boundary: f64,
    pub measure: f64,
}

impl WeissTerms {
    pub fn total(&self) -> f64 {
        self.dirichlet - self.boundary + self.measure
    }
}

/// `int_{B1} |grad V|^2`, `int_{dB1} |V|^2` and `Lambda |{|V| > tau0} cap B1|`
/// for `V = U_{x0,r}`.
pub fn weiss_terms(
    view: &impl FieldView,
    x0: &[f64],
    r: f64,
    params: &EnergyParams,
    q: &Quadrature,
) -> Result<WeissTerms> {
    view.check_resolution(r, RESOLUTION_FLOOR_CELLS)?;
    let v = rescale(view, x0, r)?;
    let w = unit_window(&v)?;
    let k = v.components();
    let d = v.dim();
    let tau = v.positivity_threshold(params.tau_rel);
    let mut val = vec![0.0; k];
    let mut jac = vec![0.0; k * d];
    let dirichlet = q.try_ball_integral(&w, |x| {
        v.eval(x, &mut val, Some(&mut jac))?;
        Ok(jac.iter().map(|g| g * g).sum())
    })?;
    let measure = q.try_ball_integral(&w, |x| {
        v.eval(x, &mut val, None)?;
        let n2: f64 = val.iter().map(|a| a * a).sum();
        Ok(if n2 > tau * tau { params.lambda } else { 0.0 })
    })?;
    let boundary = q.try_sphere_integral(&w, |x| {
        v.eval(x, &mut val, None)?;
        Ok(val.iter().map(|a| a * a).sum())
    })?;
    Ok(WeissTerms {
        dirichlet,
        boundary,
        measure,
    })
}

/// The Weiss energy `Phi(U, x0, r)`.
pub fn weiss_energy(view: &impl FieldView, x0: &[f64], r: f64, params: &EnergyParams, q: &Quadrature) -> Result<f64> {
    Ok(weiss_terms(view, x0, r, params, q)?.total())
}

/// `sum_l int_{dB1} |x . grad u_l - u_l|^2` for the rescaling `U_{x0,r}`.
pub fn weiss_derivative_bound(view: &impl FieldView, x0: &[f64], r: f64, q: &Quadrature) -> Result<f64> {
    view.check_resolution(r, RESOLUTION_FLOOR_CELLS)?;
    let v = rescale(view, x0, r)?;
    let w = unit_window(&v)?;
    let k = v.components();
    let d = v.dim();
    let mut val = vec![0.0; k];
    let mut jac = vec![0.0; k * d];
    q.try_sphere_integral(&w, |x| {
        v.eval(x, &mut val, Some(&mut jac))?;
        let mut s = 0.0;
        for l in 0..k {
            let radial: f64 = (0..d).map(|i| x[i] * jac[l * d + i]).sum();
            s += (radial - val[l]).powi(2);
        }
        Ok(s)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeissProfile {
    pub x0: Vec<f64>,
    /// Decreasing.
    pub radii: Vec<f64>,
    pub phi: Vec<f64>,
    pub bound: Vec<f64>,
}

pub fn weiss_profile(
    view: &impl FieldView,
    x0: &[f64],
    radii: &[f64],
    params: &EnergyParams,
    q: &Quadrature,
) -> Result<WeissProfile> {
    check_decreasing(radii)?;
    let mut phi = Vec::with_capacity(radii.len());
    let mut bound = Vec::with_capacity(radii.len());
    for &r in radii {
        phi.push(weiss_energy(view, x0, r, params, q)?);
        bound.push(weiss_derivative_bound(view, x0, r, q)?);
    }
    Ok(WeissProfile {
        x0: x0[..view.dim()].to_vec(),
        radii: radii.to_vec(),
        phi,
        bound,
    })
}

fn check_decreasing(radii: &[f64]) -> Result<()> {
    if radii.is_empty() || radii.windows(2).any(|p| p[1] >= p[0]) || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "radii {radii:?} must be positive and strictly decreasing"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// The value at a smaller radius exceeds the one at the next larger
    /// radius by more than `delta`.
    Increase,
    /// The difference quotient falls below the averaged derivative bound
    /// minus `delta`.
    BoundDeficit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Index of the smaller radius of the offending pair.
    pub index: usize,
    pub amount: f64,
}

/// Flags non-monotone steps of a profile sampled at decreasing radii.
pub fn increase_violations(values: &[f64], delta: f64) -> Vec<Violation> {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, p)| p[1] > p[0] + delta)
        .map(|(m, p)| Violation {
            kind: ViolationKind::Increase,
            index: m + 1,
            amount: p[1] - p[0],
        })
        .collect()
}

/// Checks that `Phi` does not increase as `r` decreases and that each
/// difference quotient dominates the averaged derivative bound, both within
/// `delta`.
pub fn weiss_monotonicity_check(profile: &WeissProfile, delta: f64) -> Result<Vec<Violation>> {
    if profile.radii.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "monotonicity check needs at least 3 radii, got {}",
            profile.radii.len()
        )));
    }
    let mut out = increase_violations(&profile.phi, delta);
    for m in 1..profile.radii.len() {
        let dr = profile.radii[m - 1] - profile.radii[m];
        let quotient = (profile.phi[m - 1] - profile.phi[m]) / dr;
        let avg = 0.5 * (profile.bound[m - 1] + profile.bound[m]);
        if quotient < avg - delta {
            out.push(Violation {
                kind: ViolationKind::BoundDeficit,
                index: m,
                amount: avg - quotient,
            });
        }
    }
    out.sort_by_key(|v| (v.index, v.kind == ViolationKind::BoundDeficit));
    Ok(out)
}

/// The two weighted Dirichlet integrals of `(sigma . U)_+` and
/// `(sigma . U)_-` over `B_r(x0)`, with weight `|x - x0|^{2-d}`.
pub fn acf_factors(view: &impl FieldView, sigma: &[f64], x0: &[f64], r: f64, q: &Quadrature) -> Result<(f64, f64)> {
    view.check_resolution(r, RESOLUTION_FLOOR_CELLS)?;
    let k = view.components();
    let d = view.dim();
    if sigma.len() != k {
        return Err(Error::Dimension(format!(
            "sigma has {} entries for a field with {k} components",
            sigma.len()
        )));
    }
    let w = BallWindow::new(view, x0, r)?;
    let tau = view.positivity_threshold(1e-12);
    let mut val = vec![0.0; k];
    let mut jac = vec![0.0; k * d];
    // Returns (sign of sigma.U, |grad sigma.U|^2).
    let mut sample = |x: &[f64]| -> Result<(f64, f64)> {
        view.eval(x, &mut val, Some(&mut jac))?;
        let s: f64 = sigma.iter().zip(&val).map(|(a, b)| a * b).sum();
        let mut g2 = 0.0;
        for i in 0..d {
            let gi: f64 = (0..k).map(|l| sigma[l] * jac[l * d + i]).sum();
            g2 += gi * gi;
        }
        let sign = if s > tau {
            1.0
        } else if s < -tau {
            -1.0
        } else {
            0.0
        };
        Ok((sign, g2))
    };
    if d == 2 {
        let plus = q.try_ball_integral(&w, |x| sample(x).map(|(s, g)| if s > 0.0 { g } else { 0.0 }))?;
        let minus = q.try_ball_integral(&w, |x| sample(x).map(|(s, g)| if s < 0.0 { g } else { 0.0 }))?;
        return Ok((plus, minus));
    }
    // The integrable singularity |x - x0|^{2-d} is excised on a ball of two
    // grid cells and replaced there by the sphere mean of the integrand.
    let eps = (2.0 * view.spacing()).min(0.5 * r);
    let weight = |x: &[f64]| {
        let r2: f64 = (0..d).map(|i| (x[i] - x0[i]).powi(2)).sum();
        r2.sqrt().powi(2 - d as i32)
    };
    let inner = BallWindow::free(x0, eps)?;
    let core_volume_factor = 2.0 * std::f64::consts::PI * eps * eps;
    let mut factor = |positive: bool| -> Result<f64> {
        let pick = |(s, g): (f64, f64)| {
            if (positive && s > 0.0) || (!positive && s < 0.0) {
                g
            } else {
                0.0
            }
        };
        let outer = q.try_annulus_integral(x0, eps, r, |x| Ok(pick(sample(x)?) * weight(x)))?;
        let mean = q.try_sphere_integral(&inner, |x| Ok(pick(sample(x)?)))?
            / (crate::quadrature::unit_sphere_area(d) * eps.powi(d as i32 - 1));
        Ok(outer + mean * core_volume_factor)
    };
    let plus = factor(true)?;
    let minus = factor(false)?;
    Ok((plus, minus))
}

/// The ACF functional `Psi(U, sigma, r) = r^-4 I_+ I_-`.
pub fn acf_functional(view: &impl FieldView, sigma: &[f64], x0: &[f64], r: f64, q: &Quadrature) -> Result<f64> {
    let (p, m) = acf_factors(view, sigma, x0, r, q)?;
    Ok(p * m / r.powi(4))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfProfile {
    pub sigma: Vec<f64>,
    pub radii: Vec<f64>,
    pub psi: Vec<f64>,
}

pub fn acf_profile(
    view: &impl FieldView,
    sigma: &[f64],
    x0: &[f64],
    radii: &[f64],
    q: &Quadrature,
) -> Result<AcfProfile> {
    check_decreasing(radii)?;
    let psi = radii
        .iter()
        .map(|&r| acf_functional(view, sigma, x0, r, q))
        .collect::<Result<_>>()?;
    Ok(AcfProfile {
        sigma: sigma.to_vec(),
        radii: radii.to_vec(),
        psi,
    })
}

/// `|{|U| > tau0} cap B_r(x0)| / |B_r|`, clamped to `[0, 1]`.
pub fn density(view: &impl FieldView, x0: &[f64], r: f64, params: &EnergyParams, q: &Quadrature) -> Result<f64> {
    view.check_resolution(r, RESOLUTION_FLOOR_CELLS)?;
    let w = BallWindow::new(view, x0, r)?;
    let k = view.components();
    let tau = view.positivity_threshold(params.tau_rel);
    let mut val = vec![0.0; k];
    let vol = q.try_ball_integral(&w, |x| {
        view.eval(x, &mut val, None)?;
        let n2: f64 = val.iter().map(|a| a * a).sum();
        Ok(if n2 > tau * tau { 1.0 } else { 0.0 })
    })?;
    // Normalizing by the rule's own ball volume makes full and empty balls
    // exact.
    let full = q.try_ball_integral(&w, |_| Ok(1.0))?;
    Ok((vol / full).clamp(0.0, 1.0))
}

/// Whether `x0` separates `{|U| > tau0}` from its complement at grid scale:
/// among `x0` and its `2d` axis neighbours at distance `h`, some lie in the
/// positivity set and some do not.
pub fn is_free_boundary_point(view: &impl FieldView, x0: &[f64], tau_rel: f64) -> Result<bool> {
    let k = view.components();
    let d = view.dim();
    let h = view.spacing();
    let tau = view.positivity_threshold(tau_rel);
    let mut val = vec![0.0; k];
    let mut positive = |p: &[f64]| -> Result<bool> {
        view.eval(p, &mut val, None)?;
        Ok(val.iter().map(|a| a * a).sum::<f64>() > tau * tau)
    };
    let mut seen = [false; 2];
    seen[positive(&x0[..d])? as usize] = true;
    let mut p = x0[..d].to_vec();
    for a in 0..d {
        for s in [-1.0, 1.0] {
            p[a] = x0[a] + s * h;
            seen[positive(&p)? as usize] = true;
            p[a] = x0[a];
        }
    }
    Ok(seen[0] && seen[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Regular,
    OnePhaseSingular,
    TwoPhaseSingular,
}

impl PointClass {
    /// Thresholds a density: `Regular` within `tau_class` of 1/2,
    /// `TwoPhaseSingular` at least `1 - tau_class`, `OnePhaseSingular` in
    /// between; `None` below `1/2 - tau_class`.
    pub fn from_density(density: f64, tau_class: f64) -> Option<Self> {
        if density >= 1.0 - tau_class {
            Some(Self::TwoPhaseSingular)
        } else if (density - 0.5).abs() <= tau_class {
            Some(Self::Regular)
        } else if density > 0.5 {
            Some(Self::OnePhaseSingular)
        } else {
            None
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Regular => "regular",
            Self::OnePhaseSingular => "one_phase_singular",
            Self::TwoPhaseSingular => "two_phase_singular",
        }
    }
}

/// Densities and Weiss energies of a probe over a radius schedule, with
/// their extrapolations to `r = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub x0: Vec<f64>,
    pub radii: Vec<f64>,
    pub density: Vec<f64>,
    /// Richardson extrapolation from the two smallest radii, clamped to
    /// `[0, 1]`.
    pub limit: f64,
    /// `Phi(0+)`, extrapolated the same way.
    pub energy_density: f64,
    /// `Phi(0+) / (Lambda omega_d)`.
    pub energy_density_normalized: f64,
    pub on_free_boundary: bool,
    /// The two smallest-radius densities differ by more than `tau_class`.
    pub inconclusive: bool,
    pub class: Option<PointClass>,
}

impl DensityProfile {
    /// `|Phi(0+) - Lambda omega_d density(0+)| / (Lambda omega_d)`.
    pub fn energy_density_gap(&self) -> f64 {
        (self.energy_density_normalized - self.limit).abs()
    }
}

fn richardson(values: &[f64]) -> f64 {
    match values {
        [] => f64::NAN,
        [v] => *v,
        [.., a, b] => 2.0 * b - a,
    }
}

/// Classifies `x0` by the extrapolated density of the positivity set; the
/// Weiss profile on the same schedule supplies the energy-density
/// cross-check.
pub fn classify_point(
    view: &impl FieldView,
    x0: &[f64],
    schedule: &[f64],
    tau_class: f64,
    params: &EnergyParams,
    q: &Quadrature,
) -> Result<DensityProfile> {
    check_decreasing(schedule)?;
    let weiss: Vec<f64> = schedule
        .iter()
        .map(|&r| weiss_energy(view, x0, r, params, q))
        .collect::<Result<_>>()?;
    classify_with_weiss(view, x0, schedule, &weiss, tau_class, params, q)
}

/// As [`classify_point`], reusing Weiss energies already computed on
/// `schedule`.
pub fn classify_with_weiss(
    view: &impl FieldView,
    x0: &[f64],
    schedule: &[f64],
    weiss: &[f64],
    tau_class: f64,
    params: &EnergyParams,
    q: &Quadrature,
) -> Result<DensityProfile> {
    check_decreasing(schedule)?;
    let dens: Vec<f64> = schedule
        .iter()
        .map(|&r| density(view, x0, r, params, q))
        .collect::<Result<_>>()?;
    let limit = richardson(&dens).clamp(0.0, 1.0);
    let energy_density = richardson(weiss);
    let norm = params.lambda * unit_ball_volume(view.dim());
    let on_free_boundary = is_free_boundary_point(view, x0, params.tau_rel)?;
    let inconclusive = match dens.as_slice() {
        [.., a, b] => (a - b).abs() > tau_class,
        _ => false,
    };
    let class = if on_free_boundary && !inconclusive {
        PointClass::from_density(limit, tau_class)
    } else {
        None
    };
    Ok(DensityProfile {
        x0: x0[..view.dim()].to_vec(),
        radii: schedule.to_vec(),
        density: dens,
        limit,
        energy_density,
        energy_density_normalized: energy_density / norm,
        on_free_boundary,
        inconclusive,
        class,
    })
}

/// Formats a float so that it parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV table per probe: `x0..., r, Phi, bound, Psi_<label>..., density`.
pub fn profiles_csv(weiss: &WeissProfile, acf: &[(String, AcfProfile)], density: &DensityProfile) -> Result<String> {
    let d = weiss.x0.len();
    let n = weiss.radii.len();
    if density.radii != weiss.radii || acf.iter().any(|(_, a)| a.radii != weiss.radii) {
        return Err(Error::InvalidParameter(
            "profiles use different radius schedules".into(),
        ));
    }
    let mut out = String::new();
    let axes = ["x", "y", "z"];
    for a in axes.iter().take(d) {
        let _ = write!(out, "x0_{a},");
    }
    out.push_str("r,Phi,bound");
    for (label, _) in acf {
        let _ = write!(out, ",Psi_{label}");
    }
    out.push_str(",density\n");
    for m in 0..n {
        for c in &weiss.x0 {
            let _ = write!(out, "{},", fmt_f64(*c));
        }
        let _ = write!(
            out,
            "{},{},{}",
            fmt_f64(weiss.radii[m]),
            fmt_f64(weiss.phi[m]),
            fmt_f64(weiss.bound[m])
        );
        for (_, a) in acf {
            let _ = write!(out, ",{}", fmt_f64(a.psi[m]));
        }
        let _ = writeln!(out, ",{}", fmt_f64(density.density[m]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, VectorField};
    use crate::model::{AnalyticView, ModelSolution};
    use std::f64::consts::PI;

    const ALPHA: [f64; 2] = [0.6, 0.8];

    fn params() -> EnergyParams {
        EnergyParams::new(1.0).unwrap()
    }

    #[test]
    fn identity_rescaling() {
        let g = GridSpec::unit(2, 65).unwrap();
        let u = VectorField::from_fn(g, 1, |x, o| o[0] = (3.0 * x[0]).sin() + x[1]);
        let v = rescale(&u, &[0.0, 0.0], 1.0 - 2.0 * g.spacing()).unwrap();
        let w = rescale(&u, &[0.0, 0.0], 0.5).unwrap();
        let mut a = [0.0];
        let mut b = [0.0];
        w.eval(&[0.3, -0.7], &mut a, None).unwrap();
        u.eval(&[0.15, -0.35], &mut b, None).unwrap();
        assert!((a[0] - b[0] / 0.5).abs() < 1e-15);
        assert!((v.spacing() - g.spacing() / (1.0 - 2.0 * g.spacing())).abs() < 1e-15);
    }

    #[test]
    fn rescaling_composes() {
        let g = GridSpec::unit(2, 129).unwrap();
        let u = VectorField::from_fn(g, 2, |x, o| {
            o[0] = (2.0 * x[0]).sin() * x[1];
            o[1] = x[0] * x[0] - 0.3;
        });
        let (r, s) = (0.6, 0.4);
        let once = rescale(&u, &[0.0, 0.0], r * s).unwrap();
        let outer = rescale(&u, &[0.0, 0.0], r).unwrap();
        let twice = rescale(&outer, &[0.0, 0.0], s).unwrap();
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        for p in [[0.1, 0.2], [-0.9, 0.3], [0.5, -0.5], [0.0, 0.99]] {
            once.eval(&p, &mut a, None).unwrap();
            twice.eval(&p, &mut b, None).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaling_outside_the_cube_fails() {
        let g = GridSpec::unit(2, 65).unwrap();
        let u = VectorField::zeros(g, 1);
        assert!(rescale(&u, &[0.8, 0.0], 0.25).is_err());
    }

    #[test]
    fn weiss_energy_of_model_solutions() {
        let q = Quadrature::default_for(2);
        let lin = ModelSolution::rank_one(&ALPHA, &[1.0, 0.0]).unwrap();
        let half = ModelSolution::half_plane(&ALPHA, &[1.0, 0.0]).unwrap();
        let (lv, hv) = (lin.view(1e-3, 1.0), half.view(1e-3, 1.0));
        for r in [0.1, 0.25, 0.5] {
            let a = weiss_energy(&lv, &[0.0, 0.0], r, &params(), &q).unwrap();
            let b = weiss_energy(&hv, &[0.0, 0.0], r, &params(), &q).unwrap();
            assert!((a - PI).abs() < 1e-3 * PI, "{a}");
            assert!((b - PI / 2.0).abs() < 1e-3 * PI, "{b}");
        }
    }

    #[test]
    fn weiss_energy_of_zero_field_vanishes() {
        let g = GridSpec::unit(2, 65).unwrap();
        let u = VectorField::zeros(g, 2);
        let q = Quadrature::default_for(2);
        assert_eq!(weiss_energy(&u, &[0.0, 0.0], 0.25, &params(), &q).unwrap(), 0.0);
        assert_eq!(weiss_derivative_bound(&u, &[0.0, 0.0], 0.25, &q).unwrap(), 0.0);
    }

    #[test]
    fn small_radius_is_a_resolution_error() {
        let g = GridSpec::unit(2, 65).unwrap();
        let u = VectorField::zeros(g, 2);
        let q = Quadrature::default_for(2);
        let err = weiss_energy(&u, &[0.0, 0.0], 4.0 * g.spacing(), &params(), &q).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }));
    }

    #[test]
    fn derivative_bound_of_a_quadratic() {
        // x . grad(x1^2) - x1^2 = x1^2, and the circle integral of x1^4 is 3 pi / 4.
        let view = AnalyticView::new(
            2,
            2,
            1e-3,
            2.0,
            1.0,
            |x: &[f64], v: &mut [f64], j: Option<&mut [f64]>| {
                v[0] = x[0] * x[0];
                v[1] = 0.0;
                if let Some(j) = j {
                    j.copy_from_slice(&[2.0 * x[0], 0.0, 0.0, 0.0]);
                }
            },
        );
        let q = Quadrature::default_for(2);
        let b = weiss_derivative_bound(&view, &[0.0, 0.0], 1.0, &q).unwrap();
        assert!((b - 0.75 * PI).abs() < 1e-9, "{b}");
    }

    #[test]
    fn homogeneous_fields_have_zero_bound() {
        let q = Quadrature::default_for(2);
        let half = ModelSolution::half_plane(&ALPHA, &[0.6, 0.8]).unwrap();
        let b = weiss_derivative_bound(&half.view(1e-3, 1.0), &[0.0, 0.0], 0.5, &q).unwrap();
        assert!(b.abs() < 1e-20);
    }

    fn profile(phi: Vec<f64>) -> WeissProfile {
        let n = phi.len();
        WeissProfile {
            x0: vec![0.0, 0.0],
            radii: dyadic_schedule(0.25, 0.25 / (1 << (n - 1)) as f64),
            phi,
            bound: vec![0.0; n],
        }
    }

    #[test]
    fn constant_profile_has_no_violation() {
        assert!(weiss_monotonicity_check(&profile(vec![PI; 4]), 0.05)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn single_inversion_is_flagged_once() {
        let p = profile(vec![1.0, 0.9, 1.0, 0.8]);
        let v = weiss_monotonicity_check(&p, 0.05).unwrap();
        let inc: Vec<_> = v.iter().filter(|v| v.kind == ViolationKind::Increase).collect();
        assert_eq!(inc.len(), 1);
        assert_eq!(inc[0].index, 2);
    }

    #[test]
    fn bound_deficit_is_flagged() {
        let mut p = profile(vec![1.0, 1.0, 1.0]);
        p.bound = vec![1.0, 1.0, 1.0];
        let v = weiss_monotonicity_check(&p, 0.05).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|v| v.kind == ViolationKind::BoundDeficit));
    }

    #[test]
    fn short_profile_is_rejected() {
        assert!(weiss_monotonicity_check(&profile(vec![1.0, 1.0]), 0.05).is_err());
    }

    #[test]
    fn acf_of_rank_one_map() {
        let q = Quadrature::default_for(2);
        let lin = ModelSolution::rank_one(&ALPHA, &[1.0, 0.0]).unwrap();
        let view = lin.view(1e-3, 1.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for sigma in [[1.0, 0.0], [0.0, 1.0], [s, s]] {
            let ad: f64 = ALPHA[0] * sigma[0] + ALPHA[1] * sigma[1];
            let expect = ad.powi(4) * PI * PI / 4.0;
            for r in [0.125, 0.5] {
                let psi = acf_functional(&view, &sigma, &[0.0, 0.0], r, &q).unwrap();
                assert!((psi - expect).abs() < 1e-3 * expect, "{psi} vs {expect}");
            }
        }
        let psi = acf_functional(&view, &[0.8, -0.6], &[0.0, 0.0], 0.5, &q).unwrap();
        assert_eq!(psi, 0.0);
    }

    #[test]
    fn acf_in_three_dimensions() {
        // sigma . U = x1: each factor is int_{half ball} 1/|x| = pi r^2.
        let q = Quadrature::default_for(3);
        let lin = ModelSolution::rank_one(&[1.0], &[1.0, 0.0, 0.0]).unwrap();
        let view = lin.view(1.0 / 32.0, 1.0);
        let (p, m) = acf_factors(&view, &[1.0], &[0.0; 3], 0.5, &q).unwrap();
        let expect = PI * 0.25;
        assert!((p - expect).abs() < 2e-3 * expect, "{p}");
        assert!((m - expect).abs() < 2e-3 * expect, "{m}");
    }

    #[test]
    fn densities_of_model_solutions() {
        let g = GridSpec::unit(2, 129).unwrap();
        let q = Quadrature::default_for(2);
        let h = g.spacing();
        let half = ModelSolution::half_plane(&ALPHA, &[1.0, 0.0]).unwrap().sample(g);
        let lin = ModelSolution::rank_one(&ALPHA, &[1.0, 0.0]).unwrap().sample(g);
        for r in [0.125, 0.25] {
            let a = density(&half, &[0.0, 0.0], r, &params(), &q).unwrap();
            let b = density(&lin, &[0.0, 0.0], r, &params(), &q).unwrap();
            assert!((a - 0.5).abs() <= 3.0 * h / r, "{a}");
            assert!((b - 1.0).abs() <= 3.0 * h / r, "{b}");
            assert_eq!(density(&half, &[0.5, 0.0], r, &params(), &q).unwrap(), 1.0);
            assert_eq!(density(&half, &[-0.5, 0.0], r, &params(), &q).unwrap(), 0.0);
        }
    }

    #[test]
    fn classification_of_model_solutions() {
        let g = GridSpec::unit(2, 257).unwrap();
        let q = Quadrature::default_for(2);
        let half = ModelSolution::half_plane(&ALPHA, &[1.0, 0.0]).unwrap().sample(g);
        let lin = ModelSolution::rank_one(&ALPHA, &[1.0, 0.0]).unwrap().sample(g);
        let sched = default_schedule(&half, DEFAULT_R0);
        assert_eq!(sched.len(), 3);
        let a = classify_point(&half, &[0.0, 0.1], &sched, 0.1, &params(), &q).unwrap();
        assert_eq!(a.class, Some(PointClass::Regular));
        assert!((a.energy_density - PI / 2.0).abs() < 0.05 * PI / 2.0);
        assert!(a.energy_density_gap() <= 0.05);
        let b = classify_point(&lin, &[0.0, -0.1], &sched, 0.1, &params(), &q).unwrap();
        assert_eq!(b.class, Some(PointClass::TwoPhaseSingular));
        assert!((b.energy_density - PI).abs() < 0.05 * PI);
        let c = classify_point(&lin, &[0.3, 0.0], &sched, 0.1, &params(), &q).unwrap();
        assert!(!c.on_free_boundary);
        assert_eq!(c.class, None);
        assert_eq!(c.limit, 1.0);
    }

    #[test]
    fn class_thresholds() {
        assert_eq!(PointClass::from_density(0.55, 0.1), Some(PointClass::Regular));
        assert_eq!(PointClass::from_density(0.75, 0.1), Some(PointClass::OnePhaseSingular));
        assert_eq!(PointClass::from_density(0.95, 0.1), Some(PointClass::TwoPhaseSingular));
        assert_eq!(PointClass::from_density(0.2, 0.1), None);
    }

    #[test]
    fn csv_round_trips_floats() {
        let w = profile(vec![PI, 1.0 / 3.0, 2.0f64.sqrt()]);
        let dens = DensityProfile {
            x0: w.x0.clone(),
            radii: w.radii.clone(),
            density: vec![0.5, 0.5, 0.5],
            limit: 0.5,
            energy_density: PI / 2.0,
            energy_density_normalized: 0.5,
            on_free_boundary: true,
            inconclusive: false,
            class: Some(PointClass::Regular),
        };
        let acf = vec![(
            "e1".to_string(),
            AcfProfile {
                sigma: vec![1.0, 0.0],
                radii: w.radii.clone(),
                psi: vec![0.1, 0.2, 0.3],
            },
        )];
        let csv = profiles_csv(&w, &acf, &dens).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "x0_x,x0_y,r,Phi,bound,Psi_e1,density");
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row[3].to_bits(), (1.0f64 / 3.0).to_bits());
    }
}

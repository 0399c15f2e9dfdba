//! The solve, analyze, beta and probe runs. Each writes its outputs plus a
//! manifest into the run directory; the manifest is written on failure too.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vecbern::blowup::{blowup_trace, probe_sigmas, stratum_membership, stratum_schedule, BlowupTrace};
use vecbern::energy::{total_energy, EnergyParams, NodeRegion};
use vecbern::field_io::{payload_path, read_field, write_field};
use vecbern::grid::{BallWindow, FieldView, VectorField};
use vecbern::minimizer::minimize;
use vecbern::monotonicity::{
    acf_profile, classify_point, classify_with_weiss, dyadic_schedule, fmt_f64, increase_violations, profiles_csv,
    weiss_energy, weiss_monotonicity_check, weiss_profile, AcfProfile, DensityProfile, PointClass, Violation,
    WeissProfile, RESOLUTION_FLOOR_CELLS,
};
use vecbern::quadrature::Quadrature;
use vecbern::stratification::{
    beta_csv, beta_estimate_with, beta_number, splitting_probe, Alternative, BetaResult, EstimateReport, PointMeasure,
    SplittingProbeConfig, SplittingReport,
};

use crate::manifest::{ManifestWriter, RunManifest};
use crate::scenario::{AnalysisPlan, Scenario};
use crate::{HarnessError, Result};

/// Settings shared by every run.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out: PathBuf,
    pub timings: bool,
}

/// Runs `body` and writes the manifest whatever the outcome.
pub fn guarded<T>(
    mut w: ManifestWriter,
    body: impl FnOnce(&mut ManifestWriter) -> Result<T>,
) -> Result<(T, RunManifest)> {
    let start = Instant::now();
    let res = body(&mut w);
    w.time("total", start.elapsed().as_secs_f64());
    match res {
        Ok(v) => Ok((v, w.finish()?)),
        Err(e) => {
            w.error(e.to_string());
            w.fail();
            w.finish()?;
            Err(e)
        }
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn load_matching_field(scn: &Scenario, path: &Path) -> Result<VectorField> {
    let u = read_field(path)?;
    if *u.grid() != scn.grid()? || u.k() != scn.problem.k {
        return Err(HarnessError::Scenario(format!(
            "field {} does not match the scenario grid and k",
            path.display()
        )));
    }
    Ok(u)
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub name: String,
    pub converged: bool,
    pub iterations: usize,
    pub accepted_flips: usize,
    /// `J` on the whole cube, grid discretization.
    pub energy: f64,
    pub energy_trace: Vec<f64>,
    pub phase_nodes: usize,
    pub warnings: Vec<String>,
    /// `J(U; B_1)` on the nodes of the unit ball.
    pub energy_unit_ball: f64,
    /// Relative `L^2(B_{1/2})` distance to the model solution.
    pub exact_rel_l2_half_ball: Option<f64>,
    pub exact_energy_unit_ball: Option<f64>,
}

pub struct SolveOutcome {
    pub record: SolveRecord,
    pub field: VectorField,
    pub manifest: RunManifest,
}

pub fn run_solve(scn: &Scenario, ctx: &RunContext) -> Result<SolveOutcome> {
    let w = ManifestWriter::new(&ctx.out, "solve", Some(scn), ctx.timings);
    let ((record, field), manifest) = guarded(w, |w| {
        let warnings = scn.validate()?;
        let bd = scn.boundary_data()?;
        let params = scn.params()?;
        let t = Instant::now();
        let res = minimize(&bd, &params, &scn.solver)?;
        w.time("minimize", t.elapsed().as_secs_f64());
        let u = res.field;
        let header = w.dir().join("field.json");
        std::fs::create_dir_all(w.dir()).map_err(crate::io_err(w.dir()))?;
        write_field(&u, &header)?;
        w.record("field.json")?;
        w.record(payload_path(Path::new("field.json")).to_str().expect("utf-8 name"))?;

        let q = Quadrature::default_for(u.grid().dim());
        let d = u.grid().dim();
        let origin = vec![0.0; d];
        let disk = NodeRegion::ball(u.grid(), &origin, 1.0);
        let energy_unit_ball = total_energy(&u, &disk, &params);
        let (mut rel, mut exact_e) = (None, None);
        if let Some(model) = scn.model()? {
            let half = BallWindow::new(&u, &origin, 0.5)?;
            let k = u.k();
            let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
            let num = q.try_ball_integral(&half, |x| {
                u.eval(x, &mut a, None)?;
                model.eval(x, &mut b);
                Ok(a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum())
            })?;
            let den = q.try_ball_integral(&half, |x| {
                model.eval(x, &mut b);
                Ok(b.iter().map(|p| p * p).sum())
            })?;
            rel = (den > 0.0).then(|| (num / den).sqrt());
            exact_e = Some(total_energy(&model.sample(*u.grid()), &disk, &params));
        }
        let record = SolveRecord {
            name: scn.name.clone(),
            converged: res.converged,
            iterations: res.iterations,
            accepted_flips: res.accepted_flips,
            energy: total_energy(&u, &NodeRegion::all(u.grid()), &params),
            energy_trace: res.energy_trace,
            phase_nodes: res.phase.count(),
            warnings,
            energy_unit_ball,
            exact_rel_l2_half_ball: rel,
            exact_energy_unit_ball: exact_e,
        };
        w.write_json("solve.json", &record)?;
        if !record.converged {
            return Err(HarnessError::Scenario(format!(
                "solver stopped after {} outer iterations without converging",
                record.iterations
            )));
        }
        Ok((record, u))
    })?;
    Ok(SolveOutcome {
        record,
        field,
        manifest,
    })
}

// ---------------------------------------------------------------- analyze

/// Free-boundary nodes: out-of-phase interior nodes with an in-phase axis
/// neighbour, kept when `B_room` fits around them, thinned by a fixed stride
/// to at most `max` points.
pub fn detect_probes(u: &VectorField, params: &EnergyParams, room: f64, max: usize) -> Vec<Vec<f64>> {
    let g = u.grid();
    let d = g.dim();
    let tau = params.threshold(u);
    let nodes: Vec<usize> = (0..g.node_count())
        .filter(|&i| {
            !g.is_boundary_node(i)
                && u.norm(i) <= tau
                && g.neighbors(i).iter().any(|&m| u.norm(m) > tau)
                && g.check_window(&g.node_point(i)[..d], room).is_ok()
        })
        .collect();
    let stride = nodes.len().div_ceil(max.max(1)).max(1);
    nodes
        .iter()
        .step_by(stride)
        .map(|&i| g.node_point(i)[..d].to_vec())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfRecord {
    pub label: String,
    pub profile: AcfProfile,
    /// Value at the smallest radius.
    pub limit: f64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupSummary {
    pub radii: Vec<f64>,
    /// Worst relative variation of `|A_r^t sigma|`.
    pub consistency: Option<f64>,
    pub ranks: Vec<usize>,
    pub rank_constant: bool,
    /// Fitted matrix at the smallest radius, row-major `k x d`.
    pub a: Vec<f64>,
    /// `|A|_F^2 / Lambda` at the smallest radius.
    pub frobenius_sq_over_lambda: f64,
    pub offset_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumLabel {
    pub eps: f64,
    /// Smallest `j` with the point in `S^j_eps`.
    pub j: Option<usize>,
    /// `d - rank` of the blow-up at the smallest radius (two-phase points
    /// only).
    pub rank_j: Option<usize>,
    pub consistent: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub index: usize,
    pub x0: Vec<f64>,
    pub errors: Vec<String>,
    pub weiss: Option<WeissProfile>,
    pub weiss_violations: Vec<Violation>,
    pub acf: Vec<AcfRecord>,
    pub density: Option<DensityProfile>,
    pub class: Option<PointClass>,
    pub energy_density_gap: Option<f64>,
    pub blowup: Option<BlowupSummary>,
    pub strata: Vec<StratumLabel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub probes: usize,
    pub probes_with_errors: usize,
    pub classes: BTreeMap<String, usize>,
    pub weiss_violations: usize,
    pub acf_violations: usize,
    pub max_energy_density_gap: Option<f64>,
    pub max_two_phase_consistency: Option<f64>,
    pub strata_inconsistent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub name: String,
    pub spacing: f64,
    pub radii: Vec<f64>,
    pub blowup_radii: Vec<f64>,
    pub acf_sigmas: Vec<Vec<f64>>,
    pub blowup_sigmas: Vec<Vec<f64>>,
    pub probes: Vec<ProbeRecord>,
    pub summary: AnalysisSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub spacing: f64,
    pub points: Vec<Vec<f64>>,
}

struct ProbeCtx<'a> {
    plan: &'a AnalysisPlan,
    params: EnergyParams,
    q: Quadrature,
    radii: Vec<f64>,
    blowup_radii: Vec<f64>,
    acf_sigmas: Vec<Vec<f64>>,
    blowup_sigmas: Vec<Vec<f64>>,
}

fn acf_label(i: usize) -> String {
    format!("s{i}")
}

fn analyze_probe(
    u: &VectorField,
    index: usize,
    x0: &[f64],
    c: &ProbeCtx,
) -> (ProbeRecord, Option<String>, Option<BlowupTrace>) {
    let d = u.grid().dim();
    let mut rec = ProbeRecord {
        index,
        x0: x0.to_vec(),
        errors: Vec::new(),
        weiss: None,
        weiss_violations: Vec::new(),
        acf: Vec::new(),
        density: None,
        class: None,
        energy_density_gap: None,
        blowup: None,
        strata: Vec::new(),
    };
    let note = |rec: &mut ProbeRecord, stage: &str, e: vecbern::Error| {
        let m = format!("probe {index} {stage}: {e}");
        log::warn!("{m}");
        rec.errors.push(m);
    };

    match weiss_profile(u, x0, &c.radii, &c.params, &c.q) {
        Ok(p) => {
            match weiss_monotonicity_check(&p, c.plan.delta) {
                Ok(v) => rec.weiss_violations = v,
                Err(e) => note(&mut rec, "weiss check", e),
            }
            rec.weiss = Some(p);
        }
        Err(e) => note(&mut rec, "weiss", e),
    }
    for (i, s) in c.acf_sigmas.iter().enumerate() {
        match acf_profile(u, s, x0, &c.radii, &c.q) {
            Ok(p) => rec.acf.push(AcfRecord {
                label: acf_label(i),
                limit: *p.psi.last().expect("non-empty schedule"),
                violations: increase_violations(&p.psi, c.plan.delta),
                profile: p,
            }),
            Err(e) => note(&mut rec, "acf", e),
        }
    }
    let dens = match &rec.weiss {
        Some(w) => classify_with_weiss(u, x0, &c.radii, &w.phi, c.plan.tau_class, &c.params, &c.q),
        None => classify_point(u, x0, &c.radii, c.plan.tau_class, &c.params, &c.q),
    };
    match dens {
        Ok(p) => {
            rec.class = p.class;
            rec.energy_density_gap = p.class.map(|_| p.energy_density_gap());
            rec.density = Some(p);
        }
        Err(e) => note(&mut rec, "density", e),
    }

    let mut trace_out = None;
    let mut rank_j = None;
    if !c.blowup_radii.is_empty() {
        match blowup_trace(u, x0, &c.blowup_radii, &c.blowup_sigmas, &c.q) {
            Ok(t) => {
                let ranks = t.ranks(c.plan.tol_rank);
                let last = t.fits.last().expect("non-empty trace");
                if rec.class == Some(PointClass::TwoPhaseSingular) {
                    rank_j = Some(d - ranks.last().copied().unwrap_or(0).min(d));
                }
                let frob: f64 = last.a.iter().map(|a| a * a).sum();
                rec.blowup = Some(BlowupSummary {
                    radii: t.radii.clone(),
                    consistency: t.consistency(c.plan.consistency_floor).ok(),
                    rank_constant: ranks.windows(2).all(|p| p[0] == p[1]),
                    ranks,
                    a: last.a.clone(),
                    frobenius_sq_over_lambda: frob / c.params.lambda,
                    offset_flagged: t.fits.iter().any(|f| f.offset_flagged),
                });
                trace_out = Some(t);
            }
            Err(e) => note(&mut rec, "blowup", e),
        }
    }

    let on_fb = rec.density.as_ref().is_some_and(|p| p.on_free_boundary);
    if on_fb {
        let schedule = stratum_schedule(u, x0);
        for &eps in &c.plan.eps {
            let mut label = StratumLabel {
                eps,
                j: None,
                rank_j,
                consistent: None,
            };
            for j in 0..=d {
                match stratum_membership(u, x0, eps, j, &schedule, c.params.tau_rel, &c.q) {
                    Ok(r) if r.member => {
                        label.j = Some(j);
                        break;
                    }
                    Ok(_) => {}
                    Err(e) => {
                        note(&mut rec, "stratum", e);
                        break;
                    }
                }
            }
            if let (Some(a), Some(b)) = (label.j, rank_j) {
                label.consistent = Some(a == b);
            }
            rec.strata.push(label);
        }
    }

    let profiles = match (&rec.weiss, &rec.density) {
        (Some(w), Some(p)) if rec.acf.len() == c.acf_sigmas.len() => {
            let acf: Vec<(String, AcfProfile)> = rec.acf.iter().map(|a| (a.label.clone(), a.profile.clone())).collect();
            profiles_csv(w, &acf, p).ok()
        }
        _ => None,
    };
    (rec, profiles, trace_out)
}

fn summarize(probes: &[ProbeRecord]) -> AnalysisSummary {
    let mut s = AnalysisSummary {
        probes: probes.len(),
        ..Default::default()
    };
    for p in probes {
        s.probes_with_errors += usize::from(!p.errors.is_empty());
        let label = p.class.map_or("none", |c| c.label());
        *s.classes.entry(label.into()).or_default() += 1;
        s.weiss_violations += p.weiss_violations.len();
        s.acf_violations += p.acf.iter().map(|a| a.violations.len()).sum::<usize>();
        if let Some(g) = p.energy_density_gap {
            s.max_energy_density_gap = Some(s.max_energy_density_gap.map_or(g, |m: f64| m.max(g)));
        }
        if p.class == Some(PointClass::TwoPhaseSingular) {
            if let Some(c) = p.blowup.as_ref().and_then(|b| b.consistency) {
                s.max_two_phase_consistency = Some(s.max_two_phase_consistency.map_or(c, |m: f64| m.max(c)));
            }
        }
        s.strata_inconsistent += p.strata.iter().filter(|l| l.consistent == Some(false)).count();
    }
    s
}

fn probes_csv(d: usize, probes: &[ProbeRecord]) -> String {
    let mut out = String::new();
    for a in ["x", "y", "z"].iter().take(d) {
        let _ = write!(out, "{a},");
    }
    out.push_str(
        "index,on_free_boundary,class,density,phi0,phi0_normalized,gap,weiss_violations,acf_violations,consistency,rank,stratum_j,errors\n",
    );
    for p in probes {
        for c in &p.x0 {
            let _ = write!(out, "{},", fmt_f64(*c));
        }
        let dens = p.density.as_ref();
        let rank = p.blowup.as_ref().and_then(|b| b.ranks.last().copied());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.index,
            dens.is_some_and(|x| x.on_free_boundary),
            p.class.map_or("", |c| c.label()),
            opt_f64(dens.map(|x| x.limit)),
            opt_f64(dens.map(|x| x.energy_density)),
            opt_f64(dens.map(|x| x.energy_density_normalized)),
            opt_f64(p.energy_density_gap),
            p.weiss_violations.len(),
            p.acf.iter().map(|a| a.violations.len()).sum::<usize>(),
            opt_f64(p.blowup.as_ref().and_then(|b| b.consistency)),
            rank.map(|r| r.to_string()).unwrap_or_default(),
            p.strata
                .first()
                .and_then(|s| s.j)
                .map(|j| j.to_string())
                .unwrap_or_default(),
            p.errors.len(),
        );
    }
    out
}

pub fn run_analyze(scn: &Scenario, field: &Path, ctx: &RunContext) -> Result<(AnalysisOutput, RunManifest)> {
    let w = ManifestWriter::new(&ctx.out, "analyze", Some(scn), ctx.timings);
    guarded(w, |w| {
        scn.validate()?;
        w.input(field)?;
        let u = load_matching_field(scn, field)?;
        let plan = &scn.analysis;
        let params = scn.params()?;
        let d = u.grid().dim();
        let h = u.grid().spacing();
        let floor = RESOLUTION_FLOOR_CELLS * h;
        let radii = dyadic_schedule(plan.r0, floor);
        let blowup_radii: Vec<f64> = dyadic_schedule(plan.blowup_r0, floor)
            .into_iter()
            .take(plan.blowup_radii)
            .collect();
        if radii.is_empty() {
            return Err(HarnessError::Scenario(format!(
                "r0 = {} is below the resolution floor {floor}",
                plan.r0
            )));
        }
        let probes = match &plan.probes {
            Some(p) => {
                if p.iter().any(|x| x.len() != d) {
                    return Err(HarnessError::Scenario(format!(
                        "probe points must have {d} coordinates"
                    )));
                }
                p.clone()
            }
            None => detect_probes(&u, &params, plan.r0.max(plan.blowup_r0), plan.max_probes),
        };
        log::info!("{}: analyzing {} probes", scn.name, probes.len());
        let c = ProbeCtx {
            plan,
            params,
            q: Quadrature::default_for(d),
            radii: radii.clone(),
            blowup_radii: blowup_radii.clone(),
            acf_sigmas: scn.acf_sigmas(),
            blowup_sigmas: probe_sigmas(scn.problem.k, plan.extra_sigmas, scn.seed),
        };
        let t = Instant::now();
        let results: Vec<_> = probes
            .par_iter()
            .enumerate()
            .map(|(i, x)| analyze_probe(&u, i, x, &c))
            .collect();
        w.time("probes", t.elapsed().as_secs_f64());

        let mut records = Vec::with_capacity(results.len());
        for (rec, profiles, trace) in results {
            if let Some(text) = profiles {
                w.write(&format!("profiles/probe_{:03}.csv", rec.index), text.as_bytes())?;
            }
            if let Some(t) = trace {
                w.write(&format!("blowup/probe_{:03}.csv", rec.index), t.to_csv().as_bytes())?;
            }
            records.push(rec);
        }
        let detections = Detections {
            spacing: h,
            points: records
                .iter()
                .filter(|r| r.class == Some(PointClass::TwoPhaseSingular))
                .map(|r| r.x0.clone())
                .collect(),
        };
        w.write_json("detections.json", &detections)?;
        w.write("probes.csv", probes_csv(d, &records).as_bytes())?;
        let output = AnalysisOutput {
            name: scn.name.clone(),
            spacing: h,
            radii,
            blowup_radii,
            acf_sigmas: c.acf_sigmas.clone(),
            blowup_sigmas: c.blowup_sigmas.clone(),
            summary: summarize(&records),
            probes: records,
        };
        w.write_json("analysis.json", &output)?;
        for r in &output.probes {
            for e in &r.errors {
                w.error(e.clone());
            }
        }
        Ok(output)
    })
}

// ---------------------------------------------------------------- beta

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub center: usize,
    pub x: Vec<f64>,
    pub r: f64,
    pub j: usize,
    pub report: Option<EstimateReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSummary {
    pub centers: usize,
    pub radii: Vec<f64>,
    pub dims: Vec<usize>,
    /// `max beta r / h` over all centers, radii and dimensions.
    pub max_beta_r_over_h: Option<f64>,
    pub beta_failures: usize,
    pub estimates_evaluated: usize,
    pub estimates_failed: usize,
    pub all_constants_finite: bool,
    pub max_implied_constant: Option<f64>,
    /// Largest ratio of implied constants across the estimate radii at a
    /// single center.
    pub max_constant_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaOutput {
    pub summary: BetaSummary,
    pub estimates: Vec<EstimateRecord>,
}

type PhiKey = (Vec<u64>, u64);

pub fn run_beta(
    scn: &Scenario,
    detections: &Path,
    field: Option<&Path>,
    ctx: &RunContext,
) -> Result<(BetaOutput, RunManifest)> {
    let w = ManifestWriter::new(&ctx.out, "beta", Some(scn), ctx.timings);
    guarded(w, |w| {
        scn.validate()?;
        w.input(detections)?;
        let text = std::fs::read_to_string(detections).map_err(crate::io_err(detections))?;
        let det: Detections = serde_json::from_str(&text)?;
        let d = scn.domain.d;
        if det.points.iter().any(|p| p.len() != d) {
            return Err(HarnessError::Scenario(format!("detections must have {d} coordinates")));
        }
        let h = scn.grid()?.spacing();
        let plan = &scn.analysis;
        let radii = dyadic_schedule(plan.beta_r0, RESOLUTION_FLOOR_CELLS * h);
        let dims = scn.beta_dims();

        let mut summary = BetaSummary {
            centers: det.points.len(),
            radii: radii.clone(),
            dims: dims.clone(),
            max_beta_r_over_h: None,
            beta_failures: 0,
            estimates_evaluated: 0,
            estimates_failed: 0,
            all_constants_finite: true,
            max_implied_constant: None,
            max_constant_ratio: None,
        };
        if det.points.is_empty() {
            w.write("beta.csv", b"")?;
            let out = BetaOutput {
                summary,
                estimates: Vec::new(),
            };
            w.write_json("estimate.json", &out)?;
            return Ok(out);
        }
        let mu = PointMeasure::counting(det.points.clone())?;

        let mut centers = Vec::new();
        let mut results: Vec<BetaResult> = Vec::new();
        let t = Instant::now();
        let rows: Vec<Vec<std::result::Result<BetaResult, String>>> = det
            .points
            .par_iter()
            .map(|x| {
                let mut row = Vec::new();
                for &r in &radii {
                    for &j in &dims {
                        row.push(beta_number(&mu, x, r, j).map_err(|e| e.to_string()));
                    }
                }
                row
            })
            .collect();
        for (x, row) in det.points.iter().zip(rows) {
            for res in row {
                match res {
                    Ok(b) => {
                        let v = b.beta * b.r / h;
                        summary.max_beta_r_over_h = Some(summary.max_beta_r_over_h.map_or(v, |m: f64| m.max(v)));
                        centers.push(x.clone());
                        results.push(b);
                    }
                    Err(e) => {
                        summary.beta_failures += 1;
                        w.error(format!("beta at {x:?}: {e}"));
                    }
                }
            }
        }
        w.write("beta.csv", beta_csv(&centers, &results).as_bytes())?;
        w.time("beta", t.elapsed().as_secs_f64());

        let mut estimates = Vec::new();
        if let Some(fp) = field {
            w.input(fp)?;
            let u = load_matching_field(scn, fp)?;
            let params = scn.params()?;
            let q = Quadrature::default_for(d);
            let cache: Mutex<HashMap<PhiKey, std::result::Result<f64, String>>> = Mutex::new(HashMap::new());
            let phi = |y: &[f64], s: f64| -> vecbern::Result<f64> {
                let key = (y.iter().map(|c| c.to_bits()).collect(), s.to_bits());
                if let Some(v) = cache.lock().expect("cache lock").get(&key) {
                    return v.clone().map_err(vecbern::Error::InvalidParameter);
                }
                let v = weiss_energy(&u, y, s, &params, &q).map_err(|e| e.to_string());
                cache.lock().expect("cache lock").insert(key, v.clone());
                v.map_err(vecbern::Error::InvalidParameter)
            };
            let t = Instant::now();
            let rows: Vec<Vec<EstimateRecord>> = det
                .points
                .par_iter()
                .enumerate()
                .map(|(ci, x)| {
                    let mut row = Vec::new();
                    for &r in &plan.estimate_radii {
                        for &j in &dims {
                            let res = beta_estimate_with(&u, &mu, x, r, j, plan.estimate_delta, phi);
                            let (report, error) = match res {
                                Ok(rep) => (Some(rep), None),
                                Err(e) => (None, Some(e.to_string())),
                            };
                            row.push(EstimateRecord {
                                center: ci,
                                x: x.clone(),
                                r,
                                j,
                                report,
                                error,
                            });
                        }
                    }
                    row
                })
                .collect();
            w.time("estimate", t.elapsed().as_secs_f64());
            for row in rows {
                let mut per_j: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for e in &row {
                    match &e.report {
                        Some(rep) => {
                            summary.estimates_evaluated += 1;
                            match rep.implied_constant {
                                Some(c) => {
                                    summary.max_implied_constant =
                                        Some(summary.max_implied_constant.map_or(c, |m: f64| m.max(c)));
                                    per_j.entry(e.j).or_default().push(c);
                                }
                                None => summary.all_constants_finite = false,
                            }
                        }
                        None => {
                            summary.estimates_failed += 1;
                            summary.all_constants_finite = false;
                            w.error(format!(
                                "estimate at {:?}, r = {}: {}",
                                e.x,
                                e.r,
                                e.error.as_deref().unwrap_or("")
                            ));
                        }
                    }
                }
                for cs in per_j.values().filter(|cs| cs.len() > 1) {
                    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = cs.iter().copied().fold(0.0, f64::max);
                    if lo > 0.0 {
                        let ratio = hi / lo;
                        summary.max_constant_ratio =
                            Some(summary.max_constant_ratio.map_or(ratio, |m: f64| m.max(ratio)));
                    }
                }
                estimates.extend(row);
            }
        }
        let out = BetaOutput { summary, estimates };
        w.write_json("estimate.json", &out)?;
        Ok(out)
    })
}

// ---------------------------------------------------------------- probe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutput {
    pub r: f64,
    pub config: SplittingProbeConfig,
    pub counts: BTreeMap<String, usize>,
    pub reports: Vec<SplittingReport>,
}

pub fn run_probe(
    scn: &Scenario,
    field: &Path,
    plan: &crate::scenario::ProbePlan,
    ctx: &RunContext,
) -> Result<(ProbeOutput, RunManifest)> {
    let w = ManifestWriter::new(&ctx.out, "probe", Some(scn), ctx.timings);
    guarded(w, |w| {
        scn.validate()?;
        plan.config.validate()?;
        w.input(field)?;
        let u = load_matching_field(scn, field)?;
        let d = u.grid().dim();
        let params = scn.params()?;
        let q = Quadrature::default_for(d);
        let centers = if plan.centers.is_empty() {
            vec![vec![0.0; d]]
        } else {
            plan.centers.clone()
        };
        if centers.iter().any(|x| x.len() != d) {
            return Err(HarnessError::Scenario(format!(
                "probe centers must have {d} coordinates"
            )));
        }
        let t = Instant::now();
        let results: Vec<vecbern::Result<SplittingReport>> = centers
            .par_iter()
            .map(|x| splitting_probe(&u, x, plan.r, &plan.config, &params, &q))
            .collect();
        w.time("probe", t.elapsed().as_secs_f64());
        let mut reports = Vec::new();
        let mut counts = BTreeMap::new();
        for (x, res) in centers.iter().zip(results) {
            let rep = res.unwrap_or_else(|e| {
                w.error(format!("probe at {x:?}: {e}"));
                SplittingReport {
                    x: x.clone(),
                    r: plan.r,
                    alternative: Alternative::Skipped,
                    skip_reason: Some(e.to_string()),
                    sup_energy: None,
                    energy: None,
                    pinched_count: 0,
                    spread_points: Vec::new(),
                    tube_distance: None,
                    concentrated: false,
                    stratum_count: 0,
                    pinched_holds: false,
                    witnesses: Vec::new(),
                }
            });
            *counts.entry(rep.alternative.label().to_string()).or_default() += 1;
            reports.push(rep);
        }
        let out = ProbeOutput {
            r: plan.r,
            config: plan.config,
            counts,
            reports,
        };
        w.write_json("probe.json", &out)?;
        Ok(out)
    })
}

//! End-to-end acceptance suite. Every test prints one `PASS`/`FAIL` line to
//! the real stdout (bypassing capture) and then asserts its verdict.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vecbern::energy::ball_energy;
use vecbern::field_io::read_field;
use vecbern::grid::{BallWindow, FieldView, VectorField};
use vecbern::monotonicity::{acf_functional, rescale, PointClass, ViolationKind, RESOLUTION_FLOOR_CELLS};
use vecbern::quadrature::Quadrature;
use vecbern::stratification::Alternative;
use vecbern_harness::oracle::{run_oracle, ORACLE_CLOUDS, ORACLE_TOL};
use vecbern_harness::pipeline::{
    run_analyze, run_beta, run_solve, AnalysisOutput, BetaOutput, ProbeOutput, RunContext,
};
use vecbern_harness::scenario::{direction, Boundary, Scenario};
use vecbern_harness::selftest::{run_selftest, ToleranceProfile};

const SUITE: [&str; 4] = ["hyperplane", "half_plane", "rank2", "smoke_3d"];

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("acceptance {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
        .install(f)
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ------------------------------------------------------------------ suite runs

struct Suite {
    _root: tempfile::TempDir,
    a: PathBuf,
    b: PathBuf,
    statuses: Vec<(String, bool, bool)>,
}

fn run_suite(out: &Path, extra: &[&str]) -> Vec<(String, bool)> {
    SUITE
        .iter()
        .map(|name| {
            let status = Command::new(env!("CARGO_BIN_EXE_vecbern"))
                .arg("run")
                .arg(scenario_path(name))
                .arg("--out")
                .arg(out.join(name))
                .args(extra)
                .output()
                .expect("spawn vecbern");
            (name.to_string(), status.status.success())
        })
        .collect()
}

fn suite() -> &'static Suite {
    static SUITE_RUNS: OnceLock<Suite> = OnceLock::new();
    SUITE_RUNS.get_or_init(|| {
        let root = tempfile::tempdir().expect("tempdir");
        let a = root.path().join("a");
        let b = root.path().join("b");
        let ra = run_suite(&a, &[]);
        let rb = run_suite(&b, &["--threads", "1"]);
        let statuses = ra.into_iter().zip(rb).map(|((n, x), (_, y))| (n, x, y)).collect();
        Suite {
            _root: root,
            a,
            b,
            statuses,
        }
    })
}

struct RunView {
    scn: Scenario,
    dir: PathBuf,
    analysis: AnalysisOutput,
}

impl RunView {
    fn load(name: &str) -> Self {
        let dir = suite().a.join(name);
        let scn = Scenario::load(&scenario_path(name)).expect("scenario");
        let analysis = read(&dir.join("analysis.json"));
        Self { scn, dir, analysis }
    }

    fn field(&self) -> VectorField {
        read_field(&self.dir.join("field.json")).expect("field")
    }

    fn h(&self) -> f64 {
        self.analysis.spacing
    }
}

fn rank1_alpha_nu(scn: &Scenario) -> (Vec<f64>, Vec<f64>) {
    match &scn.boundary {
        Boundary::LinearRank1 { alpha, nu_angles } | Boundary::HalfPlane { alpha, nu_angles } => {
            (alpha.clone(), direction(scn.domain.d, nu_angles).expect("direction"))
        }
        _ => panic!("{} is not a rank-one scenario", scn.name),
    }
}

// ------------------------------------------------------------------ criteria

#[test]
fn exact_solution_recovery() {
    let root = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["half_plane", "hyperplane"] {
        let mut scn = Scenario::load(&scenario_path(name)).unwrap();
        scn.domain.n = 129;
        let ctx = RunContext {
            out: root.path().join(name),
            timings: false,
        };
        let t = Instant::now();
        let res = single_threaded(|| run_solve(&scn, &ctx));
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(o) => {
                let err = o.record.exact_rel_l2_half_ball.unwrap_or(f64::INFINITY);
                ok &= err <= 0.02 && secs <= 60.0;
                parts.push(format!("{name} rel L2 {err:.3e} in {secs:.1} s"));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name} failed: {e}"));
            }
        }
    }
    verdict("exact_solution_recovery", ok, parts.join("; "));
}

#[test]
fn weiss_monotonicity() {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["half_plane", "hyperplane"] {
        let v = RunView::load(name);
        let floor = RESOLUTION_FLOOR_CELLS * v.h();
        let radii = &v.analysis.radii;
        let in_range = radii.iter().all(|&r| r >= floor * (1.0 - 1e-12) && r <= 0.25 + 1e-12) && radii.len() >= 3;
        let profiled = v.analysis.probes.iter().filter(|p| p.weiss.is_some()).count();
        let count = |k: ViolationKind| -> usize {
            v.analysis
                .probes
                .iter()
                .flat_map(|p| &p.weiss_violations)
                .filter(|x| x.kind == k)
                .count()
        };
        let (inc, bound) = (count(ViolationKind::Increase), count(ViolationKind::BoundDeficit));
        let errors = v.analysis.probes.iter().filter(|p| !p.errors.is_empty()).count();
        ok &=
            in_range && profiled >= 20 && profiled == v.analysis.probes.len() && inc == 0 && bound == 0 && errors == 0;
        parts.push(format!(
            "{name}: {profiled} probes, {} radii, {inc} increases, {bound} bound deficits, {errors} probes with errors",
            radii.len()
        ));
    }
    verdict("weiss_monotonicity", ok, parts.join("; "));
}

#[test]
fn energy_density_consistency() {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["hyperplane", "half_plane", "rank2"] {
        let v = RunView::load(name);
        assert_eq!(v.scn.problem.lambda, 1.0);
        let mut classified = 0;
        let mut worst_gap: f64 = 0.0;
        let mut worst_target: f64 = 0.0;
        for p in &v.analysis.probes {
            let (Some(class), Some(dens)) = (p.class, &p.density) else {
                continue;
            };
            classified += 1;
            worst_gap = worst_gap.max(dens.energy_density_gap());
            let target = match class {
                PointClass::TwoPhaseSingular => Some(std::f64::consts::PI),
                PointClass::Regular => Some(std::f64::consts::FRAC_PI_2),
                _ => None,
            };
            if let Some(t) = target {
                worst_target = worst_target.max((dens.energy_density - t).abs() / t);
            } else {
                ok = false;
            }
        }
        ok &= classified > 0 && worst_gap <= 0.05 && worst_target <= 0.05;
        parts.push(format!(
            "{name}: {classified} classified, max gap {worst_gap:.2e}, max closed-form error {worst_target:.2e}"
        ));
    }
    verdict("energy_density_consistency", ok, parts.join("; "));
}

#[test]
fn acf_monotonicity_and_limit() {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["hyperplane", "half_plane", "rank2"] {
        let v = RunView::load(name);
        let violations: usize = v
            .analysis
            .probes
            .iter()
            .flat_map(|p| &p.acf)
            .map(|a| a.violations.len())
            .sum();
        let profiled = v.analysis.probes.iter().filter(|p| !p.acf.is_empty()).count();
        ok &= violations == 0 && profiled > 0;
        parts.push(format!("{name}: {violations} violations over {profiled} probes"));
    }

    let v = RunView::load("hyperplane");
    let (alpha, _) = rank1_alpha_nu(&v.scn);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let wanted = [vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]];
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for sigma in &wanted {
        let Some(i) = v
            .analysis
            .acf_sigmas
            .iter()
            .position(|x| x.iter().zip(sigma).all(|(a, b)| (a - b).abs() < 1e-12))
        else {
            ok = false;
            parts.push(format!("sigma {sigma:?} not profiled"));
            continue;
        };
        let dot: f64 = alpha.iter().zip(sigma).map(|(a, b)| a * b).sum();
        let target = dot.powi(4) * std::f64::consts::PI.powi(2) / 4.0;
        for p in v
            .analysis
            .probes
            .iter()
            .filter(|p| p.class == Some(PointClass::TwoPhaseSingular))
        {
            let limit = p.acf[i].limit;
            worst = worst.max((limit - target).abs() / target);
            checked += 1;
        }
    }
    ok &= checked > 0 && worst <= 0.05;
    parts.push(format!(
        "rank-one limits: {checked} checked, worst relative error {worst:.2e}"
    ));
    verdict("acf_monotonicity_and_limit", ok, parts.join("; "));
}

#[test]
fn blowup_uniqueness() {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["hyperplane", "half_plane", "rank2"] {
        let v = RunView::load(name);
        let mut points = 0;
        let mut worst: f64 = 0.0;
        let mut rank_bad = 0;
        for p in v
            .analysis
            .probes
            .iter()
            .filter(|p| p.class == Some(PointClass::TwoPhaseSingular))
        {
            points += 1;
            let Some(b) = &p.blowup else {
                ok = false;
                continue;
            };
            ok &= b.radii.len() == 4;
            match b.consistency {
                Some(c) => worst = worst.max(c),
                None => ok = false,
            }
            if name == "hyperplane" && !(b.rank_constant && b.ranks.iter().all(|&r| r == 1)) {
                rank_bad += 1;
            }
        }
        ok &= worst <= 0.05 && rank_bad == 0;
        if name == "hyperplane" {
            ok &= points > 0;
        }
        parts.push(format!(
            "{name}: {points} two-phase points, max variation {worst:.2e}, {rank_bad} rank mismatches"
        ));
    }
    verdict("blowup_uniqueness", ok, parts.join("; "));
}

/// "Exactly" for the cross, read as agreement to a few units in the last place.
const CROSS_ULPS: f64 = 1e-15;

#[test]
fn beta_oracle_equivalence() {
    let t = Instant::now();
    let rep = single_threaded(|| run_oracle(ORACLE_CLOUDS));
    let secs = t.elapsed().as_secs_f64();
    let (ok, detail) = match rep {
        Ok(r) => {
            let dims_ok = r.cases.len() as u64 == ORACLE_CLOUDS;
            (
                dims_ok
                    && r.passed
                    && r.worst_rel_gap <= ORACLE_TOL
                    && (r.cross_eigen - 0.5).abs() <= CROSS_ULPS
                    && (r.cross_brute - 0.5).abs() <= CROSS_ULPS
                    && secs <= 120.0,
                format!(
                    "{} clouds, worst gap {:.2e}, cross {} / {}, {secs:.1} s",
                    r.cases.len(),
                    r.worst_rel_gap,
                    r.cross_eigen,
                    r.cross_brute
                ),
            )
        }
        Err(e) => (false, format!("oracle failed: {e}")),
    };
    verdict("beta_oracle_equivalence", ok, detail);
}

#[test]
fn beta_on_detected_set() {
    let v = RunView::load("hyperplane");
    let beta: BetaOutput = read(&v.dir.join("estimate.json"));
    let s = &beta.summary;
    let floor = RESOLUTION_FLOOR_CELLS * v.h();
    let radii_ok = !s.radii.is_empty() && s.radii.iter().all(|&r| r >= floor * (1.0 - 1e-12) && r <= 0.25 + 1e-12);
    let worst = s.max_beta_r_over_h.unwrap_or(f64::INFINITY);
    let ok = s.centers > 0 && radii_ok && s.dims == [1] && s.beta_failures == 0 && worst <= 3.0;
    verdict(
        "beta_on_detected_set",
        ok,
        format!(
            "{} centers, radii {:?}, max beta r/h {worst:.3e}, {} failures",
            s.centers, s.radii, s.beta_failures
        ),
    );
}

fn stable(cs: &[f64]) -> bool {
    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cs.iter().copied().fold(0.0, f64::max);
    hi == 0.0 || (lo > 0.0 && hi <= 2.0 * lo)
}

#[test]
fn beta_weiss_estimate() {
    let root = tempfile::tempdir().unwrap();
    let mut scn = Scenario::load(&scenario_path("hyperplane")).unwrap();
    scn.domain.n = 129;
    let ctx = RunContext {
        out: root.path().to_path_buf(),
        timings: false,
    };
    let coarse = run_solve(&scn, &ctx)
        .and_then(|o| run_analyze(&scn, &ctx.out.join("field.json"), &ctx).map(|_| o))
        .and_then(|_| {
            run_beta(
                &scn,
                &ctx.out.join("detections.json"),
                Some(&ctx.out.join("field.json")),
                &ctx,
            )
        });
    let fine: BetaOutput = read(&suite().a.join("hyperplane").join("estimate.json"));

    let mut ok = true;
    let mut parts = Vec::new();
    let mut per_n = BTreeMap::new();
    let runs: Vec<(usize, Option<BetaOutput>)> = vec![(129, coarse.ok().map(|x| x.0)), (257, Some(fine))];
    for (n, out) in runs {
        let Some(out) = out else {
            ok = false;
            parts.push(format!("n = {n}: pipeline failed"));
            continue;
        };
        let s = &out.summary;
        let mut per_center: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut radii_seen: Vec<f64> = Vec::new();
        for e in &out.estimates {
            if let Some(c) = e.report.as_ref().and_then(|r| r.implied_constant) {
                per_center.entry(e.center).or_default().push(c);
                per_n.entry(n).or_insert_with(Vec::new).push(c);
                if !radii_seen.contains(&e.r) {
                    radii_seen.push(e.r);
                }
            }
        }
        let across_r = per_center.values().all(|cs| cs.len() == 2 && stable(cs));
        let bounded = s.max_implied_constant.is_none_or(|c| c <= 1e4);
        ok &= s.centers > 0 && s.all_constants_finite && s.estimates_failed == 0 && across_r && bounded;
        parts.push(format!(
            "n = {n}: {} centers, {} evaluated, {} failed, max constant {:?}, stable across r: {across_r}",
            s.centers, s.estimates_evaluated, s.estimates_failed, s.max_implied_constant
        ));
    }
    let maxima: Vec<f64> = per_n
        .values()
        .map(|cs| cs.iter().copied().fold(0.0, f64::max))
        .collect();
    let across_n = maxima.len() == 2 && stable(&maxima);
    ok &= across_n;
    parts.push(format!("stable across n: {across_n}"));
    verdict("beta_weiss_estimate", ok, parts.join("; "));
}

#[test]
fn scaling_identities() {
    let mut ok = true;
    let mut parts = Vec::new();
    for (si, name) in ["hyperplane", "half_plane", "rank2"].iter().enumerate() {
        let v = RunView::load(name);
        let u = v.field();
        let params = v.scn.params().unwrap();
        let d = u.dim();
        let q = Quadrature::default_for(d);
        let h = u.spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + si as u64);
        let mut worst_j: f64 = 0.0;
        let mut worst_psi: f64 = 0.0;
        let mut failures = 0;
        for _ in 0..20 {
            let r = rng.random_range(RESOLUTION_FLOOR_CELLS * h..0.4);
            let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
            let sigma: Vec<f64> = {
                let s: Vec<f64> = (0..u.components()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = s.iter().map(|x| x * x).sum::<f64>().sqrt();
                s.iter().map(|x| x / n).collect()
            };
            let origin = vec![0.0; d];
            let res = (|| -> vecbern::Result<(f64, f64, f64, f64)> {
                let direct = ball_energy(&u, &BallWindow::new(&u, &x0, r)?, &params, &q)?;
                let scaled = rescale(&u, &x0, r)?;
                let unit = ball_energy(&scaled, &BallWindow::new(&scaled, &origin, 1.0)?, &params, &q)?;
                let psi = acf_functional(&u, &sigma, &origin, r, &q)?;
                let at_origin = rescale(&u, &origin, r)?;
                let psi_unit = acf_functional(&at_origin, &sigma, &origin, 1.0, &q)?;
                Ok((direct, unit * r.powi(d as i32), psi, psi_unit))
            })();
            match res {
                Ok((a, b, c, e)) => {
                    worst_j = worst_j.max(rel_gap(a, b));
                    worst_psi = worst_psi.max(rel_gap(c, e));
                }
                Err(_) => failures += 1,
            }
        }
        ok &= failures == 0 && worst_j <= 1e-3 && worst_psi <= 1e-3;
        parts.push(format!(
            "{name}: energy {worst_j:.2e}, psi {worst_psi:.2e}, {failures} failures"
        ));
    }
    verdict("scaling_identities", ok, parts.join("; "));
}

#[test]
fn splitting_probe_alternatives() {
    let mut ok = true;
    let mut parts = Vec::new();

    let v = RunView::load("hyperplane");
    let (_, nu) = rank1_alpha_nu(&v.scn);
    let p: ProbeOutput = read(&v.dir.join("probe.json"));
    let (mut on, mut off, mut wrong) = (0, 0, 0);
    for rep in &p.reports {
        let dist: f64 = rep.x.iter().zip(&nu).map(|(a, b)| a * b).sum::<f64>().abs();
        let expected = if dist <= 0.5 * v.h() {
            on += 1;
            Alternative::Pinched
        } else {
            off += 1;
            Alternative::Concentrated
        };
        wrong += usize::from(rep.alternative != expected);
    }
    ok &= on > 0 && off > 0 && wrong == 0;
    parts.push(format!("hyperplane: {on} on-line, {off} off-line, {wrong} wrong"));

    let v = RunView::load("rank2");
    let p: ProbeOutput = read(&v.dir.join("probe.json"));
    let origin = p.reports.iter().find(|r| r.x.iter().all(|&c| c == 0.0));
    let origin_ok = origin.is_some_and(|r| r.alternative == Alternative::Concentrated) && p.config.j == 1;
    ok &= origin_ok;
    parts.push(format!(
        "rank2 origin: {:?} with j = {}",
        origin.map(|r| r.alternative),
        p.config.j
    ));

    let mut neither = 0;
    for name in ["hyperplane", "half_plane", "rank2"] {
        let p: ProbeOutput = read(&suite().a.join(name).join("probe.json"));
        neither += p
            .reports
            .iter()
            .filter(|r| r.alternative == Alternative::Neither)
            .count();
    }
    ok &= neither == 0;
    parts.push(format!("{neither} neither outcomes"));
    verdict("splitting_probe_alternatives", ok, parts.join("; "));
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn deterministic_output_trees() {
    let s = suite();
    let failed: Vec<&str> = s
        .statuses
        .iter()
        .filter(|(_, a, b)| !(*a && *b))
        .map(|(n, _, _)| n.as_str())
        .collect();
    let (ta, tb) = (tree(&s.a), tree(&s.b));
    let differing: Vec<_> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|p| p.display().to_string())
        .collect();
    let ok = failed.is_empty() && !ta.is_empty() && differing.is_empty();
    verdict(
        "deterministic_output_trees",
        ok,
        format!(
            "{} files per run, {} differ, failed runs {failed:?}{}",
            ta.len(),
            differing.len(),
            differing
                .first()
                .map(|p| format!(", first difference {p}"))
                .unwrap_or_default()
        ),
    );
}

#[test]
fn selftest_passes() {
    let t = Instant::now();
    let rep = single_threaded(|| run_selftest(ToleranceProfile::Default));
    let secs = t.elapsed().as_secs_f64();
    let ok = rep.passed && rep.calibration_passed && secs <= 300.0;
    let failed: Vec<&str> = rep
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    verdict(
        "selftest_passes",
        ok,
        format!(
            "{} checks, {} failed {failed:?}, {secs:.1} s",
            rep.checks.len(),
            rep.failed
        ),
    );
}

//! Summaries of a run directory: one JSON document plus a plot-ready CSV of
//! `section,metric,value` rows.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vecbern::monotonicity::fmt_f64;

use crate::manifest::{verify, ManifestWriter, RunManifest};
use crate::pipeline::{AnalysisSummary, BetaOutput, BetaSummary, ProbeOutput, SolveRecord};
use crate::{io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestStatus {
    pub command: String,
    pub status: String,
    pub errors: usize,
    /// Outputs whose hash no longer matches the file on disk.
    pub modified: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveBrief {
    pub converged: bool,
    pub iterations: usize,
    pub energy: f64,
    pub energy_unit_ball: f64,
    pub exact_rel_l2_half_ball: Option<f64>,
    pub exact_energy_unit_ball: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: Option<String>,
    pub manifests: Vec<ManifestStatus>,
    pub solve: Option<SolveBrief>,
    pub analysis: Option<AnalysisSummary>,
    pub beta: Option<BetaSummary>,
    pub probe: Option<std::collections::BTreeMap<String, usize>>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(Some(serde_json::from_str(&text)?))
}

#[derive(Deserialize)]
struct AnalysisHead {
    summary: AnalysisSummary,
}

pub fn summarize_run(dir: &Path) -> Result<RunSummary> {
    let mut manifests = Vec::new();
    let mut name = None;
    for cmd in ["solve", "analyze", "beta", "probe"] {
        if let Some(m) = read_json::<RunManifest>(&dir.join(format!("manifest_{cmd}.json")))? {
            name = name.or_else(|| m.scenario.as_ref().map(|s| s.name.clone()));
            manifests.push(ManifestStatus {
                command: m.command.clone(),
                status: m.status.clone(),
                errors: m.errors.len(),
                modified: verify(dir, &m)?,
            });
        }
    }
    Ok(RunSummary {
        name,
        manifests,
        solve: read_json::<SolveRecord>(&dir.join("solve.json"))?.map(|s| SolveBrief {
            converged: s.converged,
            iterations: s.iterations,
            energy: s.energy,
            energy_unit_ball: s.energy_unit_ball,
            exact_rel_l2_half_ball: s.exact_rel_l2_half_ball,
            exact_energy_unit_ball: s.exact_energy_unit_ball,
        }),
        analysis: read_json::<AnalysisHead>(&dir.join("analysis.json"))?.map(|a| a.summary),
        beta: read_json::<BetaOutput>(&dir.join("estimate.json"))?.map(|b| b.summary),
        probe: read_json::<ProbeOutput>(&dir.join("probe.json"))?.map(|p| p.counts),
    })
}

fn row(out: &mut String, section: &str, metric: &str, value: String) {
    out.push_str(&format!("{section},{metric},{value}\n"));
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn summary_csv(s: &RunSummary) -> String {
    let mut out = String::from("section,metric,value\n");
    for m in &s.manifests {
        row(
            &mut out,
            "manifest",
            &format!("{}_ok", m.command),
            (m.status == "ok").to_string(),
        );
        row(
            &mut out,
            "manifest",
            &format!("{}_errors", m.command),
            m.errors.to_string(),
        );
        row(
            &mut out,
            "manifest",
            &format!("{}_modified", m.command),
            m.modified.len().to_string(),
        );
    }
    if let Some(v) = &s.solve {
        row(&mut out, "solve", "converged", v.converged.to_string());
        row(&mut out, "solve", "iterations", v.iterations.to_string());
        row(&mut out, "solve", "energy", fmt_f64(v.energy));
        row(&mut out, "solve", "energy_unit_ball", fmt_f64(v.energy_unit_ball));
        row(
            &mut out,
            "solve",
            "exact_rel_l2_half_ball",
            opt(v.exact_rel_l2_half_ball),
        );
    }
    if let Some(a) = &s.analysis {
        row(&mut out, "analysis", "probes", a.probes.to_string());
        row(
            &mut out,
            "analysis",
            "probes_with_errors",
            a.probes_with_errors.to_string(),
        );
        for (class, n) in &a.classes {
            row(&mut out, "analysis", &format!("class_{class}"), n.to_string());
        }
        row(&mut out, "analysis", "weiss_violations", a.weiss_violations.to_string());
        row(&mut out, "analysis", "acf_violations", a.acf_violations.to_string());
        row(
            &mut out,
            "analysis",
            "max_energy_density_gap",
            opt(a.max_energy_density_gap),
        );
        row(
            &mut out,
            "analysis",
            "max_two_phase_consistency",
            opt(a.max_two_phase_consistency),
        );
        row(
            &mut out,
            "analysis",
            "strata_inconsistent",
            a.strata_inconsistent.to_string(),
        );
    }
    if let Some(b) = &s.beta {
        row(&mut out, "beta", "centers", b.centers.to_string());
        row(&mut out, "beta", "max_beta_r_over_h", opt(b.max_beta_r_over_h));
        row(&mut out, "beta", "estimates_failed", b.estimates_failed.to_string());
        row(
            &mut out,
            "beta",
            "all_constants_finite",
            b.all_constants_finite.to_string(),
        );
        row(&mut out, "beta", "max_implied_constant", opt(b.max_implied_constant));
        row(&mut out, "beta", "max_constant_ratio", opt(b.max_constant_ratio));
    }
    if let Some(p) = &s.probe {
        for (alt, n) in p {
            row(&mut out, "probe", alt, n.to_string());
        }
    }
    out
}

/// Writes `summary.json` and `summary.csv` into `dir`.
pub fn run_report(dir: &Path, timings: bool) -> Result<(RunSummary, RunManifest)> {
    let summary = summarize_run(dir)?;
    let mut w = ManifestWriter::new(dir, "report", None, timings);
    w.write_json("summary.json", &summary)?;
    w.write("summary.csv", summary_csv(&summary).as_bytes())?;
    Ok((summary, w.finish()?))
}

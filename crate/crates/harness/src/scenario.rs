//! Scenario files (TOML): domain, problem, boundary data, solver settings
//! and the analysis plan.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vecbern::energy::EnergyParams;
use vecbern::field_io::read_field;
use vecbern::grid::GridSpec;
use vecbern::minimizer::{BoundaryData, SolverConfig};
use vecbern::model::ModelSolution;
use vecbern::stratification::SplittingProbeConfig;

use crate::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub domain: Domain,
    pub problem: Problem,
    pub boundary: Boundary,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: AnalysisPlan,
    #[serde(default)]
    pub probe: ProbePlan,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub d: usize,
    pub n: usize,
    #[serde(default = "unit_extent")]
    pub extent: f64,
}

fn unit_extent() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub k: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Boundary {
    /// `alpha (x . nu)_+`.
    HalfPlane { alpha: Vec<f64>, nu_angles: Vec<f64> },
    /// `(alpha (x) nu) x`.
    LinearRank1 { alpha: Vec<f64>, nu_angles: Vec<f64> },
    /// `A x` with `matrix` given row by row (`k` rows of length `d`).
    LinearGeneral { matrix: Vec<Vec<f64>> },
    /// Boundary values taken from a stored field on the same grid; the path
    /// is relative to the scenario file.
    Custom { field: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisPlan {
    /// Explicit probe points; `None` auto-detects them on the free boundary.
    pub probes: Option<Vec<Vec<f64>>>,
    pub max_probes: usize,
    /// Largest radius of the Weiss, ACF and density schedules.
    pub r0: f64,
    /// Largest radius of the blow-up traces.
    pub blowup_r0: f64,
    pub blowup_radii: usize,
    pub tau_class: f64,
    pub delta: f64,
    pub tol_rank: f64,
    pub consistency_floor: f64,
    /// Random unit probes added to the canonical basis in blow-up traces.
    pub extra_sigmas: usize,
    /// ACF directions; `None` uses the canonical basis plus the normalized
    /// all-ones vector.
    pub acf_sigmas: Option<Vec<Vec<f64>>>,
    pub eps: Vec<f64>,
    /// Plane dimensions for beta numbers; `None` means `d - 1`.
    pub j: Option<Vec<usize>>,
    pub beta_r0: f64,
    pub estimate_radii: Vec<f64>,
    pub estimate_delta: f64,
}

impl Default for AnalysisPlan {
    fn default() -> Self {
        Self {
            probes: None,
            max_probes: 200,
            r0: 0.25,
            blowup_r0: 0.5,
            blowup_radii: 4,
            tau_class: 0.1,
            delta: 0.05,
            tol_rank: 1e-3,
            consistency_floor: vecbern::blowup::CONSISTENCY_FLOOR_REL,
            extra_sigmas: 4,
            acf_sigmas: None,
            eps: vec![0.01],
            j: None,
            beta_r0: 0.25,
            estimate_radii: vec![1.0 / 16.0, 1.0 / 8.0],
            estimate_delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbePlan {
    pub centers: Vec<Vec<f64>>,
    pub r: f64,
    #[serde(flatten)]
    pub config: SplittingProbeConfig,
}

impl Default for ProbePlan {
    fn default() -> Self {
        Self {
            centers: Vec::new(),
            r: 0.085,
            config: SplittingProbeConfig::default(),
        }
    }
}

impl ProbePlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Unit vector from polar angles: `(cos t, sin t)` in the plane,
/// `(sin t cos p, sin t sin p, cos t)` in space.
pub fn direction(d: usize, angles: &[f64]) -> Result<Vec<f64>> {
    match (d, angles) {
        (2, [t]) => Ok(vec![t.cos(), t.sin()]),
        (3, [t, p]) => Ok(vec![t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]),
        _ => Err(HarnessError::Scenario(format!(
            "d = {d} needs {} angle(s), got {}",
            d - 1,
            angles.len()
        ))),
    }
}

impl Scenario {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let scn: Scenario = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(scn)
    }

    /// Reads a scenario and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut scn = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Boundary::Custom { field } = &mut scn.boundary {
            if field.is_relative() {
                *field = base.join(&*field);
            }
        }
        scn.validate()?;
        Ok(scn)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.domain.d, self.domain.n, self.domain.extent)?)
    }

    pub fn params(&self) -> Result<EnergyParams> {
        Ok(EnergyParams::new(self.problem.lambda)?)
    }

    /// Checks feasibility; returns warnings that do not prevent a run.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.grid()?;
        self.params()?;
        self.solver.validate()?;
        let (d, k) = (self.domain.d, self.problem.k);
        if k == 0 {
            return Err(HarnessError::Scenario("k must be positive".into()));
        }
        let mut warnings = Vec::new();
        match &self.boundary {
            Boundary::HalfPlane { alpha, nu_angles } | Boundary::LinearRank1 { alpha, nu_angles } => {
                if alpha.len() != k {
                    return Err(HarnessError::Scenario(format!(
                        "alpha has {} entries, k = {k}",
                        alpha.len()
                    )));
                }
                direction(d, nu_angles)?;
                let a2: f64 = alpha.iter().map(|a| a * a).sum();
                if a2 < self.problem.lambda {
                    warnings.push(format!(
                        "|alpha|^2 = {a2} < Lambda = {}: the data violate alpha_1^2 + ... + alpha_k^2 >= Lambda",
                        self.problem.lambda
                    ));
                }
            }
            Boundary::LinearGeneral { matrix } => {
                if matrix.len() != k || matrix.iter().any(|row| row.len() != d) {
                    return Err(HarnessError::Scenario(format!("matrix must be {k} x {d}")));
                }
            }
            Boundary::Custom { field } => {
                if !field.exists() {
                    return Err(HarnessError::Scenario(format!(
                        "field file {} does not exist",
                        field.display()
                    )));
                }
            }
        }
        let plan = &self.analysis;
        if !(plan.r0 > 0.0 && plan.blowup_r0 > 0.0 && plan.beta_r0 > 0.0) || plan.max_probes == 0 {
            return Err(HarnessError::Scenario(
                "analysis radii and max_probes must be positive".into(),
            ));
        }
        if plan.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(HarnessError::Scenario("eps values must be positive".into()));
        }
        self.probe.config.validate()?;
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(warnings)
    }

    /// The model solution behind analytic boundary kinds.
    pub fn model(&self) -> Result<Option<ModelSolution>> {
        let d = self.domain.d;
        Ok(match &self.boundary {
            Boundary::HalfPlane { alpha, nu_angles } => {
                Some(ModelSolution::half_plane(alpha, &direction(d, nu_angles)?)?)
            }
            Boundary::LinearRank1 { alpha, nu_angles } => {
                Some(ModelSolution::rank_one(alpha, &direction(d, nu_angles)?)?)
            }
            Boundary::LinearGeneral { matrix } => {
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                Some(ModelSolution::linear(self.problem.k, d, &flat)?)
            }
            Boundary::Custom { .. } => None,
        })
    }

    pub fn boundary_data(&self) -> Result<BoundaryData> {
        let grid = self.grid()?;
        if let Some(model) = self.model()? {
            return Ok(BoundaryData::from_field(&model.sample(grid))?);
        }
        let Boundary::Custom { field } = &self.boundary else {
            unreachable!("analytic kinds handled above")
        };
        let u = read_field(field)?;
        if *u.grid() != grid || u.k() != self.problem.k {
            return Err(HarnessError::Scenario(format!(
                "field {} does not match the scenario grid and k",
                field.display()
            )));
        }
        Ok(BoundaryData::from_field(&u)?)
    }

    pub fn acf_sigmas(&self) -> Vec<Vec<f64>> {
        if let Some(s) = &self.analysis.acf_sigmas {
            return s.clone();
        }
        let k = self.problem.k;
        let mut out: Vec<Vec<f64>> = (0..k)
            .map(|l| (0..k).map(|m| if m == l { 1.0 } else { 0.0 }).collect())
            .collect();
        if k > 1 {
            out.push(vec![1.0 / (k as f64).sqrt(); k]);
        }
        out
    }

    pub fn beta_dims(&self) -> Vec<usize> {
        let d = self.domain.d;
        self.analysis
            .j
            .clone()
            .unwrap_or_else(|| vec![d - 1])
            .into_iter()
            .filter(|&j| j >= 1 && j < d)
            .collect()
    }
}

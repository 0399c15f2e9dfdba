use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vecbern_harness::manifest::ManifestWriter;
use vecbern_harness::oracle::{run_oracle, ORACLE_CLOUDS};
use vecbern_harness::pipeline::{run_analyze, run_beta, run_probe, run_solve, RunContext};
use vecbern_harness::report::run_report;
use vecbern_harness::scenario::{ProbePlan, Scenario};
use vecbern_harness::selftest::{run_selftest, ToleranceProfile};
use vecbern_harness::{HarnessError, Result, EXIT_ANALYSIS, EXIT_SELFTEST, EXIT_SOLVER};

#[derive(Parser)]
#[command(name = "vecbern", version, about = "Vectorial Bernoulli free-boundary laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (default: the scenario's `output`, else runs/<name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; affects speed only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "default")]
    tolerance_profile: ToleranceProfile,
    /// Record wall-clock times in manifests (breaks byte-identical reruns).
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the energy for a scenario and store the field.
    Solve { scenario: PathBuf },
    /// Profiles, classification, blow-ups and strata at probe points.
    Analyze {
        scenario: PathBuf,
        #[arg(long)]
        field: PathBuf,
    },
    /// Beta numbers on detected points and the beta-versus-Weiss estimate.
    Beta {
        scenario: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Field for the estimate (default: field.json next to the detections).
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Splitting probe at the configured centers.
    Probe {
        scenario: PathBuf,
        /// Probe settings (TOML); default: the scenario's [probe] table.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Default: field.json in the output directory.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Solve, analyze, beta and probe in one output directory, then report.
    Run { scenario: PathBuf },
    /// Summary JSON and plot-ready CSV for a run directory.
    Report { run_dir: PathBuf },
    /// Embedded exactness and closed-form checks.
    Selftest,
    /// Beta-number oracle sweep on seeded random clouds.
    Oracle {
        #[arg(long, default_value_t = ORACLE_CLOUDS)]
        clouds: u64,
    },
}

struct Failure {
    code: u8,
    error: HarnessError,
}

fn fail(code: i32) -> impl FnOnce(HarnessError) -> Failure {
    move |error| Failure {
        code: code as u8,
        error,
    }
}

fn load(cli: &Cli, path: &Path, command: &str, code: i32) -> std::result::Result<(Scenario, RunContext), Failure> {
    match Scenario::load(path) {
        Ok(mut scn) => {
            if let Some(s) = cli.seed {
                scn.seed = s;
            }
            let out = cli
                .out
                .clone()
                .or_else(|| scn.output.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(&scn.name));
            Ok((
                scn,
                RunContext {
                    out,
                    timings: cli.timings,
                },
            ))
        }
        Err(e) => {
            if let Some(out) = &cli.out {
                let mut w = ManifestWriter::new(out, command, None, cli.timings);
                w.error(e.to_string());
                w.fail();
                let _ = w.finish();
            }
            Err(fail(code)(e))
        }
    }
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.into(),
        source,
    })?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| HarnessError::Io { path, source })
}

fn probe_plan(scn: &Scenario, config: Option<&Path>) -> Result<ProbePlan> {
    match config {
        Some(p) => ProbePlan::load(p),
        None => Ok(scn.probe.clone()),
    }
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Solve { scenario } => {
            let (scn, ctx) = load(cli, scenario, "solve", EXIT_SOLVER)?;
            let o = run_solve(&scn, &ctx).map_err(fail(EXIT_SOLVER))?;
            println!(
                "solve {}: converged after {} iterations, J = {}",
                scn.name, o.record.iterations, o.record.energy
            );
        }
        Command::Analyze { scenario, field } => {
            let (scn, ctx) = load(cli, scenario, "analyze", EXIT_ANALYSIS)?;
            let (a, _) = run_analyze(&scn, field, &ctx).map_err(fail(EXIT_ANALYSIS))?;
            println!(
                "analyze {}: {} probes, classes {:?}",
                scn.name, a.summary.probes, a.summary.classes
            );
        }
        Command::Beta {
            scenario,
            detections,
            field,
        } => {
            let (scn, ctx) = load(cli, scenario, "beta", EXIT_ANALYSIS)?;
            let field = field.clone().or_else(|| {
                let p = detections.parent().unwrap_or(Path::new(".")).join("field.json");
                p.exists().then_some(p)
            });
            let (b, _) = run_beta(&scn, detections, field.as_deref(), &ctx).map_err(fail(EXIT_ANALYSIS))?;
            println!(
                "beta {}: {} centers, max beta r/h = {:?}, max constant = {:?}",
                scn.name, b.summary.centers, b.summary.max_beta_r_over_h, b.summary.max_implied_constant
            );
        }
        Command::Probe {
            scenario,
            config,
            field,
        } => {
            let (scn, ctx) = load(cli, scenario, "probe", EXIT_ANALYSIS)?;
            let plan = probe_plan(&scn, config.as_deref()).map_err(fail(EXIT_ANALYSIS))?;
            let field = field.clone().unwrap_or_else(|| ctx.out.join("field.json"));
            let (p, _) = run_probe(&scn, &field, &plan, &ctx).map_err(fail(EXIT_ANALYSIS))?;
            println!("probe {}: {:?}", scn.name, p.counts);
        }
        Command::Run { scenario } => {
            let (scn, ctx) = load(cli, scenario, "solve", EXIT_SOLVER)?;
            run_solve(&scn, &ctx).map_err(fail(EXIT_SOLVER))?;
            let field = ctx.out.join("field.json");
            run_analyze(&scn, &field, &ctx).map_err(fail(EXIT_ANALYSIS))?;
            run_beta(&scn, &ctx.out.join("detections.json"), Some(&field), &ctx).map_err(fail(EXIT_ANALYSIS))?;
            run_probe(&scn, &field, &scn.probe, &ctx).map_err(fail(EXIT_ANALYSIS))?;
            let (s, _) = run_report(&ctx.out, ctx.timings).map_err(fail(EXIT_ANALYSIS))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).map_err(|e| fail(EXIT_ANALYSIS)(e.into()))?
            );
        }
        Command::Report { run_dir } => {
            let (s, _) = run_report(run_dir, cli.timings).map_err(fail(EXIT_ANALYSIS))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).map_err(|e| fail(EXIT_ANALYSIS)(e.into()))?
            );
        }
        Command::Selftest => {
            let rep = run_selftest(cli.tolerance_profile);
            for c in &rep.checks {
                println!(
                    "{} {:<48} error {:.3e} tol {:.3e}{}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.error,
                    c.tolerance,
                    c.message.as_deref().map(|m| format!(" ({m})")).unwrap_or_default()
                );
            }
            println!(
                "selftest: calibration error {:.3e} ({}), {} checks, {} failed",
                rep.calibration_error,
                if rep.calibration_passed { "ok" } else { "FAILED" },
                rep.checks.len(),
                rep.failed
            );
            if let Some(out) = &cli.out {
                write_json(out, "selftest.json", &rep).map_err(fail(EXIT_SELFTEST))?;
            }
            if !rep.passed {
                return Err(fail(EXIT_SELFTEST)(HarnessError::Scenario("selftest failed".into())));
            }
        }
        Command::Oracle { clouds } => {
            let rep = run_oracle(*clouds).map_err(fail(EXIT_ANALYSIS))?;
            println!(
                "oracle: {} clouds, worst relative gap {:.3e}, cross {} / {}",
                rep.cases.len(),
                rep.worst_rel_gap,
                rep.cross_eigen,
                rep.cross_brute
            );
            if let Some(out) = &cli.out {
                write_json(out, "oracle.json", &rep).map_err(fail(EXIT_ANALYSIS))?;
            }
            if !rep.passed {
                return Err(fail(EXIT_ANALYSIS)(HarnessError::Scenario(
                    "oracle sweep failed".into(),
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

//! Batch runs: hypothesis gate, checks, per-check reports and a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use spde_lab::convolution::FactorizationParams;
use spde_lab::ensemble::Execution;
use spde_lab::error::Error;
use spde_lab::estimators::{
    concentration_profile, estimate_w2_and_entropy, factorization_study, layer_cake_analytic, layer_cake_checks,
    local_property_check, sample_functional, verify_moment_bound, verify_small_p, verify_tail_bound, Functional,
    SmallPMode,
};
use spde_lab::report::{reports_to_csv, VerificationReport};

use crate::config::{CheckId, LayerSource, RunConfig};
use crate::CliError;

pub const EXIT_PASSED: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub struct RunOutcome {
    pub status: i32,
    pub reports: Vec<(CheckId, Vec<VerificationReport>)>,
    pub manifest: PathBuf,
}

impl RunConfig {
    pub fn execution(&self) -> Execution {
        Execution { workers: self.workers, margin: self.margin }
    }
}

/// Invalid inputs are configuration errors; anything else a failed check.
fn classify(check: CheckId, e: Error) -> Result<Vec<VerificationReport>, CliError> {
    match e {
        Error::InvalidArgument(_)
        | Error::InvalidGrid(_)
        | Error::GridMismatch(_)
        | Error::InadmissibleAlpha { .. }
        | Error::EmptyAlphaRange(_) => Err(CliError::Config(format!("{check}: {e}"))),
        other => Ok(vec![VerificationReport::one_sided(check.name(), 0.0, 0.0, 0.0, 0, 0.0)
            .failed(&format!("check aborted: {other}"))]),
    }
}

fn run_check(config: &RunConfig, check: CheckId) -> Result<Vec<VerificationReport>, CliError> {
    let scn = &config.scenario;
    let exec = config.execution();
    let p = &config.params;
    let context = |r: VerificationReport| r.with_context(scn.seed, Some(scn.grid), &scn.id);
    let result = match check {
        CheckId::Moment => verify_moment_bound(scn, &exec, p.p, 1.0).map(|r| vec![r]),
        CheckId::Tail => verify_tail_bound(scn, &exec, p.p, &p.lambdas),
        CheckId::SmallP => std::iter::once(SmallPMode::ViaQ(p.q))
            .chain(p.eps.iter().map(|&e| SmallPMode::ViaEps(e)))
            .map(|mode| verify_small_p(scn, &exec, p.small_p, mode))
            .collect(),
        CheckId::Tci => estimate_w2_and_entropy(scn, &exec).map(|e| vec![e.report]),
        CheckId::Concentration => sample_functional(scn, &exec, p.functional)
            .and_then(|values| concentration_profile(&values, &p.radii))
            .map(|profile| vec![context(profile.report("concentration"))]),
        CheckId::LayerCake => match p.layer {
            LayerSource::Analytic(law) => layer_cake_analytic(law, p.layer_p, p.layer_q)
                .map(|sides| vec![sides.report(p.layer_p, p.layer_q, 0).with_details(format!("{law:?}"))]),
            LayerSource::Sampled => sample_functional(scn, &exec, Functional::SupNorm)
                .and_then(|values| layer_cake_checks(&values, p.layer_p, p.layer_q))
                .map(|r| vec![context(r)]),
        },
        CheckId::LocalProperty => local_property_check(scn, &exec).map(|r| vec![r]),
        CheckId::Factorization => {
            let params = match p.alpha {
                Some(alpha) => FactorizationParams::new(alpha, p.p),
                None => FactorizationParams::midpoint(p.p),
            };
            params
                .and_then(|params| {
                    factorization_study(
                        scn.grid.horizon(),
                        &[(scn.grid.nt(), scn.grid.nx())],
                        &params,
                        scn.n_paths,
                        scn.seed,
                        &exec,
                    )
                    .map(|pts| (params, pts[0]))
                })
                .map(|(params, pt)| {
                    let r = VerificationReport::one_sided("factorization", 0.05, pt.relative, 0.0, scn.n_paths, 0.0)
                        .with_details(format!(
                            "sigma = 1; alpha = {}; mean sup residual {:e} (se {:e}); estimate is the mean relative residual",
                            params.alpha(),
                            pt.residual,
                            pt.residual_std_error
                        ));
                    vec![context(r)]
                })
        }
    };
    result.or_else(|e| classify(check, e))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn prepare(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("output directory {}: {e}", dir.display())))
}

/// Writes `<dir>/<name>.json` and/or `.csv` as the configuration asks.
pub fn write_reports(config: &RunConfig, name: &str, reports: &[VerificationReport]) -> Result<Vec<String>, CliError> {
    let mut files = Vec::new();
    if config.formats.json {
        let file = format!("{name}.json");
        let body = serde_json::to_string_pretty(reports).expect("reports serialize");
        write(&config.output_dir.join(&file), &(body + "\n"))?;
        files.push(file);
    }
    if config.formats.csv {
        let file = format!("{name}.csv");
        write(&config.output_dir.join(&file), &reports_to_csv(reports))?;
        files.push(file);
    }
    Ok(files)
}

pub fn write_manifest(
    config: &RunConfig,
    command: &str,
    started: Instant,
    status: i32,
    extra: serde_json::Value,
) -> Result<PathBuf, CliError> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config.to_config_text(),
        "scenario": config.scenario.describe(),
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "exit_status": status,
        "results": extra,
    });
    let path = config.output_dir.join("manifest.json");
    write(&path, &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"))?;
    Ok(path)
}

/// Runs every configured check. Status 0 when all pass, 1 when any fails, 2
/// when the scenario violates its declared hypotheses.
pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    prepare(&config.output_dir)?;
    let hypotheses = config.scenario.hypotheses().map_err(|e| CliError::Config(e.to_string()))?;
    let gate = hypotheses.report(&config.scenario.coeffs);
    if !hypotheses.passed() {
        let witnesses: Vec<String> = hypotheses.violations.iter().map(ToString::to_string).collect();
        let manifest = write_manifest(
            config,
            "verify",
            started,
            EXIT_CONFIG,
            json!({ "hypotheses": gate, "witnesses": witnesses }),
        )?;
        return Ok(RunOutcome { status: EXIT_CONFIG, reports: Vec::new(), manifest });
    }

    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for &check in &config.checks {
        let rs = run_check(config, check)?;
        let files = write_reports(config, check.name(), &rs)?;
        summary.push(json!({
            "check": check.name(),
            "passed": rs.iter().all(|r| r.passed),
            "files": files,
        }));
        reports.push((check, rs));
    }
    let all_passed = reports.iter().all(|(_, rs)| rs.iter().all(|r| r.passed));
    let status = if all_passed { EXIT_PASSED } else { EXIT_FAILED };
    let manifest = write_manifest(config, "verify", started, status, json!({ "hypotheses": gate, "checks": summary }))?;
    Ok(RunOutcome { status, reports, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, pairs: &[(&str, &str)]) -> RunConfig {
        let out = dir.display().to_string();
        RunConfig::from_pairs(pairs.iter().copied().chain([("out", out.as_str()), ("workers", "1")])).unwrap()
    }

    #[test]
    fn analytic_layer_cake_passes() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), &[("checks", "layer_cake_checks"), ("layer_law", "exponential(1)")]);
        let outcome = run(&c).unwrap();
        assert_eq!(outcome.status, EXIT_PASSED);
        assert!(dir.path().join("layer-cake.json").exists());
        assert!(dir.path().join("layer-cake.csv").exists());
        assert!(outcome.manifest.exists());
    }

    #[test]
    fn hypothesis_violation_has_witness() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), &[("diffusion", "affine(1,0)"), ("k_sigma", "1"), ("checks", "moment")]);
        let outcome = run(&c).unwrap();
        assert_eq!(outcome.status, EXIT_CONFIG);
        let manifest = fs::read_to_string(outcome.manifest).unwrap();
        assert!(manifest.contains("K_sigma declared 1"), "{manifest}");
    }

    #[test]
    fn inadmissible_order_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), &[("checks", "moment"), ("p", "8"), ("nt", "16"), ("nx", "3"), ("paths", "4")]);
        assert!(matches!(run(&c), Err(CliError::Config(_))));
    }
}

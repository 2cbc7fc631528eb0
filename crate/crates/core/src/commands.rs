//! The operations behind the CLI subcommands, usable as library calls:
//! run an analysis to a report, simulate a population, and validate the
//! estimation pipeline against the synthetic oracle.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, Analysis, AnalysisOptions};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::infer::bootstrap;
use crate::io::{load_microdata, write_canonical};
use crate::model::{CellId, Group, RdSpec};
use crate::report::{analysis_report, Report, REPORT_SCHEMA_VERSION};
use crate::synth::{make_population, population_truth, DgpSpec, TruthTable};

/// The noiseless two-group, two-region process bundled with the crate.
pub fn bundled_asymmetric_dgp() -> DgpSpec {
    crate::config::parse_dgp(include_str!("../dgp/asymmetric_2x2.toml"))
        .expect("bundled dgp parses")
}

/// The noisy variant of the bundled process.
pub fn bundled_noisy_dgp() -> DgpSpec {
    crate::config::parse_dgp(include_str!("../dgp/noisy_2x2.toml")).expect("bundled dgp parses")
}

/// Run every outcome x comparison analysis described by the config and
/// assemble the JSON report.
pub fn run_decompose(config: &RunConfig) -> Result<Report> {
    config.validate()?;
    let opts = AnalysisOptions {
        composition_sample: config.options.composition_sample,
        kappa_threshold: config.options.kappa_threshold,
    };

    let mut analyses = Vec::new();
    for outcome in &config.outcomes {
        for comparison in &config.comparisons {
            let schema = config.schema_for(outcome, comparison);
            let (dataset, ingest) = load_microdata(&config.input, &schema, &config.rd)?;
            let (analysis, summary) = match &config.bootstrap {
                Some(boot) => {
                    let summary =
                        bootstrap(&dataset.records, &dataset.meta, &config.rd, &opts, boot)?;
                    (summary.point.clone(), Some(summary))
                }
                None => (
                    analyze(&dataset.records, &dataset.meta, &config.rd, &opts)?,
                    None,
                ),
            };
            analyses.push(analysis_report(
                outcome,
                &dataset,
                ingest,
                &analysis,
                summary.as_ref(),
                &config.rd,
            ));
        }
    }

    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        generator: format!("gapdecomp {}", env!("CARGO_PKG_VERSION")),
        rd: config.rd.clone(),
        composition_sample: config.options.composition_sample,
        kappa_threshold: config.options.kappa_threshold,
        bootstrap: config.bootstrap.clone(),
        analyses,
    })
}

/// Generate a population, write it in the canonical format, and write the
/// oracle truth as JSON. Returns the record count.
pub fn run_simulate(dgp: &DgpSpec, data_path: &Path, truth_path: &Path) -> Result<usize> {
    let dataset = make_population(dgp)?;
    let truth = population_truth(dgp)?;
    write_canonical(&dataset, data_path)?;
    let json = serde_json::to_string_pretty(&truth).expect("truth serializes");
    std::fs::write(truth_path, json + "\n").map_err(|e| Error::Io {
        path: truth_path.display().to_string(),
        source: e,
    })?;
    Ok(dataset.records.len())
}

#[derive(Debug, Clone, Default)]
pub struct ValidateOptions {
    /// Override the fitted polynomial order (the process degree by default).
    pub poly_order: Option<usize>,
    /// Override the comparison tolerance.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub expected: f64,
    pub actual: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Set in misspecified mode for quantities the mismatch is expected to bias.
    pub expected_fail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    /// Fit order below the process degree: failures of effect-derived
    /// quantities are expected, and detecting at least one is the pass
    /// condition.
    pub misspecified: bool,
    pub tolerance: f64,
    pub checks: Vec<ValidationCheck>,
    pub passed: bool,
}

impl ValidationSummary {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let name_width = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>14}  {:>14}  {:>10}  {:>9}  status",
            "quantity", "expected", "actual", "|error|", "tol"
        );
        for c in &self.checks {
            let status = match (c.pass, c.expected_fail) {
                (true, false) => "PASS",
                (false, false) => "FAIL",
                (false, true) => "XFAIL",
                (true, true) => "pass (xfail candidate)",
            };
            let _ = writeln!(
                out,
                "{:<name_width$}  {:>14.8}  {:>14.8}  {:>10.2e}  {:>9.1e}  {status}",
                c.name, c.expected, c.actual, c.error, c.tolerance
            );
        }
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let mode = if self.misspecified {
            " (misspecified mode: effect-quantity failures expected)"
        } else {
            ""
        };
        let _ = writeln!(out, "overall: {verdict}{mode}");
        out
    }
}

/// Conservative default tolerance for noisy processes: roughly ten standard
/// errors of a stratum intercept, taking the thinnest stratum side as the
/// binding sample size. Noiseless processes use 1e-8.
fn default_tolerance(dgp: &DgpSpec) -> f64 {
    if dgp.is_noiseless() {
        return 1e-8;
    }
    let max_sd = dgp
        .cells
        .iter()
        .map(|c| c.noise_sd)
        .fold(0.0_f64, f64::max);
    let mut min_side = f64::INFINITY;
    for cell in &dgp.cells {
        let mut below = 0u64;
        let mut above = 0u64;
        for age in dgp.window.0..=dgp.window.1 {
            let count = u64::from(match &cell.count_per_age {
                crate::synth::CountRule::Constant(c) => *c,
                crate::synth::CountRule::PerAge(map) => {
                    map.get(&age.to_string()).copied().unwrap_or(0)
                }
            });
            if age > dgp.cutoff {
                above += count;
            } else {
                below += count;
            }
        }
        min_side = min_side.min(below.min(above) as f64);
    }
    10.0 * max_sd * (4.0 / min_side.max(1.0)).sqrt()
}

/// Generate the bundled or given process, run the full pipeline on it, and
/// compare every estimand against the oracle.
pub fn run_validate(dgp: &DgpSpec, opts: &ValidateOptions) -> Result<ValidationSummary> {
    let mut spec: RdSpec = dgp.rd_spec();
    if let Some(p) = opts.poly_order {
        spec.poly_order = p;
    }
    spec.validate()?;
    let misspecified = spec.poly_order < dgp.max_degree();

    let dataset = make_population(dgp)?;
    let truth = population_truth(dgp)?;
    let analysis = analyze(
        &dataset.records,
        &dataset.meta,
        &spec,
        &AnalysisOptions::default(),
    )?;

    let tolerance = opts.tolerance.unwrap_or_else(|| default_tolerance(dgp));
    let summary = compare_to_truth(&analysis, &truth, &dataset.meta, tolerance, misspecified, dgp);
    Ok(summary)
}

fn compare_to_truth(
    analysis: &Analysis,
    truth: &TruthTable,
    meta: &crate::model::DatasetMeta,
    tolerance: f64,
    misspecified: bool,
    dgp: &DgpSpec,
) -> ValidationSummary {
    let groups = &meta.groups;
    let mut checks: Vec<ValidationCheck> = Vec::new();
    // effect-derived quantities are expected to be biased under a
    // misspecified fit; shares are not
    let mk = |name: String, expected: f64, actual: f64, tol: f64, biased: bool| {
        let error = (expected - actual).abs();
        ValidationCheck {
            name,
            expected,
            actual,
            error,
            tolerance: tol,
            pass: error <= tol,
            expected_fail: misspecified && biased,
        }
    };

    for cell_truth in &truth.cells {
        let id = meta.cells.id_of(&cell_truth.cell).map(CellId);
        for group in Group::BOTH {
            let name = groups.name(group);
            let expected = match group {
                Group::Baseline => cell_truth.tau_baseline,
                Group::Comparison => cell_truth.tau_comparison,
            };
            let actual = id
                .and_then(|id| analysis.effects.cell_fit(group, id))
                .map(|f| f.tau_hat)
                .unwrap_or(f64::NAN);
            checks.push(mk(
                format!("tau({name}, {})", cell_truth.cell),
                expected,
                actual,
                tolerance,
                true,
            ));
            let pi_expected = match group {
                Group::Baseline => cell_truth.pi_baseline,
                Group::Comparison => cell_truth.pi_comparison,
            };
            let pi_actual = id
                .map(|id| analysis.composition.share(group, id))
                .unwrap_or(f64::NAN);
            checks.push(mk(
                format!("pi({name}, {})", cell_truth.cell),
                pi_expected,
                pi_actual,
                // shares come from exact counts; they are never noisy
                1e-12_f64.max(tolerance.min(1e-8)),
                false,
            ));
        }
        let actual_delta_x = id
            .and_then(|id| analysis.decomposition.by_comparison.per_cell.get(&id))
            .map(|c| c.delta_x)
            .unwrap_or(f64::NAN);
        checks.push(mk(
            format!("delta({})", cell_truth.cell),
            cell_truth.delta_x,
            actual_delta_x,
            tolerance,
            true,
        ));
    }

    for group in Group::BOTH {
        let name = groups.name(group);
        checks.push(mk(
            format!("tau({name}) pooled"),
            truth.tau_group(group),
            analysis.effects.group_fit(group).tau_hat,
            tolerance,
            true,
        ));
        checks.push(mk(
            format!("tau({name}) plug-in"),
            truth.tau_group(group),
            analysis.tau_plugin[group.index()],
            tolerance,
            true,
        ));
    }

    checks.push(mk("gamma0".to_string(), truth.gamma0, analysis.gaps.gamma0, tolerance, true));
    checks.push(mk("gamma1".to_string(), truth.gamma1, analysis.gaps.gamma1, tolerance, true));
    checks.push(mk(
        "delta pooled".to_string(),
        truth.delta,
        analysis.gaps.delta,
        tolerance,
        true,
    ));
    checks.push(mk(
        "delta plug-in".to_string(),
        truth.delta,
        analysis.delta_plugin(),
        tolerance,
        true,
    ));

    for reference in Group::BOTH {
        let name = groups.name(reference);
        let expected = truth.reference(reference);
        let result = match reference {
            Group::Comparison => &analysis.decomposition.by_comparison,
            Group::Baseline => &analysis.decomposition.by_baseline,
        };
        checks.push(mk(
            format!("within(ref={name})"),
            expected.within,
            result.within_component,
            tolerance,
            true,
        ));
        checks.push(mk(
            format!("composition(ref={name})"),
            expected.composition,
            result.composition_component,
            tolerance,
            true,
        ));
        match (expected.kappa, result.kappa, dgp.is_noiseless()) {
            (Some(want), got, _) => {
                let kappa_tol = if truth.delta.abs() > 0.0 {
                    (2.0 * tolerance / truth.delta.abs()).max(tolerance)
                } else {
                    tolerance
                };
                checks.push(mk(
                    format!("kappa(ref={name})"),
                    want,
                    got.unwrap_or(f64::NAN),
                    kappa_tol,
                    true,
                ));
            }
            (None, got, true) => {
                // degenerate truth: a noiseless fit must report undefined too
                let ok = got.is_none();
                checks.push(ValidationCheck {
                    name: format!("kappa(ref={name}) undefined"),
                    expected: f64::NAN,
                    actual: got.unwrap_or(f64::NAN),
                    error: if ok { 0.0 } else { f64::INFINITY },
                    tolerance: 0.0,
                    pass: ok,
                    expected_fail: misspecified,
                });
            }
            (None, _, false) => {
                // noisy process with a degenerate true delta: kappa is not
                // statistically comparable, skip it
            }
        }
    }

    let strict_pass = checks
        .iter()
        .filter(|c| !c.expected_fail)
        .all(|c| c.pass);
    let passed = if misspecified {
        let bias_detected = checks.iter().any(|c| c.expected_fail && !c.pass);
        strict_pass && bias_detected
    } else {
        strict_pass
    };

    ValidationSummary {
        misspecified,
        tolerance,
        checks,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_dgps_parse_and_crosscheck() {
        let dgp = bundled_asymmetric_dgp();
        let truth = population_truth(&dgp).unwrap();
        approx::assert_abs_diff_eq!(truth.delta, -0.054, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(
            truth.by_comparison_reference.kappa.unwrap(),
            1.0,
            epsilon = 1e-12
        );
        approx::assert_abs_diff_eq!(
            truth.by_baseline_reference.kappa.unwrap(),
            1.0 / 3.0,
            epsilon = 1e-12
        );
        let noisy = bundled_noisy_dgp();
        assert!(!noisy.is_noiseless());
    }
}

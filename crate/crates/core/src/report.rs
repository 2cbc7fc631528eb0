//! The versioned JSON report emitted by the CLI, plus the per-cell CSV
//! summary. All collections are ordered so identical inputs produce
//! byte-identical output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::Analysis;
use crate::error::{Error, Result};
use crate::infer::{BootstrapSpec, BootstrapSummary, Quantity};
use crate::io::IngestReport;
use crate::model::{
    CompositionSample, Dataset, DecompositionResult, Group, RdFit, RdSpec,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub generator: String,
    pub rd: RdSpec,
    pub composition_sample: CompositionSample,
    pub kappa_threshold: f64,
    pub bootstrap: Option<BootstrapSpec>,
    pub analyses: Vec<AnalysisReport>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One outcome x comparison block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub outcome: String,
    pub baseline_group: String,
    pub comparison_group: String,
    pub ingest: IngestReport,
    pub effects: EffectsReport,
    pub gaps: GapsReport,
    pub composition: Vec<CompositionRow>,
    pub decomposition: DecompositionReport,
    pub targeting: TargetingReport,
    pub plot: PlotReport,
    pub bootstrap: Option<BootstrapMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_ci: Option<[f64; 2]>,
    pub below_coeffs: Vec<f64>,
    pub above_coeffs: Vec<f64>,
    pub n_below: usize,
    pub n_above: usize,
    pub residual_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFitReport {
    pub group: String,
    pub cell: String,
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_ci: Option<[f64; 2]>,
    pub n_below: usize,
    pub n_above: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCellReport {
    pub group: String,
    pub cell: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsReport {
    pub overall: FitReport,
    pub baseline: FitReport,
    pub comparison: FitReport,
    pub by_cell: Vec<CellFitReport>,
    pub missing_cells: Vec<MissingCellReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueCi {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<[f64; 2]>,
}

/// Pooled and plug-in totals, with their discrepancy as a diagnostic. The
/// decomposition identity is exact for the plug-in quantities only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapsReport {
    pub gamma0: ValueCi,
    pub gamma1: ValueCi,
    pub delta_pooled: ValueCi,
    pub delta_plugin: ValueCi,
    pub tau_plugin_baseline: f64,
    pub tau_plugin_comparison: f64,
    /// |pooled tau(w) - plug-in tau(w)| per group, and their max.
    pub aggregation_discrepancy_baseline: f64,
    pub aggregation_discrepancy_comparison: f64,
    pub aggregation_discrepancy_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub cell: String,
    pub pi_baseline: f64,
    pub pi_comparison: f64,
    pub pi_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompCellRow {
    pub cell: String,
    pub delta_x: f64,
    /// The cell effect entering the composition term (non-reference group's).
    pub tau_ref_x: f64,
    pub pi_diff: f64,
    pub composition_product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<[f64; 2]>,
    pub undefined: bool,
    pub threshold: f64,
    /// Surviving bootstrap replicates with a degenerate kappa.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined_replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSideReport {
    pub reference_group: String,
    pub delta: ValueCi,
    pub within: ValueCi,
    pub composition: ValueCi,
    pub kappa: KappaReport,
    pub per_cell: Vec<DecompCellRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub by_comparison_reference: DecompositionSideReport,
    pub by_baseline_reference: DecompositionSideReport,
    /// |delta(ref 1) - delta(ref 0)|.
    pub delta_discrepancy: f64,
    pub within_sign_differs: bool,
    /// |kappa(ref 1) - kappa(ref 0)| when both are defined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_spread: Option<f64>,
    /// Set when the two references lead to a different kappa.
    pub reference_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingRow {
    pub cell: String,
    pub product: f64,
}

/// Cellwise tau(0, x) (pi_1(x) - pi_0(x)) products under the default
/// (comparison) reference; their sum is the composition component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingReport {
    pub reference_group: String,
    pub per_cell: Vec<TargetingRow>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeSeriesPoint {
    pub age: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_mean: Option<f64>,
    pub baseline_n: usize,
    pub baseline_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison_mean: Option<f64>,
    pub comparison_n: usize,
    pub comparison_weight: f64,
    pub baseline_fit: f64,
    pub comparison_fit: f64,
}

/// Data behind an RD figure: per-age weighted outcome means by group plus the
/// fitted per-group lines over the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotReport {
    pub per_age: Vec<AgeSeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMeta {
    pub replicates: usize,
    pub surviving_replicates: usize,
    pub failed_replicates: usize,
    pub kappa_undefined_by_comparison_reference: usize,
    pub kappa_undefined_by_baseline_reference: usize,
    pub seed: u64,
    pub ci_level: f64,
}

fn fit_report(fit: &RdFit, ci: Option<(f64, f64)>) -> FitReport {
    FitReport {
        tau: fit.tau_hat,
        tau_ci: ci.map(|(lo, hi)| [lo, hi]),
        below_coeffs: fit.below_coeffs.clone(),
        above_coeffs: fit.above_coeffs.clone(),
        n_below: fit.n_below,
        n_above: fit.n_above,
        residual_variance: fit.residual_variance,
    }
}

fn value_ci(value: f64, ci: Option<(f64, f64)>) -> ValueCi {
    ValueCi {
        value,
        ci: ci.map(|(lo, hi)| [lo, hi]),
    }
}

fn side_report(
    result: &DecompositionResult,
    dataset: &Dataset,
    summary: Option<&BootstrapSummary>,
    kappa_undefined: Option<usize>,
) -> DecompositionSideReport {
    let reference = result.reference;
    let ci = |q: Quantity| summary.and_then(|s| s.ci(q));
    let per_cell = result
        .per_cell
        .iter()
        .map(|(cell, c)| DecompCellRow {
            cell: dataset.meta.cell_label(*cell).to_string(),
            delta_x: c.delta_x,
            tau_ref_x: c.tau_ref_x,
            pi_diff: c.pi_diff,
            composition_product: c.tau_ref_x * c.pi_diff,
        })
        .collect();
    DecompositionSideReport {
        reference_group: dataset.meta.groups.name(reference).to_string(),
        delta: value_ci(result.delta, ci(Quantity::DeltaPlugin)),
        within: value_ci(result.within_component, ci(Quantity::Within(reference))),
        composition: value_ci(
            result.composition_component,
            ci(Quantity::Composition(reference)),
        ),
        kappa: KappaReport {
            value: result.kappa,
            ci: ci(Quantity::Kappa(reference)).map(|(lo, hi)| [lo, hi]),
            undefined: result.kappa.is_none(),
            threshold: result.kappa_threshold,
            undefined_replicates: kappa_undefined,
        },
        per_cell,
    }
}

fn plot_report(dataset: &Dataset, analysis: &Analysis, spec: &RdSpec) -> PlotReport {
    let mut acc: BTreeMap<i32, [(f64, f64, usize); 2]> = BTreeMap::new();
    for age in spec.window.0..=spec.window.1 {
        acc.insert(age, [(0.0, 0.0, 0); 2]);
    }
    for r in &dataset.records {
        let slot = &mut acc.get_mut(&r.running).expect("age in window")[r.group.index()];
        let w = if spec.weighted { r.weight } else { 1.0 };
        slot.0 += w * r.outcome;
        slot.1 += w;
        slot.2 += 1;
    }
    let per_age = acc
        .into_iter()
        .map(|(age, sides)| {
            let mean = |i: usize| -> Option<f64> {
                let (sum, w, _) = sides[i];
                if w > 0.0 {
                    Some(sum / w)
                } else {
                    None
                }
            };
            AgeSeriesPoint {
                age,
                baseline_mean: mean(0),
                baseline_n: sides[0].2,
                baseline_weight: sides[0].1,
                comparison_mean: mean(1),
                comparison_n: sides[1].2,
                comparison_weight: sides[1].1,
                baseline_fit: analysis.effects.group_fit(Group::Baseline).predict(age, spec),
                comparison_fit: analysis
                    .effects
                    .group_fit(Group::Comparison)
                    .predict(age, spec),
            }
        })
        .collect();
    PlotReport { per_age }
}

/// Assemble the report block for one outcome x comparison analysis.
pub fn analysis_report(
    outcome: &str,
    dataset: &Dataset,
    ingest: IngestReport,
    analysis: &Analysis,
    summary: Option<&BootstrapSummary>,
    spec: &RdSpec,
) -> AnalysisReport {
    let meta = &dataset.meta;
    let ci = |q: Quantity| summary.and_then(|s| s.ci(q));

    let mut by_cell = Vec::new();
    for (&(group, cell), fit) in &analysis.effects.by_group_cell {
        by_cell.push(CellFitReport {
            group: meta.groups.name(group).to_string(),
            cell: meta.cell_label(cell).to_string(),
            tau: fit.tau_hat,
            tau_ci: ci(Quantity::TauCell(group, cell)).map(|(lo, hi)| [lo, hi]),
            n_below: fit.n_below,
            n_above: fit.n_above,
        });
    }
    let missing_cells = analysis
        .effects
        .missing_cells
        .iter()
        .map(|(&(group, cell), reason)| MissingCellReport {
            group: meta.groups.name(group).to_string(),
            cell: meta.cell_label(cell).to_string(),
            reason: reason.clone(),
        })
        .collect();

    let effects = EffectsReport {
        overall: fit_report(&analysis.effects.overall, ci(Quantity::TauOverall)),
        baseline: fit_report(
            analysis.effects.group_fit(Group::Baseline),
            ci(Quantity::TauGroup(Group::Baseline)),
        ),
        comparison: fit_report(
            analysis.effects.group_fit(Group::Comparison),
            ci(Quantity::TauGroup(Group::Comparison)),
        ),
        by_cell,
        missing_cells,
    };

    let disc_b = analysis.aggregation_discrepancy(Group::Baseline);
    let disc_c = analysis.aggregation_discrepancy(Group::Comparison);
    let gaps = GapsReport {
        gamma0: value_ci(analysis.gaps.gamma0, ci(Quantity::Gamma0)),
        gamma1: value_ci(analysis.gaps.gamma1, ci(Quantity::Gamma1)),
        delta_pooled: value_ci(analysis.gaps.delta, ci(Quantity::DeltaPooled)),
        delta_plugin: value_ci(analysis.delta_plugin(), ci(Quantity::DeltaPlugin)),
        tau_plugin_baseline: analysis.tau_plugin[0],
        tau_plugin_comparison: analysis.tau_plugin[1],
        aggregation_discrepancy_baseline: disc_b,
        aggregation_discrepancy_comparison: disc_c,
        aggregation_discrepancy_max: disc_b.max(disc_c),
    };

    let composition = analysis
        .composition
        .cells()
        .map(|cell| CompositionRow {
            cell: meta.cell_label(cell).to_string(),
            pi_baseline: analysis.composition.share(Group::Baseline, cell),
            pi_comparison: analysis.composition.share(Group::Comparison, cell),
            pi_diff: analysis.composition.share_diff(cell),
        })
        .collect();

    let pair = &analysis.decomposition;
    let kappa_undef = |g: Group| summary.map(|s| s.kappa_undefined[g.index()]);
    let by_comparison_reference = side_report(
        &pair.by_comparison,
        dataset,
        summary,
        kappa_undef(Group::Comparison),
    );
    let by_baseline_reference = side_report(
        &pair.by_baseline,
        dataset,
        summary,
        kappa_undef(Group::Baseline),
    );
    let reference_sensitive = match (&pair.by_comparison.kappa, &pair.by_baseline.kappa) {
        (Some(a), Some(b)) => a != b,
        (a, b) => a.is_some() != b.is_some(),
    };
    let decomposition = DecompositionReport {
        by_comparison_reference,
        by_baseline_reference,
        delta_discrepancy: pair.delta_discrepancy,
        within_sign_differs: pair.within_sign_differs,
        kappa_spread: pair.kappa_spread,
        reference_sensitive,
    };

    let targeting_cells: Vec<TargetingRow> = pair
        .by_comparison
        .per_cell
        .iter()
        .map(|(cell, c)| TargetingRow {
            cell: meta.cell_label(*cell).to_string(),
            product: c.tau_ref_x * c.pi_diff,
        })
        .collect();
    let targeting = TargetingReport {
        reference_group: meta.groups.name(Group::Comparison).to_string(),
        total: targeting_cells.iter().map(|r| r.product).sum(),
        per_cell: targeting_cells,
    };

    let bootstrap = summary.map(|s| BootstrapMeta {
        replicates: s.spec.replicates,
        surviving_replicates: s.surviving_replicates,
        failed_replicates: s.failed_replicates,
        kappa_undefined_by_comparison_reference: s.kappa_undefined[Group::Comparison.index()],
        kappa_undefined_by_baseline_reference: s.kappa_undefined[Group::Baseline.index()],
        seed: s.spec.seed,
        ci_level: s.spec.ci_level,
    });

    AnalysisReport {
        outcome: outcome.to_string(),
        baseline_group: meta.groups.baseline.clone(),
        comparison_group: meta.groups.comparison.clone(),
        ingest,
        effects,
        gaps,
        composition,
        decomposition,
        targeting,
        plot: plot_report(dataset, analysis, spec),
        bootstrap,
    }
}

/// Write the optional per-cell CSV summary across all analyses.
pub fn write_cells_csv(report: &Report, path: &std::path::Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let io_err = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    };
    writer
        .write_record([
            "outcome",
            "baseline_group",
            "comparison_group",
            "cell",
            "pi_baseline",
            "pi_comparison",
            "pi_diff",
            "tau_baseline",
            "tau_comparison",
            "delta_x",
            "composition_product",
        ])
        .map_err(io_err)?;
    for a in &report.analyses {
        for row in &a.decomposition.by_comparison_reference.per_cell {
            let comp_row = a.composition.iter().find(|c| c.cell == row.cell);
            let tau_of = |group: &str| {
                a.effects
                    .by_cell
                    .iter()
                    .find(|f| f.cell == row.cell && f.group == group)
                    .map(|f| f.tau.to_string())
                    .unwrap_or_default()
            };
            writer
                .write_record([
                    a.outcome.clone(),
                    a.baseline_group.clone(),
                    a.comparison_group.clone(),
                    row.cell.clone(),
                    comp_row.map(|c| c.pi_baseline.to_string()).unwrap_or_default(),
                    comp_row
                        .map(|c| c.pi_comparison.to_string())
                        .unwrap_or_default(),
                    row.pi_diff.to_string(),
                    tau_of(&a.baseline_group),
                    tau_of(&a.comparison_group),
                    row.delta_x.to_string(),
                    row.composition_product.to_string(),
                ])
                .map_err(io_err)?;
        }
    }
    writer.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

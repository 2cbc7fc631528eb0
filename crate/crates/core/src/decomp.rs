//! Disparity gaps, the change-in-gap identity, the two-term decomposition of
//! that change into within-cell and composition components, and kappa.
//!
//! The causal reading of these quantities rests on assumptions the data
//! cannot certify: treatment assignment independent of potential outcomes,
//! group, and cell (which the cutoff design approximates locally), and
//! overlap within every (group, cell) stratum. The functions here enforce
//! only the arithmetic preconditions; establishing the design assumptions is
//! the caller's problem. Nothing here speaks to counterfactually moving
//! people across cells, which is not identified without more assumptions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{
    CellContribution, CellId, CompositionSample, CompositionTable, DatasetMeta,
    DecompositionResult, EffectTable, GapEstimate, Group, MicroRecord, RdSpec,
    KAPPA_DEGENERACY_THRESHOLD,
};

/// Weighted cell shares per group over the chosen sample.
///
/// Shares cover the full cell alphabet (zero where a group has no weight) and
/// sum to one within each group.
pub fn estimate_composition(
    records: &[MicroRecord],
    meta: &DatasetMeta,
    spec: &RdSpec,
    sample: CompositionSample,
) -> Result<CompositionTable> {
    let n_cells = meta.cells.len();
    let mut cell_weight = vec![[0.0f64; 2]; n_cells];
    let mut group_weight = [0.0f64; 2];

    for r in records {
        let keep = match sample {
            CompositionSample::PreCutoff => r.running < spec.cutoff,
            CompositionSample::PostCutoff => r.running > spec.cutoff,
            CompositionSample::All => true,
        };
        if !keep {
            continue;
        }
        let w = if spec.weighted { r.weight } else { 1.0 };
        cell_weight[r.cell.0][r.group.index()] += w;
        group_weight[r.group.index()] += w;
    }

    for group in Group::BOTH {
        if group_weight[group.index()] <= 0.0 {
            return Err(Error::EmptyGroup(meta.groups.name(group).to_string()));
        }
    }

    let mut shares = BTreeMap::new();
    for (idx, weights) in cell_weight.iter().enumerate() {
        for group in Group::BOTH {
            shares.insert(
                (group, CellId(idx)),
                weights[group.index()] / group_weight[group.index()],
            );
        }
    }

    Ok(CompositionTable {
        shares,
        sample,
        n_cells,
    })
}

/// delta = tau(1) - tau(0): the change in the disparity gap equals the
/// difference in group treatment effects.
pub fn change_in_gap(tau1: f64, tau0: f64) -> f64 {
    tau1 - tau0
}

/// Side-limit disparity gaps at the cutoff from the two per-group fits.
pub fn gaps_from_fits(effects: &EffectTable) -> GapEstimate {
    let baseline = effects.group_fit(Group::Baseline);
    let comparison = effects.group_fit(Group::Comparison);
    let gamma0 = comparison.below_coeffs[0] - baseline.below_coeffs[0];
    let gamma1 = comparison.above_coeffs[0] - baseline.above_coeffs[0];
    GapEstimate {
        gamma0,
        gamma1,
        delta: gamma1 - gamma0,
    }
}

/// The cell-weighted reconstruction sum_x tau(w, x) pi_w(x) of a group effect.
///
/// Requires a fitted effect for every cell where the group has positive share.
pub fn plugin_aggregate(
    effects: &EffectTable,
    comp: &CompositionTable,
    meta: &DatasetMeta,
    group: Group,
) -> Result<f64> {
    check_alphabets(effects, comp)?;
    let mut total = 0.0;
    for cell in comp.cells() {
        let share = comp.share(group, cell);
        if share == 0.0 {
            continue;
        }
        total += required_tau(effects, meta, group, cell)? * share;
    }
    Ok(total)
}

fn check_alphabets(effects: &EffectTable, comp: &CompositionTable) -> Result<()> {
    if effects.n_cells != comp.n_cells {
        return Err(Error::AlphabetMismatch(format!(
            "effects cover {} cell(s), composition covers {}",
            effects.n_cells, comp.n_cells
        )));
    }
    Ok(())
}

fn required_tau(
    effects: &EffectTable,
    meta: &DatasetMeta,
    group: Group,
    cell: CellId,
) -> Result<f64> {
    match effects.cell_fit(group, cell) {
        Some(fit) => Ok(fit.tau_hat),
        None => {
            let reason = effects
                .missing_cells
                .get(&(group, cell))
                .cloned()
                .unwrap_or_else(|| "stratum was never fitted".to_string());
            Err(Error::MissingCellFit {
                cell: meta.cell_label(cell).to_string(),
                group: meta.groups.name(group).to_string(),
                reason,
            })
        }
    }
}

/// Decompose the plug-in change in gap under the given reference group.
///
/// With reference w = 1 the within term is sum_x delta(x) pi_1(x) and the
/// composition term is sum_x tau(0, x) (pi_1(x) - pi_0(x)); reference w = 0
/// mirrors the weights. Cells where the reference share is zero and the share
/// difference is exactly zero contribute nothing and are skipped.
pub fn decompose(
    effects: &EffectTable,
    comp: &CompositionTable,
    reference: Group,
) -> Result<DecompositionResult> {
    decompose_with_threshold(effects, comp, reference, KAPPA_DEGENERACY_THRESHOLD)
}

pub fn decompose_with_threshold(
    effects: &EffectTable,
    comp: &CompositionTable,
    reference: Group,
    kappa_threshold: f64,
) -> Result<DecompositionResult> {
    check_alphabets(effects, comp)?;
    // Labels for decent error text come from the effects' own strata; the
    // caller passes meta-grounded labels through `decompose_labeled` paths.
    decompose_inner(effects, comp, reference, kappa_threshold, None)
}

/// As `decompose`, with dataset metadata for readable error messages.
pub fn decompose_labeled(
    effects: &EffectTable,
    comp: &CompositionTable,
    meta: &DatasetMeta,
    reference: Group,
    kappa_threshold: f64,
) -> Result<DecompositionResult> {
    check_alphabets(effects, comp)?;
    decompose_inner(effects, comp, reference, kappa_threshold, Some(meta))
}

fn decompose_inner(
    effects: &EffectTable,
    comp: &CompositionTable,
    reference: Group,
    kappa_threshold: f64,
    meta: Option<&DatasetMeta>,
) -> Result<DecompositionResult> {
    let fetch = |group: Group, cell: CellId| -> Result<f64> {
        match effects.cell_fit(group, cell) {
            Some(fit) => Ok(fit.tau_hat),
            None => {
                let reason = effects
                    .missing_cells
                    .get(&(group, cell))
                    .cloned()
                    .unwrap_or_else(|| "stratum was never fitted".to_string());
                let (cell_name, group_name) = match meta {
                    Some(m) => (
                        m.cell_label(cell).to_string(),
                        m.groups.name(group).to_string(),
                    ),
                    None => (format!("#{}", cell.0), group.to_string()),
                };
                Err(Error::MissingCellFit {
                    cell: cell_name,
                    group: group_name,
                    reason,
                })
            }
        }
    };

    let mut per_cell = BTreeMap::new();
    let mut delta = 0.0;
    let mut within = 0.0;
    let mut composition = 0.0;

    for cell in comp.cells() {
        let pi1 = comp.share(Group::Comparison, cell);
        let pi0 = comp.share(Group::Baseline, cell);
        let pi_diff = pi1 - pi0;
        let pi_ref = match reference {
            Group::Comparison => pi1,
            Group::Baseline => pi0,
        };
        if pi_ref == 0.0 && pi_diff == 0.0 {
            continue;
        }

        let tau1 = fetch(Group::Comparison, cell)?;
        let tau0 = fetch(Group::Baseline, cell)?;
        let delta_x = tau1 - tau0;
        let tau_ref_x = match reference {
            Group::Comparison => tau0,
            Group::Baseline => tau1,
        };

        delta += tau1 * pi1 - tau0 * pi0;
        within += delta_x * pi_ref;
        composition += tau_ref_x * pi_diff;

        per_cell.insert(
            cell,
            CellContribution {
                delta_x,
                tau_ref_x,
                pi_diff,
            },
        );
    }

    Ok(DecompositionResult {
        reference,
        delta,
        per_cell,
        within_component: within,
        composition_component: composition,
        kappa: kappa_ratio(within, delta, kappa_threshold),
        kappa_threshold,
    })
}

/// within / delta, or None when |delta| does not exceed the threshold.
/// Values outside [0, 1] are returned as-is.
pub fn kappa_ratio(within: f64, delta: f64, threshold: f64) -> Option<f64> {
    if delta.abs() > threshold {
        Some(within / delta)
    } else {
        None
    }
}

/// Both decompositions plus agreement flags.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecompositionPair {
    /// Reference w = 1 (the default presentation).
    pub by_comparison: DecompositionResult,
    /// Reference w = 0 (the mirror weighting).
    pub by_baseline: DecompositionResult,
    /// |delta(ref 1) - delta(ref 0)|; zero up to rounding by construction.
    pub delta_discrepancy: f64,
    /// Set when the within component changes sign across references.
    pub within_sign_differs: bool,
    /// |kappa(ref 1) - kappa(ref 0)| when both are defined.
    pub kappa_spread: Option<f64>,
}

pub fn decompose_both_references(
    effects: &EffectTable,
    comp: &CompositionTable,
) -> Result<DecompositionPair> {
    decompose_both_with_threshold(effects, comp, KAPPA_DEGENERACY_THRESHOLD)
}

pub fn decompose_both_with_threshold(
    effects: &EffectTable,
    comp: &CompositionTable,
    kappa_threshold: f64,
) -> Result<DecompositionPair> {
    let by_comparison = decompose_with_threshold(effects, comp, Group::Comparison, kappa_threshold)?;
    let by_baseline = decompose_with_threshold(effects, comp, Group::Baseline, kappa_threshold)?;
    Ok(pair_from(by_comparison, by_baseline))
}

pub(crate) fn pair_from(
    by_comparison: DecompositionResult,
    by_baseline: DecompositionResult,
) -> DecompositionPair {
    let delta_discrepancy = (by_comparison.delta - by_baseline.delta).abs();
    let within_sign_differs = by_comparison.within_component != 0.0
        && by_baseline.within_component != 0.0
        && by_comparison.within_component.signum() != by_baseline.within_component.signum();
    let kappa_spread = match (by_comparison.kappa, by_baseline.kappa) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    DecompositionPair {
        by_comparison,
        by_baseline,
        delta_discrepancy,
        within_sign_differs,
        kappa_spread,
    }
}

/// The targeting diagnostic: each cell's tau(other(ref), x) (pi_1(x) - pi_0(x))
/// product, plus their sum (which equals the composition component).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompositionCovariance {
    pub reference: Group,
    pub products: BTreeMap<CellId, f64>,
    pub total: f64,
}

pub fn composition_covariance(
    effects: &EffectTable,
    comp: &CompositionTable,
    reference: Group,
) -> Result<CompositionCovariance> {
    let result = decompose(effects, comp, reference)?;
    let products: BTreeMap<CellId, f64> = result
        .per_cell
        .iter()
        .map(|(cell, c)| (*cell, c.tau_ref_x * c.pi_diff))
        .collect();
    let total = products.values().sum();
    Ok(CompositionCovariance {
        reference,
        products,
        total,
    })
}

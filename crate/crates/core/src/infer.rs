//! Bootstrap inference for the estimated effects, gaps, decomposition
//! components, and kappa, with optional whole-cluster resampling by location.
//!
//! Replicate r draws its RNG from stream r of a ChaCha generator seeded with
//! the configured seed, so results are identical for any thread count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, Analysis, AnalysisOptions};
use crate::error::{Error, Result};
use crate::model::{CellId, DatasetMeta, Group, MicroRecord, RdSpec};

/// Cluster structure of the resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Clustering {
    /// Records are resampled independently with replacement.
    #[default]
    None,
    /// Whole locations are redrawn with replacement, keeping all records of a
    /// drawn location; the cluster count per replicate equals the original.
    ByLocation,
}

/// Confidence interval construction. Percentile only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    #[default]
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub cluster: Clustering,
    pub ci_level: f64,
    #[serde(default)]
    pub method: CiMethod,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            replicates: 1000,
            seed: 0,
            cluster: Clustering::None,
            ci_level: 0.95,
            method: CiMethod::Percentile,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config(format!(
                "bootstrap needs at least 2 replicates, got {}",
                self.replicates
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

/// A bootstrapped scalar. References key the decomposition quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Quantity {
    TauOverall,
    TauGroup(Group),
    TauCell(Group, CellId),
    Gamma0,
    Gamma1,
    /// tau(1) - tau(0) from the pooled per-group fits.
    DeltaPooled,
    /// The decomposition's exact total.
    DeltaPlugin,
    Within(Group),
    Composition(Group),
    Kappa(Group),
}

impl Quantity {
    /// Pull this quantity out of one pipeline result. `None` marks a value
    /// that does not exist in this replicate (a missing cell fit, or kappa at
    /// a degenerate delta).
    fn extract(self, analysis: &Analysis) -> Option<f64> {
        match self {
            Quantity::TauOverall => Some(analysis.effects.overall.tau_hat),
            Quantity::TauGroup(g) => Some(analysis.effects.group_fit(g).tau_hat),
            Quantity::TauCell(g, c) => analysis.effects.cell_fit(g, c).map(|f| f.tau_hat),
            Quantity::Gamma0 => Some(analysis.gaps.gamma0),
            Quantity::Gamma1 => Some(analysis.gaps.gamma1),
            Quantity::DeltaPooled => Some(analysis.gaps.delta),
            Quantity::DeltaPlugin => Some(analysis.delta_plugin()),
            Quantity::Within(r) => Some(result_for(analysis, r).within_component),
            Quantity::Composition(r) => Some(result_for(analysis, r).composition_component),
            Quantity::Kappa(r) => result_for(analysis, r).kappa,
        }
    }

    fn all_for(analysis: &Analysis) -> Vec<Quantity> {
        let mut list = vec![
            Quantity::TauOverall,
            Quantity::TauGroup(Group::Baseline),
            Quantity::TauGroup(Group::Comparison),
            Quantity::Gamma0,
            Quantity::Gamma1,
            Quantity::DeltaPooled,
            Quantity::DeltaPlugin,
        ];
        for group in Group::BOTH {
            for cell in 0..analysis.effects.n_cells {
                list.push(Quantity::TauCell(group, CellId(cell)));
            }
        }
        for reference in Group::BOTH {
            list.push(Quantity::Within(reference));
            list.push(Quantity::Composition(reference));
            list.push(Quantity::Kappa(reference));
        }
        list
    }
}

fn result_for(analysis: &Analysis, reference: Group) -> &crate::model::DecompositionResult {
    match reference {
        Group::Comparison => &analysis.decomposition.by_comparison,
        Group::Baseline => &analysis.decomposition.by_baseline,
    }
}

/// Point estimate, percentile interval, and the replicate values behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantitySummary {
    pub point: Option<f64>,
    /// None when fewer than two replicate values exist for this quantity.
    pub ci: Option<(f64, f64)>,
    pub n_values: usize,
    /// Surviving replicate values, sorted ascending.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub spec: BootstrapSpec,
    /// The non-bootstrap pipeline result on the original records.
    pub point: Analysis,
    pub quantities: BTreeMap<Quantity, QuantitySummary>,
    /// Replicates whose pipeline failed (e.g. a required stratum vanished).
    pub failed_replicates: usize,
    pub surviving_replicates: usize,
    /// Surviving replicates whose kappa was degenerate, per reference group.
    pub kappa_undefined: [usize; 2],
}

impl BootstrapSummary {
    pub fn ci(&self, quantity: Quantity) -> Option<(f64, f64)> {
        self.quantities.get(&quantity).and_then(|q| q.ci)
    }
}

/// Nearest-rank empirical quantile: the ceil(p*m)-th order statistic.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let rank = (p * m as f64).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

fn percentile_ci(sorted: &[f64], level: f64) -> Option<(f64, f64)> {
    if sorted.len() < 2 {
        return None;
    }
    let alpha = 1.0 - level;
    Some((
        nearest_rank(sorted, alpha / 2.0),
        nearest_rank(sorted, 1.0 - alpha / 2.0),
    ))
}

fn resample_records(
    records: &[MicroRecord],
    clusters: Option<&[Vec<usize>]>,
    rng: &mut ChaCha8Rng,
) -> Vec<MicroRecord> {
    match clusters {
        None => {
            let n = records.len();
            (0..n).map(|_| records[rng.random_range(0..n)]).collect()
        }
        Some(clusters) => {
            let k = clusters.len();
            let mut out = Vec::with_capacity(records.len());
            for _ in 0..k {
                let drawn = &clusters[rng.random_range(0..k)];
                out.extend(drawn.iter().map(|&i| records[i]));
            }
            out
        }
    }
}

/// Run the bootstrap: rerun the full pipeline on each resample and collect
/// percentile intervals for every tracked quantity.
pub fn bootstrap(
    records: &[MicroRecord],
    meta: &DatasetMeta,
    spec: &RdSpec,
    opts: &AnalysisOptions,
    boot: &BootstrapSpec,
) -> Result<BootstrapSummary> {
    boot.validate()?;
    if records.is_empty() {
        return Err(Error::Inference("no records to resample".to_string()));
    }

    let point = analyze(records, meta, spec, opts)?;

    let clusters: Option<Vec<Vec<usize>>> = match boot.cluster {
        Clustering::None => None,
        Clustering::ByLocation => {
            let mut by_location: BTreeMap<crate::model::LocationId, Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                by_location.entry(r.location).or_default().push(i);
            }
            if by_location.len() < 2 {
                return Err(Error::Inference(format!(
                    "cluster bootstrap needs at least 2 locations, found {}",
                    by_location.len()
                )));
            }
            Some(by_location.into_values().collect())
        }
    };

    let replicates: Vec<Option<Analysis>> = (0..boot.replicates)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(boot.seed);
            rng.set_stream(index as u64 + 1);
            let resampled = resample_records(records, clusters.as_deref(), &mut rng);
            analyze(&resampled, meta, spec, opts).ok()
        })
        .collect();

    let failed_replicates = replicates.iter().filter(|r| r.is_none()).count();
    let surviving_replicates = boot.replicates - failed_replicates;
    if surviving_replicates < 2 {
        return Err(Error::Inference(format!(
            "only {surviving_replicates} of {} replicates survived",
            boot.replicates
        )));
    }

    let mut kappa_undefined = [0usize; 2];
    for analysis in replicates.iter().flatten() {
        for reference in Group::BOTH {
            if result_for(analysis, reference).kappa.is_none() {
                kappa_undefined[reference.index()] += 1;
            }
        }
    }

    let mut quantities = BTreeMap::new();
    for quantity in Quantity::all_for(&point) {
        let mut values: Vec<f64> = replicates
            .iter()
            .flatten()
            .filter_map(|a| quantity.extract(a))
            .collect();
        values.sort_by(|a, b| a.total_cmp(b));
        let ci = percentile_ci(&values, boot.ci_level);
        quantities.insert(
            quantity,
            QuantitySummary {
                point: quantity.extract(&point),
                ci,
                n_values: values.len(),
                values,
            },
        );
    }

    Ok(BootstrapSummary {
        spec: boot.clone(),
        point,
        quantities,
        failed_replicates,
        surviving_replicates,
        kappa_undefined,
    })
}

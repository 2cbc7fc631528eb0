//! Synthetic populations with fully known ground truth for every estimand.
//!
//! Each (group, cell) stratum follows a piecewise polynomial in centered age:
//! the untreated side is `baseline_coeffs`, the treated side is the baseline
//! intercept plus `effect` plus the `above_coeffs` trend, optionally with
//! Gaussian noise. Because the outcome model matches the estimator's
//! functional form exactly, a noiseless population must be recovered to
//! numerical precision, which is what the validation command checks.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Alphabet, CellId, Dataset, DatasetMeta, Group, GroupNames, LocationId, MicroRecord, RdSpec,
    TreatedSide, KAPPA_DEGENERACY_THRESHOLD,
};

/// Records per age for one stratum: a single constant or an explicit map
/// keyed by age (ages absent from the map produce no records).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CountRule {
    Constant(u32),
    PerAge(BTreeMap<String, u32>),
}

impl CountRule {
    fn count_at(&self, age: i32) -> Result<u32> {
        match self {
            CountRule::Constant(c) => Ok(*c),
            CountRule::PerAge(map) => Ok(map.get(&age.to_string()).copied().unwrap_or(0)),
        }
    }
}

/// One (group, cell) stratum of the data generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDgp {
    pub group: Group,
    pub cell: String,
    pub count_per_age: CountRule,
    /// Polynomial in (age - cutoff) for the untreated side; index 0 is the
    /// intercept at the cutoff.
    pub baseline_coeffs: Vec<f64>,
    /// Treated-side trend; index p is the coefficient on (age - cutoff)^(p+1).
    #[serde(default)]
    pub above_coeffs: Vec<f64>,
    /// Treated-side intercept shift: the stratum's true discontinuity.
    pub effect: f64,
    #[serde(default)]
    pub noise_sd: f64,
}

impl CellDgp {
    fn outcome_mean(&self, centered: f64, treated: bool) -> f64 {
        if treated {
            let trend = self
                .above_coeffs
                .iter()
                .rev()
                .fold(0.0, |acc, &c| (acc + c) * centered);
            self.baseline_coeffs[0] + self.effect + trend
        } else {
            self.baseline_coeffs
                .iter()
                .rev()
                .fold(0.0, |acc, &c| acc * centered + c)
        }
    }

    fn degree(&self) -> usize {
        (self.baseline_coeffs.len().saturating_sub(1)).max(self.above_coeffs.len())
    }
}

fn default_clusters() -> usize {
    10
}

fn default_group_names() -> GroupNames {
    GroupNames {
        baseline: "group0".to_string(),
        comparison: "group1".to_string(),
    }
}

/// Full specification of a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub cutoff: i32,
    pub window: (i32, i32),
    pub seed: u64,
    #[serde(default)]
    pub treated_side: TreatedSide,
    /// Number of synthetic clusters; records are assigned round-robin.
    #[serde(default = "default_clusters")]
    pub location_clusters: usize,
    #[serde(default = "default_group_names")]
    pub group_names: GroupNames,
    pub cells: Vec<CellDgp>,
}

impl DgpSpec {
    /// The RD spec under which this process is exactly recoverable.
    pub fn rd_spec(&self) -> RdSpec {
        RdSpec {
            cutoff: self.cutoff,
            window: self.window,
            poly_order: self.max_degree().max(1),
            treated_side: self.treated_side,
            donut: 0,
            weighted: true,
        }
    }

    pub fn max_degree(&self) -> usize {
        self.cells.iter().map(CellDgp::degree).max().unwrap_or(0)
    }

    pub fn is_noiseless(&self) -> bool {
        self.cells.iter().all(|c| c.noise_sd == 0.0)
    }

    fn is_treated(&self, age: i32) -> bool {
        match self.treated_side {
            TreatedSide::Above => age > self.cutoff,
            TreatedSide::AtOrAbove => age >= self.cutoff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("dgp has no cells".to_string()));
        }
        if self.location_clusters == 0 {
            return Err(Error::Config("location_clusters must be >= 1".to_string()));
        }
        self.rd_spec().validate()?;
        let mut seen = std::collections::BTreeSet::new();
        let mut groups_present = [false; 2];
        for c in &self.cells {
            if c.baseline_coeffs.is_empty() {
                return Err(Error::Config(format!(
                    "cell '{}' needs at least an intercept in baseline_coeffs",
                    c.cell
                )));
            }
            if c.noise_sd < 0.0 {
                return Err(Error::Config(format!(
                    "cell '{}' has negative noise_sd",
                    c.cell
                )));
            }
            if let CountRule::Constant(0) = c.count_per_age {
                return Err(Error::Config(format!(
                    "cell '{}' has zero records per age",
                    c.cell
                )));
            }
            if let CountRule::PerAge(map) = &c.count_per_age {
                for (age, count) in map {
                    let parsed: i32 = age.parse().map_err(|_| {
                        Error::Config(format!("cell '{}': bad age key '{age}'", c.cell))
                    })?;
                    if parsed < self.window.0 || parsed > self.window.1 {
                        return Err(Error::Config(format!(
                            "cell '{}': age {parsed} outside the window",
                            c.cell
                        )));
                    }
                    if *count == 0 {
                        return Err(Error::Config(format!(
                            "cell '{}': age {parsed} has zero count; omit it instead",
                            c.cell
                        )));
                    }
                }
            }
            if !seen.insert((c.group, c.cell.clone())) {
                return Err(Error::Config(format!(
                    "duplicate stratum (group {}, cell '{}')",
                    c.group, c.cell
                )));
            }
            groups_present[c.group.index()] = true;
        }
        if !(groups_present[0] && groups_present[1]) {
            return Err(Error::Config(
                "dgp must include cells for both groups".to_string(),
            ));
        }
        Ok(())
    }

    fn location_labels(&self) -> Vec<String> {
        let width = (self.location_clusters.max(2) - 1).to_string().len();
        (0..self.location_clusters)
            .map(|i| format!("c{i:0width$}"))
            .collect()
    }
}

/// Generate the population. Deterministic given the spec (including its seed).
pub fn make_population(dgp: &DgpSpec) -> Result<Dataset> {
    dgp.validate()?;

    let cells = Alphabet::from_labels(dgp.cells.iter().map(|c| c.cell.clone()));
    let locations = Alphabet::from_labels(dgp.location_labels());
    let meta = DatasetMeta {
        cells,
        locations,
        groups: dgp.group_names.clone(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(dgp.seed);
    let mut records = Vec::new();
    let mut record_index = 0usize;
    for cell in &dgp.cells {
        let cell_id = CellId(meta.cells.id_of(&cell.cell).expect("interned"));
        for age in dgp.window.0..=dgp.window.1 {
            let treated = dgp.is_treated(age);
            let centered = (age - dgp.cutoff) as f64;
            let mean = cell.outcome_mean(centered, treated);
            for _ in 0..cell.count_per_age.count_at(age)? {
                let noise: f64 = if cell.noise_sd > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    cell.noise_sd * z
                } else {
                    0.0
                };
                let location = LocationId(record_index % dgp.location_clusters);
                records.push(MicroRecord {
                    outcome: mean + noise,
                    group: cell.group,
                    cell: cell_id,
                    running: age,
                    location,
                    weight: 1.0,
                });
                record_index += 1;
            }
        }
    }

    Ok(Dataset { records, meta })
}

/// Ground-truth decomposition quantities under one reference group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTruth {
    pub within: f64,
    pub composition: f64,
    pub kappa: Option<f64>,
}

/// Per-cell ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub cell: String,
    pub tau_baseline: f64,
    pub tau_comparison: f64,
    pub delta_x: f64,
    pub pi_baseline: f64,
    pub pi_comparison: f64,
}

/// Every estimand of the pipeline, evaluated analytically from the process
/// definition. No simulation is involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub tau_baseline: f64,
    pub tau_comparison: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub delta: f64,
    pub cells: Vec<CellTruth>,
    pub by_comparison_reference: ReferenceTruth,
    pub by_baseline_reference: ReferenceTruth,
}

impl TruthTable {
    pub fn cell(&self, label: &str) -> Option<&CellTruth> {
        self.cells.iter().find(|c| c.cell == label)
    }

    pub fn tau_group(&self, group: Group) -> f64 {
        match group {
            Group::Baseline => self.tau_baseline,
            Group::Comparison => self.tau_comparison,
        }
    }

    pub fn reference(&self, group: Group) -> &ReferenceTruth {
        match group {
            Group::Baseline => &self.by_baseline_reference,
            Group::Comparison => &self.by_comparison_reference,
        }
    }
}

/// Evaluate the oracle. Shares use the estimator's default composition rule
/// (records strictly below the cutoff); group effects are the cell-weighted
/// plug-in aggregates. Requires every cell to be defined for both groups.
pub fn population_truth(dgp: &DgpSpec) -> Result<TruthTable> {
    dgp.validate()?;

    let mut labels: Vec<String> = dgp.cells.iter().map(|c| c.cell.clone()).collect();
    labels.sort();
    labels.dedup();

    let mut by_key: BTreeMap<(Group, &str), &CellDgp> = BTreeMap::new();
    for c in &dgp.cells {
        by_key.insert((c.group, c.cell.as_str()), c);
    }

    // Pre-cutoff record counts per stratum, honoring per-age maps.
    let mut pre_counts: BTreeMap<(Group, &str), f64> = BTreeMap::new();
    let mut group_totals = [0.0f64; 2];
    for (&(group, label), cell) in &by_key {
        let mut total = 0u64;
        for age in dgp.window.0..dgp.cutoff {
            total += u64::from(cell.count_per_age.count_at(age)?);
        }
        pre_counts.insert((group, label), total as f64);
        group_totals[group.index()] += total as f64;
    }
    for group in Group::BOTH {
        if group_totals[group.index()] <= 0.0 {
            return Err(Error::EmptyGroup(dgp.group_names.name(group).to_string()));
        }
    }

    let mut cells = Vec::with_capacity(labels.len());
    let mut tau_group = [0.0f64; 2];
    let mut gamma0 = 0.0f64;
    let mut within = [0.0f64; 2];
    let mut composition = [0.0f64; 2];
    for label in &labels {
        let mut stratum = [None, None];
        for group in Group::BOTH {
            stratum[group.index()] = by_key.get(&(group, label.as_str())).copied();
        }
        let (Some(base), Some(comp)) = (stratum[0], stratum[1]) else {
            return Err(Error::Config(format!(
                "oracle needs cell '{label}' defined for both groups"
            )));
        };
        let pi0 = pre_counts[&(Group::Baseline, label.as_str())] / group_totals[0];
        let pi1 = pre_counts[&(Group::Comparison, label.as_str())] / group_totals[1];
        let delta_x = comp.effect - base.effect;

        tau_group[0] += base.effect * pi0;
        tau_group[1] += comp.effect * pi1;
        gamma0 += comp.baseline_coeffs[0] * pi1 - base.baseline_coeffs[0] * pi0;
        within[Group::Comparison.index()] += delta_x * pi1;
        within[Group::Baseline.index()] += delta_x * pi0;
        composition[Group::Comparison.index()] += base.effect * (pi1 - pi0);
        composition[Group::Baseline.index()] += comp.effect * (pi1 - pi0);

        cells.push(CellTruth {
            cell: label.clone(),
            tau_baseline: base.effect,
            tau_comparison: comp.effect,
            delta_x,
            pi_baseline: pi0,
            pi_comparison: pi1,
        });
    }

    let delta = tau_group[1] - tau_group[0];
    let reference_truth = |g: Group| ReferenceTruth {
        within: within[g.index()],
        composition: composition[g.index()],
        kappa: crate::decomp::kappa_ratio(within[g.index()], delta, KAPPA_DEGENERACY_THRESHOLD),
    };

    Ok(TruthTable {
        tau_baseline: tau_group[0],
        tau_comparison: tau_group[1],
        gamma0,
        gamma1: gamma0 + delta,
        delta,
        cells,
        by_comparison_reference: reference_truth(Group::Comparison),
        by_baseline_reference: reference_truth(Group::Baseline),
    })
}

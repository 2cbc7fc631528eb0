//! Core domain types: survey records, RD configuration, fitted effects,
//! composition shares, and decomposition results.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary group indicator W. `Baseline` is w = 0, `Comparison` is w = 1;
/// disparity gaps are comparison-minus-baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Baseline,
    Comparison,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::Baseline, Group::Comparison];

    pub fn index(self) -> usize {
        match self {
            Group::Baseline => 0,
            Group::Comparison => 1,
        }
    }

    pub fn code(self) -> u8 {
        self.index() as u8
    }

    pub fn from_code(code: u8) -> Result<Group> {
        match code {
            0 => Ok(Group::Baseline),
            1 => Ok(Group::Comparison),
            other => Err(Error::Config(format!(
                "group code must be 0 or 1, got {other}"
            ))),
        }
    }

    pub fn other(self) -> Group {
        match self {
            Group::Baseline => Group::Comparison,
            Group::Comparison => Group::Baseline,
        }
    }
}

impl Serialize for Group {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        Group::from_code(code).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Index of a covariate cell into the dataset's cell alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId(pub usize);

/// Index of a cluster location into the dataset's location alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationId(pub usize);

/// A finite, lexicographically ordered label set with id lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    labels: Vec<String>,
}

impl Alphabet {
    /// Build from labels; labels are deduplicated and sorted so that ids are
    /// independent of encounter order.
    pub fn from_labels<I: IntoIterator<Item = String>>(labels: I) -> Alphabet {
        let mut labels: Vec<String> = labels.into_iter().collect();
        labels.sort();
        labels.dedup();
        Alphabet { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> {
        0..self.labels.len()
    }
}

/// Human-readable names for the two groups of an analysis run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupNames {
    pub baseline: String,
    pub comparison: String,
}

impl GroupNames {
    pub fn name(&self, group: Group) -> &str {
        match group {
            Group::Baseline => &self.baseline,
            Group::Comparison => &self.comparison,
        }
    }
}

/// Label metadata shared by all records of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub cells: Alphabet,
    pub locations: Alphabet,
    pub groups: GroupNames,
}

impl DatasetMeta {
    pub fn cell_label(&self, id: CellId) -> &str {
        self.cells.label(id.0)
    }

    pub fn location_label(&self, id: LocationId) -> &str {
        self.locations.label(id.0)
    }

    /// Render a stratum key for error messages.
    pub fn stratum_name(&self, stratum: &Stratum) -> String {
        match stratum {
            Stratum::Overall => "overall".to_string(),
            Stratum::Group(g) => format!("group '{}'", self.groups.name(*g)),
            Stratum::GroupCell(g, c) => format!(
                "group '{}' x cell '{}'",
                self.groups.name(*g),
                self.cell_label(*c)
            ),
        }
    }
}

/// One survey respondent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroRecord {
    /// Outcome value in the units of the outcome variable (e.g. a 0/1 indicator).
    pub outcome: f64,
    /// Binary group label W.
    pub group: Group,
    /// Covariate cell X, interned against the dataset's cell alphabet.
    pub cell: CellId,
    /// Integer running variable (age in whole years).
    pub running: i32,
    /// Cluster identifier used by the cluster bootstrap.
    pub location: LocationId,
    /// Positive survey weight.
    pub weight: f64,
}

/// Records plus their label metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<MicroRecord>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Check record invariants against an RD spec: positive finite weights,
    /// finite outcomes, running inside the window, ids inside the alphabets.
    pub fn validate(&self, spec: &RdSpec) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if !r.weight.is_finite() || r.weight <= 0.0 {
                return Err(Error::RowValue {
                    line: i as u64 + 1,
                    message: format!("weight must be a positive finite number, got {}", r.weight),
                });
            }
            if !r.outcome.is_finite() {
                return Err(Error::RowValue {
                    line: i as u64 + 1,
                    message: format!("outcome must be finite, got {}", r.outcome),
                });
            }
            if !spec.in_window(r.running) {
                return Err(Error::RowValue {
                    line: i as u64 + 1,
                    message: format!(
                        "running value {} outside window [{}, {}]",
                        r.running, spec.window.0, spec.window.1
                    ),
                });
            }
            if r.cell.0 >= self.meta.cells.len() || r.location.0 >= self.meta.locations.len() {
                return Err(Error::RowValue {
                    line: i as u64 + 1,
                    message: "cell or location id outside the declared alphabet".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Which side of the cutoff counts as treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TreatedSide {
    /// Treated iff running > cutoff (the default; the cutoff itself is untreated).
    #[default]
    Above,
    /// Treated iff running >= cutoff.
    AtOrAbove,
}

/// Configuration of the RD design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RdSpec {
    /// Eligibility cutoff (65 in the motivating application).
    pub cutoff: i32,
    /// Inclusive analysis window for the running variable.
    pub window: (i32, i32),
    /// Polynomial order of the trend on each side of the cutoff.
    pub poly_order: usize,
    /// Rule deciding which side of the cutoff is treated.
    pub treated_side: TreatedSide,
    /// Radius of running values excluded around the cutoff: records with
    /// |running - cutoff| < donut are dropped before fitting, so donut = 1
    /// drops exactly the cutoff age and donut = 0 drops nothing.
    pub donut: u32,
    /// Whether estimators consume survey weights (false forces weight = 1).
    pub weighted: bool,
}

impl Default for RdSpec {
    fn default() -> Self {
        RdSpec {
            cutoff: 65,
            window: (51, 79),
            poly_order: 1,
            treated_side: TreatedSide::Above,
            donut: 0,
            weighted: true,
        }
    }
}

impl RdSpec {
    pub fn in_window(&self, running: i32) -> bool {
        running >= self.window.0 && running <= self.window.1
    }

    pub fn in_donut(&self, running: i32) -> bool {
        (running - self.cutoff).unsigned_abs() < self.donut
    }

    pub fn is_treated(&self, running: i32) -> bool {
        match self.treated_side {
            TreatedSide::Above => running > self.cutoff,
            TreatedSide::AtOrAbove => running >= self.cutoff,
        }
    }

    /// Structural invariants: the cutoff is strictly inside the window and the
    /// window retains at least poly_order + 1 distinct running values on each
    /// side after donut exclusion.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.window;
        if lo > hi {
            return Err(Error::Config(format!("window [{lo}, {hi}] is empty")));
        }
        if self.cutoff <= lo || self.cutoff >= hi {
            return Err(Error::Config(format!(
                "cutoff {} must lie strictly inside the window [{lo}, {hi}]",
                self.cutoff
            )));
        }
        let needed = self.poly_order + 1;
        let mut below = 0usize;
        let mut above = 0usize;
        for r in lo..=hi {
            if self.in_donut(r) {
                continue;
            }
            if self.is_treated(r) {
                above += 1;
            } else {
                below += 1;
            }
        }
        if below < needed || above < needed {
            return Err(Error::Config(format!(
                "window [{lo}, {hi}] with donut {} leaves {below} untreated and {above} treated \
                 running values; need at least {needed} on each side for poly_order {}",
                self.donut, self.poly_order
            )));
        }
        Ok(())
    }
}

/// Key of an RD fit: the whole sample, one group, or one group-by-cell stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stratum {
    Overall,
    Group(Group),
    GroupCell(Group, CellId),
}

/// A fitted RD regression for one stratum.
///
/// Both coefficient vectors describe the fitted value as a polynomial in
/// (running - cutoff) on their side, so `below_coeffs[0]` and
/// `above_coeffs[0]` are the two side limits at the cutoff and
/// `tau_hat = above_coeffs[0] - below_coeffs[0]` is the discontinuity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdFit {
    pub stratum: Stratum,
    pub tau_hat: f64,
    pub below_coeffs: Vec<f64>,
    pub above_coeffs: Vec<f64>,
    pub n_below: usize,
    pub n_above: usize,
    pub residual_variance: f64,
}

impl RdFit {
    /// Fitted value at a running value, using the side the spec assigns it to.
    pub fn predict(&self, running: i32, spec: &RdSpec) -> f64 {
        let coeffs = if spec.is_treated(running) {
            &self.above_coeffs
        } else {
            &self.below_coeffs
        };
        let d = (running - spec.cutoff) as f64;
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * d + c)
    }
}

/// The lattice of RD fits: overall, per group, and per group-by-cell stratum.
///
/// Per-group fits are mandatory; group-by-cell strata that fail their
/// preconditions are recorded in `missing_cells` with the failure reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub overall: RdFit,
    pub by_group: [RdFit; 2],
    pub by_group_cell: BTreeMap<(Group, CellId), RdFit>,
    pub missing_cells: BTreeMap<(Group, CellId), String>,
    /// Size of the cell alphabet the lattice was built over.
    pub n_cells: usize,
}

impl EffectTable {
    pub fn group_fit(&self, group: Group) -> &RdFit {
        &self.by_group[group.index()]
    }

    pub fn cell_fit(&self, group: Group, cell: CellId) -> Option<&RdFit> {
        self.by_group_cell.get(&(group, cell))
    }

    /// The full grid is covered when every (group, cell) pair has either a fit
    /// or a recorded failure.
    pub fn grid_covered(&self) -> bool {
        self.by_group_cell.len() + self.missing_cells.len() == 2 * self.n_cells
    }
}

/// Which records enter the composition estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CompositionSample {
    /// Records strictly below the cutoff (the default: pre-eligibility shares).
    #[default]
    PreCutoff,
    /// Records strictly above the cutoff.
    PostCutoff,
    /// All records in the window.
    All,
}

/// Weighted cell shares pi_w(x) for each group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionTable {
    /// Share of group w's weight in each cell; covers the full alphabet,
    /// including cells where a group has zero weight.
    pub shares: BTreeMap<(Group, CellId), f64>,
    pub sample: CompositionSample,
    pub n_cells: usize,
}

impl CompositionTable {
    pub fn share(&self, group: Group, cell: CellId) -> f64 {
        self.shares.get(&(group, cell)).copied().unwrap_or(0.0)
    }

    /// pi_1(x) - pi_0(x).
    pub fn share_diff(&self, cell: CellId) -> f64 {
        self.share(Group::Comparison, cell) - self.share(Group::Baseline, cell)
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> {
        (0..self.n_cells).map(CellId)
    }
}

/// Disparity gaps on each side of the cutoff and their change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Comparison-minus-baseline gap at the cutoff, untreated side.
    pub gamma0: f64,
    /// Same gap from the treated side.
    pub gamma1: f64,
    /// gamma1 - gamma0, identically tau(1) - tau(0).
    pub delta: f64,
}

/// Per-cell pieces of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellContribution {
    /// delta(x) = tau(1, x) - tau(0, x).
    pub delta_x: f64,
    /// The cell effect used by the composition term (the non-reference group's).
    pub tau_ref_x: f64,
    /// pi_1(x) - pi_0(x).
    pub pi_diff: f64,
}

/// Default |delta| below which kappa is reported as undefined.
pub const KAPPA_DEGENERACY_THRESHOLD: f64 = 1e-9;

/// A two-term split of the change in gap under a named reference group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    /// Group whose cell shares weight the within term.
    pub reference: Group,
    /// Plug-in change in gap: sum_x tau(1,x) pi_1(x) - tau(0,x) pi_0(x).
    pub delta: f64,
    pub per_cell: BTreeMap<CellId, CellContribution>,
    pub within_component: f64,
    pub composition_component: f64,
    /// within / delta, or None when |delta| <= kappa_threshold.
    pub kappa: Option<f64>,
    pub kappa_threshold: f64,
}

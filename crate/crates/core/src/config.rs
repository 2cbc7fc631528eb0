//! Run configuration: a TOML file with flag overrides, describing one
//! analysis run (input schema, RD design, bootstrap, outcomes, comparisons).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::BootstrapSpec;
use crate::io::{GroupCode, MissingPolicy, SchemaConfig};
use crate::model::{CompositionSample, GroupNames, RdSpec, KAPPA_DEGENERACY_THRESHOLD};

/// Column names in the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnConfig {
    pub group: String,
    pub cell: String,
    pub running: String,
    pub location: String,
    #[serde(default)]
    pub weight: Option<String>,
}

fn default_kappa_threshold() -> f64 {
    KAPPA_DEGENERACY_THRESHOLD
}

/// Analysis-wide options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionsConfig {
    #[serde(default)]
    pub composition_sample: CompositionSample,
    #[serde(default = "default_kappa_threshold")]
    pub kappa_threshold: f64,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
}

impl Default for OptionsConfig {
    fn default() -> Self {
        OptionsConfig {
            composition_sample: CompositionSample::default(),
            kappa_threshold: KAPPA_DEGENERACY_THRESHOLD,
            missing_policy: MissingPolicy::default(),
        }
    }
}

/// One full run: each outcome is analyzed against each comparison group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    /// Outcome column names; one analysis per outcome.
    pub outcomes: Vec<String>,
    /// Group label coded 0 (e.g. "White").
    pub baseline: String,
    /// Group labels coded 1, one pairwise analysis each.
    pub comparisons: Vec<String>,
    pub columns: ColumnConfig,
    /// Raw cell label -> analysis cell label; empty keeps labels unchanged.
    #[serde(default)]
    pub cell_grouping: BTreeMap<String, String>,
    #[serde(default)]
    pub rd: RdSpec,
    #[serde(default)]
    pub bootstrap: Option<BootstrapSpec>,
    #[serde(default)]
    pub options: OptionsConfig,
    /// Report destination; stdout when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Optional per-cell CSV summary destination.
    #[serde(default)]
    pub cells_csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() {
            return Err(Error::Config("at least one outcome is required".to_string()));
        }
        if self.comparisons.is_empty() {
            return Err(Error::Config(
                "at least one comparison group is required".to_string(),
            ));
        }
        if self.comparisons.iter().any(|c| c == &self.baseline) {
            return Err(Error::Config(format!(
                "baseline group '{}' also appears in comparisons",
                self.baseline
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.comparisons {
            if !seen.insert(c) {
                return Err(Error::Config(format!(
                    "comparison group '{c}' is listed twice"
                )));
            }
        }
        self.rd.validate()?;
        if let Some(boot) = &self.bootstrap {
            boot.validate()?;
        }
        if self.options.kappa_threshold.is_nan() || self.options.kappa_threshold < 0.0 {
            return Err(Error::Config(
                "kappa_threshold must be non-negative".to_string(),
            ));
        }
        Ok(())
    }

    /// Ingestion schema for one outcome column and one comparison group.
    /// Other declared comparison groups are excluded; labels outside the
    /// declared set follow the missing policy.
    pub fn schema_for(&self, outcome: &str, comparison: &str) -> SchemaConfig {
        let mut group_coding = BTreeMap::new();
        group_coding.insert(self.baseline.clone(), GroupCode::Baseline);
        group_coding.insert(comparison.to_string(), GroupCode::Comparison);
        for other in &self.comparisons {
            if other != comparison {
                group_coding.insert(other.clone(), GroupCode::Exclude);
            }
        }
        SchemaConfig {
            outcome: outcome.to_string(),
            group: self.columns.group.clone(),
            cell: self.columns.cell.clone(),
            running: self.columns.running.clone(),
            location: self.columns.location.clone(),
            weight: self.columns.weight.clone(),
            group_coding,
            cell_grouping: self.cell_grouping.clone(),
            missing_policy: self.options.missing_policy,
            group_names: Some(GroupNames {
                baseline: self.baseline.clone(),
                comparison: comparison.to_string(),
            }),
        }
    }
}

/// Parse a TOML run configuration.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_run_config(&text)
}

/// Parse a TOML data-generating-process definition.
pub fn parse_dgp(text: &str) -> Result<crate::synth::DgpSpec> {
    let dgp: crate::synth::DgpSpec =
        toml::from_str(text).map_err(|e| Error::Config(format!("bad dgp spec: {e}")))?;
    dgp.validate()?;
    Ok(dgp)
}

pub fn load_dgp(path: &Path) -> Result<crate::synth::DgpSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_dgp(&text)
}

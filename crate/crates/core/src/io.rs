//! Delimited-text ingestion: map arbitrary column schemas onto records,
//! apply group coding and cell groupings, and write the canonical format.
//!
//! Input is comma-separated UTF-8 with a header row. Fields are trimmed.
//! Empty required fields follow the missing policy; non-empty fields that
//! fail to parse are hard errors carrying the line number.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Alphabet, CellId, Dataset, DatasetMeta, Group, GroupNames, LocationId, MicroRecord, RdSpec,
};

/// What a raw group label maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupCode {
    Baseline,
    Comparison,
    Exclude,
}

/// How to treat rows with empty fields or unmapped labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Drop the row and count it (the default).
    #[default]
    Drop,
    /// Fail with a row-level error.
    Error,
}

/// Column names and label mappings for one input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub outcome: String,
    pub group: String,
    pub cell: String,
    pub running: String,
    pub location: String,
    /// Absent column means every weight is 1.0.
    pub weight: Option<String>,
    /// Raw group label -> baseline / comparison / exclude.
    pub group_coding: BTreeMap<String, GroupCode>,
    /// Raw cell label -> analysis cell. Empty map keeps labels as they are.
    #[serde(default)]
    pub cell_grouping: BTreeMap<String, String>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    /// Display names for the two groups; derived from the coding when absent.
    #[serde(default)]
    pub group_names: Option<GroupNames>,
}

impl SchemaConfig {
    pub fn validate(&self) -> Result<()> {
        let mut has = [false; 2];
        for code in self.group_coding.values() {
            match code {
                GroupCode::Baseline => has[0] = true,
                GroupCode::Comparison => has[1] = true,
                GroupCode::Exclude => {}
            }
        }
        if !has[0] || !has[1] {
            return Err(Error::Config(
                "group_coding must map at least one label to baseline and one to comparison"
                    .to_string(),
            ));
        }
        Ok(())
    }

    /// Display names: configured ones, or the coded labels joined with '+'.
    pub fn resolved_group_names(&self) -> GroupNames {
        if let Some(names) = &self.group_names {
            return names.clone();
        }
        let join = |want: GroupCode| {
            self.group_coding
                .iter()
                .filter(|(_, &code)| code == want)
                .map(|(label, _)| label.as_str())
                .collect::<Vec<_>>()
                .join("+")
        };
        GroupNames {
            baseline: join(GroupCode::Baseline),
            comparison: join(GroupCode::Comparison),
        }
    }
}

/// Side of the cutoff under the spec's treated-side rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffSide {
    Below,
    Above,
}

/// Count and weight mass of one (group, cell, side) stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCount {
    pub group: Group,
    pub cell: String,
    pub side: CutoffSide,
    pub count: usize,
    pub weight_sum: f64,
}

/// Ingestion diagnostics plus per-stratum counts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub records_kept: usize,
    /// Rows whose running value fell outside the analysis window.
    pub dropped_window: usize,
    /// Rows whose group label was explicitly coded as excluded.
    pub dropped_excluded_group: usize,
    /// Rows with group or cell labels that have no mapping (drop policy).
    pub dropped_unmapped: usize,
    /// Rows with empty required fields (drop policy).
    pub dropped_missing: usize,
    pub strata: Vec<StratumCount>,
}

impl IngestReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped_window + self.dropped_excluded_group + self.dropped_unmapped
            + self.dropped_missing
    }
}

/// Per-(group, cell, side) counts and weight sums, sorted deterministically.
pub fn summarize(records: &[MicroRecord], meta: &DatasetMeta, spec: &RdSpec) -> IngestReport {
    let mut acc: BTreeMap<(Group, CellId, CutoffSide), (usize, f64)> = BTreeMap::new();
    for r in records {
        let side = if spec.is_treated(r.running) {
            CutoffSide::Above
        } else {
            CutoffSide::Below
        };
        let entry = acc.entry((r.group, r.cell, side)).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += r.weight;
    }
    let strata = acc
        .into_iter()
        .map(|((group, cell, side), (count, weight_sum))| StratumCount {
            group,
            cell: meta.cell_label(cell).to_string(),
            side,
            count,
            weight_sum,
        })
        .collect();
    IngestReport {
        rows_read: records.len(),
        records_kept: records.len(),
        strata,
        ..IngestReport::default()
    }
}

struct Interner {
    ids: BTreeMap<String, usize>,
}

impl Interner {
    fn new() -> Self {
        Interner {
            ids: BTreeMap::new(),
        }
    }

    fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.ids.len();
        self.ids.insert(label.to_string(), id);
        id
    }

    /// Sorted alphabet plus the old-id -> new-id remap.
    fn finish(self) -> (Alphabet, Vec<usize>) {
        let mut remap = vec![0usize; self.ids.len()];
        let labels: Vec<String> = self.ids.keys().cloned().collect();
        let alphabet = Alphabet::from_labels(labels);
        for (label, old_id) in &self.ids {
            remap[*old_id] = alphabet.id_of(label).expect("label interned");
        }
        (alphabet, remap)
    }
}

enum FieldOutcome<T> {
    Value(T),
    Missing,
}

fn non_empty(raw: &str) -> Option<&str> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed)
    }
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    field: &str,
    line: u64,
) -> Result<FieldOutcome<T>> {
    match non_empty(raw) {
        None => Ok(FieldOutcome::Missing),
        Some(s) => s
            .parse::<T>()
            .map(FieldOutcome::Value)
            .map_err(|_| Error::Parse {
                line,
                field: field.to_string(),
                value: s.to_string(),
            }),
    }
}

/// Load microdata from a delimited file, mapping the schema onto records.
///
/// Rows outside the window, coded as excluded, or dropped by the missing
/// policy are counted in the report, not returned. Record order follows row
/// order.
pub fn load_microdata(
    path: &Path,
    schema: &SchemaConfig,
    spec: &RdSpec,
) -> Result<(Dataset, IngestReport)> {
    schema.validate()?;
    spec.validate()?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => Error::Csv(e.to_string()),
        })?;

    let headers = reader.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaColumn(name.to_string()))
    };
    let outcome_col = col(&schema.outcome)?;
    let group_col = col(&schema.group)?;
    let cell_col = col(&schema.cell)?;
    let running_col = col(&schema.running)?;
    let location_col = col(&schema.location)?;
    let weight_col = match &schema.weight {
        Some(name) => Some(col(name)?),
        None => None,
    };

    let mut cells = Interner::new();
    let mut locations = Interner::new();
    let mut raw_records: Vec<MicroRecord> = Vec::new();
    let mut report = IngestReport::default();

    let mut row = reader.into_records();
    loop {
        let record = match row.next() {
            None => break,
            Some(Ok(r)) => r,
            Some(Err(e)) => return Err(Error::Csv(e.to_string())),
        };
        report.rows_read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);

        let field = |idx: usize| record.get(idx).unwrap_or("");

        // group label
        let group = match non_empty(field(group_col)) {
            None => match schema.missing_policy {
                MissingPolicy::Drop => {
                    report.dropped_missing += 1;
                    continue;
                }
                MissingPolicy::Error => {
                    return Err(Error::RowValue {
                        line,
                        message: format!("empty group field '{}'", schema.group),
                    })
                }
            },
            Some(label) => match schema.group_coding.get(label) {
                Some(GroupCode::Baseline) => Group::Baseline,
                Some(GroupCode::Comparison) => Group::Comparison,
                Some(GroupCode::Exclude) => {
                    report.dropped_excluded_group += 1;
                    continue;
                }
                None => match schema.missing_policy {
                    MissingPolicy::Drop => {
                        report.dropped_unmapped += 1;
                        continue;
                    }
                    MissingPolicy::Error => {
                        return Err(Error::UnmappedLabel {
                            line,
                            column: schema.group.clone(),
                            label: label.to_string(),
                        })
                    }
                },
            },
        };

        // cell label, mapped through the grouping when one is configured
        let cell_label = match non_empty(field(cell_col)) {
            None => match schema.missing_policy {
                MissingPolicy::Drop => {
                    report.dropped_missing += 1;
                    continue;
                }
                MissingPolicy::Error => {
                    return Err(Error::RowValue {
                        line,
                        message: format!("empty cell field '{}'", schema.cell),
                    })
                }
            },
            Some(raw) => {
                if schema.cell_grouping.is_empty() {
                    raw.to_string()
                } else {
                    match schema.cell_grouping.get(raw) {
                        Some(mapped) => mapped.clone(),
                        None => match schema.missing_policy {
                            MissingPolicy::Drop => {
                                report.dropped_unmapped += 1;
                                continue;
                            }
                            MissingPolicy::Error => {
                                return Err(Error::UnmappedLabel {
                                    line,
                                    column: schema.cell.clone(),
                                    label: raw.to_string(),
                                })
                            }
                        },
                    }
                }
            }
        };

        // numeric fields
        let running = match parse_field::<i32>(field(running_col), &schema.running, line)? {
            FieldOutcome::Value(v) => v,
            FieldOutcome::Missing => match schema.missing_policy {
                MissingPolicy::Drop => {
                    report.dropped_missing += 1;
                    continue;
                }
                MissingPolicy::Error => {
                    return Err(Error::RowValue {
                        line,
                        message: format!("empty running field '{}'", schema.running),
                    })
                }
            },
        };
        let outcome = match parse_field::<f64>(field(outcome_col), &schema.outcome, line)? {
            FieldOutcome::Value(v) => v,
            FieldOutcome::Missing => match schema.missing_policy {
                MissingPolicy::Drop => {
                    report.dropped_missing += 1;
                    continue;
                }
                MissingPolicy::Error => {
                    return Err(Error::RowValue {
                        line,
                        message: format!("empty outcome field '{}'", schema.outcome),
                    })
                }
            },
        };
        if !outcome.is_finite() {
            return Err(Error::RowValue {
                line,
                message: format!("outcome must be finite, got {outcome}"),
            });
        }
        let weight = match weight_col {
            None => 1.0,
            Some(idx) => match parse_field::<f64>(field(idx), schema.weight.as_ref().unwrap(), line)? {
                FieldOutcome::Value(v) => v,
                FieldOutcome::Missing => match schema.missing_policy {
                    MissingPolicy::Drop => {
                        report.dropped_missing += 1;
                        continue;
                    }
                    MissingPolicy::Error => {
                        return Err(Error::RowValue {
                            line,
                            message: "empty weight field".to_string(),
                        })
                    }
                },
            },
        };
        if !weight.is_finite() || weight <= 0.0 {
            return Err(Error::RowValue {
                line,
                message: format!("weight must be a positive finite number, got {weight}"),
            });
        }

        let location_label = match non_empty(field(location_col)) {
            None => match schema.missing_policy {
                MissingPolicy::Drop => {
                    report.dropped_missing += 1;
                    continue;
                }
                MissingPolicy::Error => {
                    return Err(Error::RowValue {
                        line,
                        message: format!("empty location field '{}'", schema.location),
                    })
                }
            },
            Some(l) => l.to_string(),
        };

        if !spec.in_window(running) {
            report.dropped_window += 1;
            continue;
        }

        raw_records.push(MicroRecord {
            outcome,
            group,
            cell: CellId(cells.intern(&cell_label)),
            running,
            location: LocationId(locations.intern(&location_label)),
            weight,
        });
    }

    let (cell_alphabet, cell_remap) = cells.finish();
    let (location_alphabet, location_remap) = locations.finish();
    for r in &mut raw_records {
        r.cell = CellId(cell_remap[r.cell.0]);
        r.location = LocationId(location_remap[r.location.0]);
    }

    let meta = DatasetMeta {
        cells: cell_alphabet,
        locations: location_alphabet,
        groups: schema.resolved_group_names(),
    };
    report.records_kept = raw_records.len();
    let counts = summarize(&raw_records, &meta, spec);
    report.strata = counts.strata;

    let dataset = Dataset {
        records: raw_records,
        meta,
    };
    dataset.validate(spec)?;
    Ok((dataset, report))
}

/// Canonical column set used by `write_canonical`.
pub const CANONICAL_COLUMNS: [&str; 6] =
    ["outcome", "group", "cell", "running", "location", "weight"];

/// Schema that reads the canonical format back, given the group names the
/// file was written with.
pub fn canonical_schema(names: &GroupNames) -> SchemaConfig {
    let mut group_coding = BTreeMap::new();
    group_coding.insert(names.baseline.clone(), GroupCode::Baseline);
    group_coding.insert(names.comparison.clone(), GroupCode::Comparison);
    SchemaConfig {
        outcome: "outcome".to_string(),
        group: "group".to_string(),
        cell: "cell".to_string(),
        running: "running".to_string(),
        location: "location".to_string(),
        weight: Some("weight".to_string()),
        group_coding,
        cell_grouping: BTreeMap::new(),
        missing_policy: MissingPolicy::Error,
        group_names: Some(names.clone()),
    }
}

/// Write a dataset in the canonical delimited format. Numbers use the
/// shortest representation that round-trips, so reloading reproduces the
/// records exactly.
pub fn write_canonical(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let io_err = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    };
    writer.write_record(CANONICAL_COLUMNS).map_err(io_err)?;
    for r in &dataset.records {
        writer
            .write_record(&[
                format!("{}", r.outcome),
                dataset.meta.groups.name(r.group).to_string(),
                dataset.meta.cell_label(r.cell).to_string(),
                format!("{}", r.running),
                dataset.meta.location_label(r.location).to_string(),
                format!("{}", r.weight),
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

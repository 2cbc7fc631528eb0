//! Regression discontinuity estimation on a piecewise-polynomial design.
//!
//! The design has one indicator column per side intercept plus centered
//! polynomial trend columns, fit by weighted least squares through QR. The
//! reported discontinuity is the treated-side intercept minus the
//! untreated-side intercept, i.e. the coefficient on the treated indicator
//! once both sides share a common level.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{
    CellId, DatasetMeta, EffectTable, Group, MicroRecord, RdFit, RdSpec, Stratum,
};
use crate::wls::{self, WlsError};

/// A built design: one row per record surviving the donut filter.
///
/// Column order is fixed: `treated`, then `below^0 .. below^P`, then
/// `above^1 .. above^P`, all trends centered at the cutoff. Exactly one of
/// `treated` and `below^0` is 1 in any row.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    pub weights: Vec<f64>,
    pub n_below: usize,
    pub n_above: usize,
}

fn design_columns(poly_order: usize) -> Vec<String> {
    let mut cols = vec!["treated".to_string()];
    for p in 0..=poly_order {
        cols.push(format!("below^{p}"));
    }
    for p in 1..=poly_order {
        cols.push(format!("above^{p}"));
    }
    cols
}

/// Build the design matrix, response, and weight vector for one stratum.
pub fn build_design(
    records: &[MicroRecord],
    spec: &RdSpec,
    stratum_name: &str,
) -> Result<Design> {
    let p = spec.poly_order;
    let ncols = 2 * p + 2;
    let mut rows = Vec::new();
    let mut response = Vec::new();
    let mut weights = Vec::new();
    let mut n_below = 0usize;
    let mut n_above = 0usize;

    for r in records {
        if spec.in_donut(r.running) {
            continue;
        }
        let d = (r.running - spec.cutoff) as f64;
        let treated = spec.is_treated(r.running);
        let mut row = vec![0.0; ncols];
        if treated {
            row[0] = 1.0;
            let mut pow = d;
            for j in 0..p {
                row[p + 2 + j] = pow;
                pow *= d;
            }
            n_above += 1;
        } else {
            let mut pow = 1.0;
            for j in 0..=p {
                row[1 + j] = pow;
                pow *= d;
            }
            n_below += 1;
        }
        rows.push(row);
        response.push(r.outcome);
        weights.push(if spec.weighted { r.weight } else { 1.0 });
    }

    if rows.is_empty() {
        return Err(Error::InsufficientData {
            stratum: stratum_name.to_string(),
            side: ": no records after window and donut filters".to_string(),
        });
    }

    Ok(Design {
        columns: design_columns(p),
        rows,
        response,
        weights,
        n_below,
        n_above,
    })
}

fn check_side_support(
    records: &[MicroRecord],
    spec: &RdSpec,
    stratum_name: &str,
) -> Result<()> {
    let needed = spec.poly_order + 1;
    let mut below = BTreeSet::new();
    let mut above = BTreeSet::new();
    for r in records {
        if spec.in_donut(r.running) {
            continue;
        }
        if spec.is_treated(r.running) {
            above.insert(r.running);
        } else {
            below.insert(r.running);
        }
    }
    for (side, distinct) in [("untreated", below.len()), ("treated", above.len())] {
        if distinct < needed {
            return Err(Error::InsufficientData {
                stratum: stratum_name.to_string(),
                side: format!(
                    " on the {side} side: {distinct} distinct running value(s), need {needed}"
                ),
            });
        }
    }
    Ok(())
}

/// Fit the RD regression over one stratum of records.
pub fn fit_rd(
    records: &[MicroRecord],
    meta: &DatasetMeta,
    spec: &RdSpec,
    stratum: Stratum,
) -> Result<RdFit> {
    let name = meta.stratum_name(&stratum);
    check_side_support(records, spec, &name)?;
    for r in records {
        if !r.weight.is_finite() || r.weight <= 0.0 {
            return Err(Error::RowValue {
                line: 0,
                message: format!("non-positive weight {} in stratum {name}", r.weight),
            });
        }
    }

    let design = build_design(records, spec, &name)?;
    let fit = wls::solve(&design.rows, &design.response, &design.weights).map_err(|e| match e {
        WlsError::RankDeficient(cols) => Error::SingularDesign {
            stratum: name.clone(),
            columns: cols
                .iter()
                .map(|&j| design.columns[j].clone())
                .collect::<Vec<_>>()
                .join(", "),
        },
        WlsError::Underdetermined { rows, cols } => Error::InsufficientData {
            stratum: name.clone(),
            side: format!(": {rows} usable record(s) for {cols} design columns"),
        },
    })?;

    let p = spec.poly_order;
    let beta = &fit.coefficients;
    let below_coeffs: Vec<f64> = beta[1..p + 2].to_vec();
    let mut above_coeffs = Vec::with_capacity(p + 1);
    above_coeffs.push(beta[0]);
    above_coeffs.extend_from_slice(&beta[p + 2..]);
    let tau_hat = beta[0] - below_coeffs[0];

    let n = design.rows.len();
    let k = design.columns.len();
    let sum_w: f64 = design.weights.iter().sum();
    let residual_variance = if n > k && sum_w > 0.0 {
        fit.weighted_rss * (n as f64 / sum_w) / (n - k) as f64
    } else {
        0.0
    };

    Ok(RdFit {
        stratum,
        tau_hat,
        below_coeffs,
        above_coeffs,
        n_below: design.n_below,
        n_above: design.n_above,
        residual_variance,
    })
}

/// Fit the full lattice: overall, per group, and per group-by-cell stratum.
///
/// Overall and per-group failures are fatal; a failing group-by-cell stratum
/// is recorded under `missing_cells` with its reason and does not abort the
/// lattice.
pub fn fit_rd_lattice(
    records: &[MicroRecord],
    meta: &DatasetMeta,
    spec: &RdSpec,
) -> Result<EffectTable> {
    let overall = fit_rd(records, meta, spec, Stratum::Overall)?;

    let mut group_records: [Vec<MicroRecord>; 2] = [Vec::new(), Vec::new()];
    for r in records {
        group_records[r.group.index()].push(*r);
    }
    let baseline = fit_rd(
        &group_records[0],
        meta,
        spec,
        Stratum::Group(Group::Baseline),
    )?;
    let comparison = fit_rd(
        &group_records[1],
        meta,
        spec,
        Stratum::Group(Group::Comparison),
    )?;

    let mut by_group_cell = std::collections::BTreeMap::new();
    let mut missing_cells = std::collections::BTreeMap::new();
    for group in Group::BOTH {
        for cell_idx in meta.cells.ids() {
            let cell = CellId(cell_idx);
            let stratum_records: Vec<MicroRecord> = group_records[group.index()]
                .iter()
                .filter(|r| r.cell == cell)
                .copied()
                .collect();
            match fit_rd(&stratum_records, meta, spec, Stratum::GroupCell(group, cell)) {
                Ok(fit) => {
                    by_group_cell.insert((group, cell), fit);
                }
                Err(e) => {
                    missing_cells.insert((group, cell), e.to_string());
                }
            }
        }
    }

    Ok(EffectTable {
        overall,
        by_group: [baseline, comparison],
        by_group_cell,
        missing_cells,
        n_cells: meta.cells.len(),
    })
}

//! Filling missing observation cells by soft-thresholded SVD (SoftImpute).

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::afc::{Cell, ObservationTable};
use crate::error::{Error, Result};
use crate::network::{OdPair, StationId};

/// How observation cells are arranged into a matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellLayout {
    /// One row per OD pair, one column per interval.
    #[default]
    OdByInterval,
    /// One row per origin, one column per (destination, interval). An OD
    /// with no records at all still shares its row with other destinations
    /// and its columns with other origins, so it can be filled in.
    OriginByDestinationInterval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
enum RowKey {
    Od(OdPair),
    Origin(StationId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
enum ColKey {
    Interval(usize),
    DestinationInterval(StationId, usize),
}

/// Partially observed matrix. Unobserved entries hold 0 in `values` and are
/// marked false in `mask`; they are never treated as data.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMatrix {
    pub layout: CellLayout,
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    /// Matrix position of every cell that maps back to an (OD, interval).
    pub positions: BTreeMap<(OdPair, usize), (usize, usize)>,
}

impl ObservationMatrix {
    pub fn observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Places `table` into a matrix covering every OD in `ods` and every
/// interval of the table's spec.
pub fn to_matrix(
    table: &ObservationTable,
    ods: &[OdPair],
    layout: CellLayout,
) -> ObservationMatrix {
    let intervals = table.spec.count;
    let key = |od: OdPair, h: usize| match layout {
        CellLayout::OdByInterval => (RowKey::Od(od), ColKey::Interval(h)),
        CellLayout::OriginByDestinationInterval => (
            RowKey::Origin(od.origin),
            ColKey::DestinationInterval(od.destination, h),
        ),
    };
    let mut row_keys = BTreeSet::new();
    let mut col_keys = BTreeSet::new();
    for &od in ods {
        for h in 0..intervals {
            let (r, c) = key(od, h);
            row_keys.insert(r);
            col_keys.insert(c);
        }
    }
    let row_pos: BTreeMap<RowKey, usize> =
        row_keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let col_pos: BTreeMap<ColKey, usize> =
        col_keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();

    let mut values = DMatrix::zeros(row_pos.len(), col_pos.len());
    let mut mask = DMatrix::from_element(row_pos.len(), col_pos.len(), false);
    let mut positions = BTreeMap::new();
    for &od in ods {
        for h in 0..intervals {
            let (r, c) = key(od, h);
            let pos = (row_pos[&r], col_pos[&c]);
            positions.insert((od, h), pos);
            if let Some(cell) = table.get(od, h) {
                values[pos] = cell.mean_travel_min;
                mask[pos] = true;
            }
        }
    }
    ObservationMatrix {
        layout,
        values,
        mask,
        positions,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftImputeConfig {
    /// Number of geometric steps from the largest singular value of the
    /// observed entries down to that value divided by `lambda_ratio`.
    pub lambda_steps: usize,
    pub lambda_ratio: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SoftImputeConfig {
    fn default() -> Self {
        SoftImputeConfig {
            lambda_steps: 10,
            lambda_ratio: 100.0,
            tol: 1e-4,
            max_iter: 100,
        }
    }
}

impl SoftImputeConfig {
    pub fn schedule(&self, lambda_max: f64) -> Vec<f64> {
        if self.lambda_steps <= 1 {
            return vec![lambda_max / self.lambda_ratio];
        }
        let last = (self.lambda_steps - 1) as f64;
        (0..self.lambda_steps)
            .map(|i| lambda_max * self.lambda_ratio.powf(-(i as f64) / last))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completed {
    /// Completed matrix; observed entries equal the input bit for bit.
    /// Excluded rows and columns are left as in the input.
    pub values: DMatrix<f64>,
    pub excluded_rows: Vec<usize>,
    pub excluded_cols: Vec<usize>,
    /// False when the last λ hit `max_iter` before reaching `tol`.
    pub converged: bool,
    pub iterations: usize,
}

fn svt(y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let svd = y.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let shrunk = svd.singular_values.map(|s| (s - lambda).max(0.0));
    &u * DMatrix::from_diagonal(&shrunk) * &v_t
}

pub fn soft_impute(m: &ObservationMatrix, cfg: &SoftImputeConfig) -> Result<Completed> {
    if m.observed() == 0 {
        return Err(Error::NoObservations);
    }
    if !(cfg.lambda_ratio >= 1.0 && cfg.tol > 0.0 && cfg.max_iter > 0) {
        return Err(Error::Config("bad SoftImpute settings".into()));
    }
    let (nr, nc) = m.values.shape();
    let excluded_rows: Vec<usize> = (0..nr)
        .filter(|&i| !m.mask.row(i).iter().any(|&b| b))
        .collect();
    let excluded_cols: Vec<usize> = (0..nc)
        .filter(|&j| !m.mask.column(j).iter().any(|&b| b))
        .collect();
    let rows: Vec<usize> = (0..nr).filter(|i| !excluded_rows.contains(i)).collect();
    let cols: Vec<usize> = (0..nc).filter(|j| !excluded_cols.contains(j)).collect();

    let x = DMatrix::from_fn(rows.len(), cols.len(), |i, j| m.values[(rows[i], cols[j])]);
    let mask = DMatrix::from_fn(rows.len(), cols.len(), |i, j| m.mask[(rows[i], cols[j])]);
    let observed = x.zip_map(&mask, |v, b| if b { v } else { 0.0 });
    let lambda_max = observed.singular_values().max();

    let mut z = DMatrix::zeros(rows.len(), cols.len());
    let mut converged = true;
    let mut iterations = 0;
    for lambda in cfg.schedule(lambda_max) {
        converged = false;
        for _ in 0..cfg.max_iter {
            iterations += 1;
            let y = observed.zip_zip_map(&mask, &z, |o, b, zv| if b { o } else { zv });
            let next = svt(&y, lambda);
            let change = (&next - &z).norm() / z.norm().max(f64::MIN_POSITIVE);
            z = next;
            if change < cfg.tol {
                converged = true;
                break;
            }
        }
    }

    let mut values = m.values.clone();
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            if !m.mask[(r, c)] {
                values[(r, c)] = z[(i, j)];
            }
        }
    }
    Ok(Completed {
        values,
        excluded_rows,
        excluded_cols,
        converged,
        iterations,
    })
}

/// Observed cells are copied from `table` unchanged; every other cell that
/// was filled in gets count 0 and the imputed flag. Fills that are not
/// positive are discarded.
pub fn from_matrix(
    completed: &Completed,
    m: &ObservationMatrix,
    table: &ObservationTable,
) -> ObservationTable {
    let mut out = table.clone();
    for (&(od, h), &(r, c)) in &m.positions {
        if m.mask[(r, c)]
            || completed.excluded_rows.contains(&r)
            || completed.excluded_cols.contains(&c)
        {
            continue;
        }
        let v = completed.values[(r, c)];
        if v.is_finite() && v > 0.0 {
            out.rows.insert(
                (od, h),
                Cell {
                    mean_travel_min: v,
                    count: 0,
                    imputed: true,
                },
            );
        }
    }
    out
}

/// Convenience wrapper: matrix, SoftImpute, back to a table.
pub fn impute_table(
    table: &ObservationTable,
    ods: &[OdPair],
    layout: CellLayout,
    cfg: &SoftImputeConfig,
) -> Result<(ObservationTable, Completed)> {
    let m = to_matrix(table, ods, layout);
    let completed = soft_impute(&m, cfg)?;
    Ok((from_matrix(&completed, &m, table), completed))
}

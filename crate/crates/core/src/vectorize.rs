//! Variable indexing and the path incidence matrix.
//!
//! Every learnable link (entry, exit, vehicle, transfer) gets one column and
//! every departing (platform, direction) pair gets one wait column per
//! interval. Rows are (OD, interval, path) triples for observed cells. The
//! link-column block and the wait-column block of the matrix are simply
//! column ranges of the same CSR structure.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Direction, ExpandedNetwork, LinkId, LinkKind, NodeId, OdPair};
use crate::paths::{Path, PathSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variable {
    Link(LinkId),
    Wait {
        platform: NodeId,
        direction: Direction,
        interval: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawIndex", into = "RawIndex")]
pub struct VariableIndex {
    learnable: Vec<bool>,
    link_columns: BTreeMap<LinkId, usize>,
    wait_pairs: Vec<(NodeId, Direction)>,
    wait_lookup: BTreeMap<(NodeId, Direction), usize>,
    intervals: usize,
}

/// Serialized form: lookups are rebuilt on load.
#[derive(Serialize, Deserialize)]
struct RawIndex {
    learnable: Vec<bool>,
    link_ids: Vec<LinkId>,
    wait_pairs: Vec<(NodeId, Direction)>,
    intervals: usize,
}

impl From<VariableIndex> for RawIndex {
    fn from(v: VariableIndex) -> Self {
        let mut link_ids: Vec<(usize, LinkId)> =
            v.link_columns.iter().map(|(&l, &c)| (c, l)).collect();
        link_ids.sort();
        RawIndex {
            learnable: v.learnable,
            link_ids: link_ids.into_iter().map(|(_, l)| l).collect(),
            wait_pairs: v.wait_pairs,
            intervals: v.intervals,
        }
    }
}

impl From<RawIndex> for VariableIndex {
    fn from(r: RawIndex) -> Self {
        VariableIndex {
            learnable: r.learnable,
            link_columns: r
                .link_ids
                .iter()
                .enumerate()
                .map(|(c, &l)| (l, c))
                .collect(),
            wait_lookup: r
                .wait_pairs
                .iter()
                .enumerate()
                .map(|(i, &p)| (p, i))
                .collect(),
            wait_pairs: r.wait_pairs,
            intervals: r.intervals,
        }
    }
}

impl VariableIndex {
    /// Links in id order, then waits ordered by (platform, direction,
    /// interval). A wait pair exists only where boarding leads to a
    /// departing train.
    pub fn build(net: &ExpandedNetwork, intervals: usize) -> Self {
        let link_columns: BTreeMap<LinkId, usize> = net
            .links()
            .iter()
            .filter(|l| l.kind.is_learnable())
            .enumerate()
            .map(|(col, l)| (l.link_id, col))
            .collect();
        let mut wait_pairs: Vec<(NodeId, Direction)> = net
            .links()
            .iter()
            .filter(|l| l.kind == LinkKind::Board && net.is_departing(l.head))
            .map(|l| (l.tail, l.direction))
            .collect();
        wait_pairs.sort();
        wait_pairs.dedup();
        let wait_lookup = wait_pairs
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i))
            .collect();
        VariableIndex {
            learnable: net.links().iter().map(|l| l.kind.is_learnable()).collect(),
            link_columns,
            wait_pairs,
            wait_lookup,
            intervals,
        }
    }

    pub fn n_link_columns(&self) -> usize {
        self.link_columns.len()
    }

    pub fn n_wait_pairs(&self) -> usize {
        self.wait_pairs.len()
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn total_columns(&self) -> usize {
        self.n_link_columns() + self.n_wait_pairs() * self.intervals
    }

    pub fn link_range(&self) -> Range<usize> {
        0..self.n_link_columns()
    }

    pub fn wait_range(&self) -> Range<usize> {
        self.n_link_columns()..self.total_columns()
    }

    pub fn wait_pairs(&self) -> &[(NodeId, Direction)] {
        &self.wait_pairs
    }

    pub fn link_column(&self, link: LinkId) -> Option<usize> {
        self.link_columns.get(&link).copied()
    }

    pub fn wait_column(&self, platform: NodeId, direction: Direction, h: usize) -> Option<usize> {
        if h >= self.intervals {
            return None;
        }
        self.wait_lookup
            .get(&(platform, direction))
            .map(|&i| self.n_link_columns() + i * self.intervals + h)
    }

    pub fn variable(&self, col: usize) -> Variable {
        let na = self.n_link_columns();
        if col < na {
            let link = *self
                .link_columns
                .iter()
                .nth(col)
                .expect("column in range")
                .0;
            Variable::Link(link)
        } else {
            let i = col - na;
            let (platform, direction) = self.wait_pairs[i / self.intervals];
            Variable::Wait {
                platform,
                direction,
                interval: i % self.intervals,
            }
        }
    }

    /// All variables in column order.
    pub fn variables(&self) -> Vec<Variable> {
        let mut out: Vec<Variable> = self
            .link_columns
            .keys()
            .map(|&l| Variable::Link(l))
            .collect();
        for &(platform, direction) in &self.wait_pairs {
            for interval in 0..self.intervals {
                out.push(Variable::Wait {
                    platform,
                    direction,
                    interval,
                });
            }
        }
        out
    }

    /// Human-readable variable name, e.g. `vehicle:12->15` or
    /// `wait:station4/line2/up/h3`.
    pub fn name(&self, col: usize, net: &ExpandedNetwork) -> String {
        match self.variable(col) {
            Variable::Link(l) => {
                let link = net.link(l);
                format!("{}:{}->{}", link.kind.as_str(), link.tail, link.head)
            }
            Variable::Wait {
                platform,
                direction,
                interval,
            } => {
                let node = net.node(platform);
                format!(
                    "wait:station{}/line{}/{}/h{}",
                    node.station_id,
                    node.line.unwrap_or(0),
                    direction.as_str(),
                    interval
                )
            }
        }
    }

    /// Starting point built from link priors and the boarding prior.
    pub fn prior_vector(&self, net: &ExpandedNetwork) -> Vec<f64> {
        self.variables()
            .iter()
            .map(|v| match *v {
                Variable::Link(l) => net.link(l).prior_time_min,
                Variable::Wait {
                    platform,
                    direction,
                    ..
                } => net
                    .outgoing(platform)
                    .iter()
                    .map(|&l| net.link(l))
                    .find(|l| l.kind == LinkKind::Board && l.direction == direction)
                    .map_or(0.0, |l| l.prior_time_min),
            })
            .collect()
    }

    /// Columns a path touches in interval `h`.
    pub fn path_columns(&self, path: &Path, h: usize) -> Result<Vec<usize>> {
        let mut cols = Vec::with_capacity(path.links.len());
        for &l in &path.links {
            match self.link_column(l) {
                Some(c) => cols.push(c),
                None if self.learnable.get(l) == Some(&false) => {}
                None => {
                    return Err(Error::MissingColumn {
                        path_id: path.path_id,
                        link_id: l,
                    })
                }
            }
        }
        for w in &path.wait_events {
            let c =
                self.wait_column(w.platform, w.direction, h)
                    .ok_or(Error::MissingWaitColumn {
                        path_id: path.path_id,
                        platform: w.platform,
                    })?;
            cols.push(c);
        }
        Ok(cols)
    }

    /// Generalized path cost in interval `h` evaluated directly from the
    /// path's links and boardings.
    pub fn path_cost(&self, path: &Path, h: usize, t: &[f64]) -> Result<f64> {
        Ok(self.path_columns(path, h)?.iter().map(|&c| t[c]).sum())
    }
}

pub fn build_variable_index(net: &ExpandedNetwork, intervals: usize) -> VariableIndex {
    VariableIndex::build(net, intervals)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRow {
    pub od_row: usize,
    pub path_id: usize,
    pub rank: usize,
    pub interval: usize,
}

/// Row bookkeeping: observed (OD, interval) cells and their path rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIndex {
    pub od_rows: Vec<(OdPair, usize)>,
    pub path_rows: Vec<PathRow>,
    /// `path_rows[block[i].clone()]` are the path rows of `od_rows[i]`.
    pub blocks: Vec<Range<usize>>,
}

impl RowIndex {
    /// Rows for the given cells, keeping only cells whose OD has paths.
    /// Cells are sorted by OD then interval.
    pub fn build(cells: impl IntoIterator<Item = (OdPair, usize)>, paths: &PathSet) -> Self {
        let mut cells: Vec<(OdPair, usize)> = cells
            .into_iter()
            .filter(|(od, _)| !paths.get(od).is_empty())
            .collect();
        cells.sort();
        cells.dedup();
        let mut path_rows = Vec::new();
        let mut blocks = Vec::with_capacity(cells.len());
        for (i, &(od, h)) in cells.iter().enumerate() {
            let start = path_rows.len();
            for (rank, p) in paths.get(&od).iter().enumerate() {
                path_rows.push(PathRow {
                    od_row: i,
                    path_id: p.path_id,
                    rank,
                    interval: h,
                });
            }
            blocks.push(start..path_rows.len());
        }
        RowIndex {
            od_rows: cells,
            path_rows,
            blocks,
        }
    }

    pub fn n_od_rows(&self) -> usize {
        self.od_rows.len()
    }

    pub fn n_path_rows(&self) -> usize {
        self.path_rows.len()
    }
}

/// Sparse 0/1 matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incidence {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl Incidence {
    pub fn from_rows(n_cols: usize, rows: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        row_ptr.push(0);
        for r in rows {
            let mut r = r.clone();
            r.sort_unstable();
            r.dedup();
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        Incidence {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            col_idx,
        }
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `A t`
    pub fn mul(&self, t: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).iter().map(|&c| t[c]).sum())
            .collect()
    }

    /// `Aᵀ y`
    pub fn tmul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (i, &yi) in y.iter().enumerate() {
            for &c in self.row(i) {
                out[c] += yi;
            }
        }
        out
    }

    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cols];
        for &c in &self.col_idx {
            counts[c] += 1;
        }
        counts
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for &c in self.row(i) {
                m[(i, c)] = 1.0;
            }
        }
        m
    }
}

pub fn build_incidence(
    paths: &PathSet,
    index: &VariableIndex,
    rows: &RowIndex,
) -> Result<Incidence> {
    let by_id: BTreeMap<usize, &Path> = paths
        .by_od
        .values()
        .flatten()
        .map(|p| (p.path_id, p))
        .collect();
    let mut out = Vec::with_capacity(rows.n_path_rows());
    for pr in &rows.path_rows {
        let path = by_id.get(&pr.path_id).ok_or_else(|| {
            Error::DimensionMismatch(format!("row refers to unknown path {}", pr.path_id))
        })?;
        out.push(index.path_columns(path, pr.interval)?);
    }
    Ok(Incidence::from_rows(index.total_columns(), &out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total_columns: usize,
    pub uncovered: Vec<usize>,
    pub column_counts: Vec<usize>,
    /// Numerical rank, computed when there are at most
    /// [`RANK_COLUMN_LIMIT`] columns.
    pub rank: Option<usize>,
    pub rank_deficient: bool,
}

pub const RANK_COLUMN_LIMIT: usize = 2000;

pub fn coverage_report(a: &Incidence) -> CoverageReport {
    let column_counts = a.column_counts();
    let uncovered: Vec<usize> = column_counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0)
        .map(|(c, _)| c)
        .collect();
    let rank = (a.n_cols <= RANK_COLUMN_LIMIT).then(|| numerical_rank(a));
    let rank_deficient = match rank {
        Some(r) => r < a.n_cols,
        None => !uncovered.is_empty(),
    };
    CoverageReport {
        total_columns: a.n_cols,
        uncovered,
        column_counts,
        rank,
        rank_deficient,
    }
}

/// Rank from the eigenvalues of the Gram matrix `AᵀA`.
pub fn numerical_rank(a: &Incidence) -> usize {
    if a.n_rows == 0 || a.n_cols == 0 {
        return 0;
    }
    let mut gram = DMatrix::<f64>::zeros(a.n_cols, a.n_cols);
    for i in 0..a.n_rows {
        let row = a.row(i);
        for &p in row {
            for &q in row {
                gram[(p, q)] += 1.0;
            }
        }
    }
    let eig = gram.symmetric_eigenvalues();
    let largest = eig.iter().cloned().fold(0.0, f64::max);
    let tol = largest * a.n_cols as f64 * 1e-12;
    eig.iter().filter(|&&e| e > tol).count()
}

const MAGIC: &[u8; 8] = b"URTCSR\0\0";
const FORMAT_VERSION: u32 = 1;

/// Binary layout, little endian: 8 magic bytes, u32 version, u64 rows,
/// u64 cols, u64 nnz, then `rows + 1` u64 row pointers and `nnz` u64 column
/// indices.
pub fn write_incidence<W: Write>(mut w: W, a: &Incidence) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [a.n_rows, a.n_cols, a.nnz()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for &v in a.row_ptr.iter().chain(&a.col_idx) {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_incidence<R: Read>(mut r: R) -> Result<Incidence> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an incidence matrix file".into()));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported matrix version {version}"
        )));
    }
    let mut next = || -> Result<usize> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("value overflow".into()))
    };
    let n_rows = next()?;
    let n_cols = next()?;
    let nnz = next()?;
    let row_ptr = (0..=n_rows).map(|_| next()).collect::<Result<Vec<_>>>()?;
    let col_idx = (0..nnz).map(|_| next()).collect::<Result<Vec<_>>>()?;
    let well_formed = row_ptr.first() == Some(&0)
        && row_ptr.last() == Some(&nnz)
        && row_ptr.windows(2).all(|w| w[0] <= w[1])
        && col_idx.iter().all(|&c| c < n_cols);
    if !well_formed {
        return Err(Error::Format("inconsistent CSR arrays".into()));
    }
    Ok(Incidence {
        n_rows,
        n_cols,
        row_ptr,
        col_idx,
    })
}

/// JSON companion of the binary matrix: enough to reload rows and columns
/// without re-enumerating paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub index: VariableIndex,
    pub rows: RowIndex,
}

//! Sparse annotation matrices for Features and Labels.
//!
//! Two representations with different access costs:
//!
//! * **LIL** — each row stores a sorted list of (column_key, value) pairs;
//!   a whole row is retrieved in one step. Used for Features in both modes
//!   and for Labels in production.
//! * **COO** — (row_key, column_key, value) triples kept sorted by
//!   (column_key, row_key) with a per-column index, so replacing a column
//!   touches only that column's entries. Used for Labels during development,
//!   where labeling functions are edited and re-applied.
//!
//! Zero-valued entries are never stored. A `touched` counter tracks entries
//! visited per operation; the representation tradeoff is certified by
//! counters rather than wall-clock timings.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("row {row} out of range for matrix with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("representation error: operation requires {required:?}, matrix is {actual:?}")]
    RepresentationError { required: Representation, actual: Representation },
    #[error("malformed matrix file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Lil,
    Coo,
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Representation::Lil => write!(f, "lil"),
            Representation::Coo => write!(f, "coo"),
        }
    }
}

#[derive(Debug)]
enum Storage {
    /// Per-row (column_key, value) pairs, sorted by column_key.
    Lil(Vec<Vec<(usize, f64)>>),
    /// Per-column (row_key, value) pairs, sorted by row_key; the map itself
    /// is the per-column index over the triple list.
    Coo(BTreeMap<usize, Vec<(usize, f64)>>),
}

#[derive(Debug)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    storage: Storage,
    touched: AtomicU64,
}

impl Clone for SparseMatrix {
    fn clone(&self) -> Self {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            storage: match &self.storage {
                Storage::Lil(r) => Storage::Lil(r.clone()),
                Storage::Coo(c) => Storage::Coo(c.clone()),
            },
            touched: AtomicU64::new(self.touched.load(Ordering::Relaxed)),
        }
    }
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, repr: Representation) -> Self {
        let storage = match repr {
            Representation::Lil => Storage::Lil(vec![Vec::new(); rows]),
            Representation::Coo => Storage::Coo(BTreeMap::new()),
        };
        SparseMatrix { rows, cols, storage, touched: AtomicU64::new(0) }
    }

    /// Build from (row, col, value) triples; zeros are dropped.
    pub fn from_triples(
        rows: usize,
        cols: usize,
        repr: Representation,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut m = SparseMatrix::new(rows, cols, repr);
        for (r, c, v) in triples {
            m.set_unchecked(r, c, v);
        }
        m.normalize();
        m
    }

    /// Build an LIL matrix from per-row pair lists (pairs need not be sorted).
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut m = SparseMatrix { rows: n, cols, storage: Storage::Lil(rows), touched: AtomicU64::new(0) };
        m.normalize();
        m
    }

    fn set_unchecked(&mut self, row: usize, col: usize, value: f64) {
        if value == 0.0 {
            return;
        }
        self.rows = self.rows.max(row + 1);
        self.cols = self.cols.max(col + 1);
        match &mut self.storage {
            Storage::Lil(r) => {
                if r.len() < self.rows {
                    r.resize(self.rows, Vec::new());
                }
                r[row].push((col, value));
            }
            Storage::Coo(c) => c.entry(col).or_default().push((row, value)),
        }
    }

    fn normalize(&mut self) {
        match &mut self.storage {
            Storage::Lil(rows) => {
                if rows.len() < self.rows {
                    rows.resize(self.rows, Vec::new());
                }
                for row in rows {
                    row.sort_by_key(|&(c, _)| c);
                    row.dedup_by_key(|&mut (c, _)| c);
                    row.retain(|&(_, v)| v != 0.0);
                }
            }
            Storage::Coo(cols) => {
                for col in cols.values_mut() {
                    col.sort_by_key(|&(r, _)| r);
                    col.dedup_by_key(|&mut (r, _)| r);
                    col.retain(|&(_, v)| v != 0.0);
                }
                cols.retain(|_, v| !v.is_empty());
            }
        }
    }

    pub fn representation(&self) -> Representation {
        match self.storage {
            Storage::Lil(_) => Representation::Lil,
            Storage::Coo(_) => Representation::Coo,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Lil(rows) => rows.iter().map(Vec::len).sum(),
            Storage::Coo(cols) => cols.values().map(Vec::len).sum(),
        }
    }

    /// Entries visited by operations since the last reset.
    pub fn touched(&self) -> u64 {
        self.touched.load(Ordering::Relaxed)
    }

    pub fn reset_touched(&self) {
        self.touched.store(0, Ordering::Relaxed);
    }

    fn touch(&self, n: u64) {
        self.touched.fetch_add(n, Ordering::Relaxed);
    }

    /// Sorted (column_key, value) pairs of one row.
    ///
    /// For LIL this touches exactly the row's entries; for COO the row is
    /// assembled by scanning the triple list.
    pub fn get_row(&self, row: usize) -> Result<Vec<(usize, f64)>, SparseError> {
        if row >= self.rows {
            return Err(SparseError::RowOutOfRange { row, rows: self.rows });
        }
        match &self.storage {
            Storage::Lil(rows) => {
                let r = rows[row].clone();
                self.touch(r.len() as u64);
                Ok(r)
            }
            Storage::Coo(cols) => {
                let mut out = Vec::new();
                for (&col, entries) in cols {
                    self.touch(entries.len() as u64);
                    for &(r, v) in entries {
                        if r == row {
                            out.push((col, v));
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Replace all entries of `column_key` with the given (row, value) pairs.
    ///
    /// COO only: labels are mutable during development; production (LIL)
    /// labels are immutable. Zero values drop their entries, so an all-zero
    /// upsert removes the column. Touches O(prior nnz + new entries).
    pub fn upsert_column(
        &mut self,
        column_key: usize,
        entries: &[(usize, f64)],
    ) -> Result<(), SparseError> {
        let repr = self.representation();
        let Storage::Coo(cols) = &mut self.storage else {
            return Err(SparseError::RepresentationError {
                required: Representation::Coo,
                actual: repr,
            });
        };
        let old = cols.remove(&column_key).unwrap_or_default();
        self.touched.fetch_add(old.len() as u64, Ordering::Relaxed);
        let mut fresh: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for &(row, value) in entries {
            if row >= self.rows {
                cols.insert(column_key, old);
                return Err(SparseError::RowOutOfRange { row, rows: self.rows });
            }
            if value != 0.0 {
                fresh.push((row, value));
            }
        }
        self.touched.fetch_add(fresh.len() as u64, Ordering::Relaxed);
        fresh.sort_by_key(|&(r, _)| r);
        fresh.dedup_by_key(|&mut (r, _)| r);
        if !fresh.is_empty() {
            cols.insert(column_key, fresh);
            self.cols = self.cols.max(column_key + 1);
        }
        Ok(())
    }

    /// Canonical (row, col, value) triples sorted by (row, col).
    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        match &self.storage {
            Storage::Lil(rows) => {
                for (r, row) in rows.iter().enumerate() {
                    out.extend(row.iter().map(|&(c, v)| (r, c, v)));
                }
            }
            Storage::Coo(cols) => {
                for (&c, entries) in cols {
                    out.extend(entries.iter().map(|&(r, v)| (r, c, v)));
                }
                out.sort_unstable_by_key(|&(r, c, _)| (r, c));
            }
        }
        out
    }

    /// Value-preserving conversion; round trips are identity.
    pub fn convert(&self, target: Representation) -> SparseMatrix {
        SparseMatrix::from_triples(self.rows, self.cols, target, self.triples())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.cols]; self.rows];
        for (r, c, v) in self.triples() {
            dense[r][c] = v;
        }
        dense
    }

    /// Write as a triplet text file with a self-describing header line.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), SparseError> {
        writeln!(w, "repr={} rows={} cols={} nnz={}", self.representation(), self.rows, self.cols, self.nnz())?;
        for (r, c, v) in self.triples() {
            writeln!(w, "{} {} {}", r, c, v)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<SparseMatrix, SparseError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| SparseError::Malformed { line: 1, reason: "missing header".into() })??;
        let mut repr = None;
        let mut rows = None;
        let mut cols = None;
        for field in header.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| SparseError::Malformed {
                line: 1,
                reason: format!("bad header field {field:?}"),
            })?;
            match key {
                "repr" => {
                    repr = Some(match value {
                        "lil" => Representation::Lil,
                        "coo" => Representation::Coo,
                        other => {
                            return Err(SparseError::Malformed {
                                line: 1,
                                reason: format!("unknown representation {other:?}"),
                            })
                        }
                    })
                }
                "rows" => rows = value.parse().ok(),
                "cols" => cols = value.parse().ok(),
                "nnz" => {}
                _ => {}
            }
        }
        let (repr, rows, cols) = match (repr, rows, cols) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(SparseError::Malformed { line: 1, reason: "incomplete header".into() }),
        };
        let mut triples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>, what: &str| {
                s.and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| SparseError::Malformed {
                    line: i + 2,
                    reason: format!("bad {what}"),
                })
            };
            let r = parse(parts.next(), "row")? as usize;
            let c = parse(parts.next(), "col")? as usize;
            let v = parse(parts.next(), "value")?;
            triples.push((r, c, v));
        }
        Ok(SparseMatrix::from_triples(rows, cols, repr, triples))
    }
}

impl PartialEq for SparseMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.representation() == other.representation()
            && self.triples() == other.triples()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Vec<(usize, usize, f64)> {
        vec![(0, 2, 1.0), (0, 5, 1.0), (2, 1, -1.0), (3, 5, 1.0)]
    }

    #[test]
    fn lil_row_retrieval_touches_only_the_row() {
        let m = SparseMatrix::from_triples(4, 6, Representation::Lil, sample());
        m.reset_touched();
        assert_eq!(m.get_row(0).unwrap(), vec![(2, 1.0), (5, 1.0)]);
        assert_eq!(m.touched(), 2);
        m.reset_touched();
        assert_eq!(m.get_row(1).unwrap(), vec![]);
        assert_eq!(m.touched(), 0);
    }

    #[test]
    fn coo_row_assembly_scans() {
        let lil = SparseMatrix::from_triples(4, 6, Representation::Lil, sample());
        let coo = SparseMatrix::from_triples(4, 6, Representation::Coo, sample());
        for r in 0..4 {
            assert_eq!(lil.get_row(r).unwrap(), coo.get_row(r).unwrap());
        }
        coo.reset_touched();
        coo.get_row(0).unwrap();
        assert_eq!(coo.touched(), coo.nnz() as u64, "COO row assembly scans the triples");
    }

    #[test]
    fn row_out_of_range() {
        let m = SparseMatrix::new(3, 3, Representation::Lil);
        assert!(matches!(m.get_row(3), Err(SparseError::RowOutOfRange { row: 3, rows: 3 })));
    }

    #[test]
    fn upsert_column_replaces_and_counts() {
        let mut m = SparseMatrix::from_triples(10, 3, Representation::Coo, Vec::new());
        m.upsert_column(1, &[(0, 1.0), (4, -1.0), (7, 1.0)]).unwrap();
        assert_eq!(m.nnz(), 3);
        m.reset_touched();
        m.upsert_column(1, &[(2, 1.0), (3, 1.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.touched(), 3 + 2);
        // All-zero upsert removes the column entirely.
        m.upsert_column(1, &[(2, 0.0)]).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.triples(), vec![]);
    }

    #[test]
    fn upsert_rejected_on_lil() {
        let mut m = SparseMatrix::new(3, 3, Representation::Lil);
        assert!(matches!(
            m.upsert_column(0, &[(0, 1.0)]),
            Err(SparseError::RepresentationError { .. })
        ));
    }

    #[test]
    fn upsert_grows_column_space() {
        let mut m = SparseMatrix::new(5, 2, Representation::Coo);
        m.upsert_column(6, &[(1, 1.0)]).unwrap();
        assert_eq!(m.shape(), (5, 7));
    }

    #[test]
    fn conversion_round_trip_identity() {
        let coo = SparseMatrix::from_triples(4, 6, Representation::Coo, sample());
        let back = coo.convert(Representation::Lil).convert(Representation::Coo);
        assert_eq!(back, coo);
        let empty = SparseMatrix::new(0, 0, Representation::Coo);
        assert_eq!(empty.convert(Representation::Lil).convert(Representation::Coo), empty);
    }

    #[test]
    fn random_matrices_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let rows = rng.gen_range(1..20);
            let cols = rng.gen_range(1..20);
            let mut dense = vec![vec![0.0f64; cols]; rows];
            let mut triples = Vec::new();
            for _ in 0..rng.gen_range(0..60) {
                let (r, c) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
                let v = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                dense[r][c] = v;
                triples.push((r, c, v));
            }
            // Later triples overwrite earlier ones in the dense mirror; the
            // sparse build dedups keeping the first, so rebuild from dense.
            let from_dense: Vec<(usize, usize, f64)> = dense
                .iter()
                .enumerate()
                .flat_map(|(r, row)| {
                    row.iter().enumerate().filter(|(_, &v)| v != 0.0).map(move |(c, &v)| (r, c, v))
                })
                .collect();
            let lil = SparseMatrix::from_triples(rows, cols, Representation::Lil, from_dense.clone());
            let coo = SparseMatrix::from_triples(rows, cols, Representation::Coo, from_dense);
            assert_eq!(lil.to_dense(), dense);
            assert_eq!(coo.to_dense(), dense);
            assert_eq!(lil.convert(Representation::Coo), coo);
        }
    }

    #[test]
    fn coo_upserts_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = 15;
        let mut m = SparseMatrix::new(rows, 4, Representation::Coo);
        let mut dense = vec![vec![0.0f64; 8]; rows];
        for _ in 0..40 {
            let col = rng.gen_range(0..8);
            let n = rng.gen_range(0..6);
            let entries: Vec<(usize, f64)> = (0..n)
                .map(|_| (rng.gen_range(0..rows), if rng.gen_bool(0.3) { 0.0 } else { 1.0 }))
                .collect();
            m.upsert_column(col, &entries).unwrap();
            for row in dense.iter_mut() {
                row[col] = 0.0;
            }
            // Duplicate rows keep the first entry, matching upsert's dedup.
            let mut seen = std::collections::HashSet::new();
            for &(r, v) in &entries {
                if seen.insert(r) {
                    dense[r][col] = v;
                }
            }
        }
        let (r, c) = m.shape();
        let mut mirror = vec![vec![0.0; c]; r];
        for (i, row) in dense.iter().enumerate() {
            mirror[i][..c.min(8)].copy_from_slice(&row[..c.min(8)]);
        }
        assert_eq!(m.to_dense(), mirror);
    }

    #[test]
    fn file_round_trip_preserves_everything() {
        for repr in [Representation::Lil, Representation::Coo] {
            let m = SparseMatrix::from_triples(4, 6, repr, sample());
            let mut buf = Vec::new();
            m.write(&mut buf).unwrap();
            let back = SparseMatrix::read(std::io::Cursor::new(buf)).unwrap();
            assert_eq!(back, m);
        }
    }
}

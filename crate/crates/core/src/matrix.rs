//! Compressed sparse column and dense row-major matrices, plus the
//! `m n nnz` / `row col value` triplet text format used for exports.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::InvalidParameter(format!(
                    "triplet ({r},{c}) outside {nrows}x{ncols}"
                )));
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by_key(|t| (t.1, t.0));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let m = CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        };
        Ok(m.without_zeros())
    }

    /// Builds from per-column `(row, value)` lists already sorted by row.
    pub fn from_columns(nrows: usize, columns: Vec<Vec<(usize, f64)>>) -> Self {
        let ncols = columns.len();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for col in columns {
            for (r, v) in col {
                debug_assert!(r < nrows);
                if v != 0.0 {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    fn without_zeros(self) -> Self {
        if self.values.iter().all(|&v| v != 0.0) {
            return self;
        }
        let columns = (0..self.ncols)
            .map(|j| self.column(j).filter(|&(_, v)| v != 0.0).collect())
            .collect();
        CscMatrix::from_columns(self.nrows, columns)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.row_idx[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn column_nnz(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - self.col_ptr[j]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        match self.row_idx[a..b].binary_search(&i) {
            Ok(p) => self.values[a + p],
            Err(_) => 0.0,
        }
    }

    /// All nonzeros in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| self.column(j).map(move |(i, v)| (i, j, v)))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Row-major copy: per row, `(col, value)` sorted by column.
    pub fn to_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nrows];
        for (i, j, v) in self.triplets() {
            rows[i].push((j, v));
        }
        rows
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn write_triplets<W: Write>(&self, out: W) -> Result<()> {
        write_triplets(self.nrows, self.ncols, self.triplets().collect::<Vec<_>>().into_iter(), out)
    }

    pub fn read_triplets<R: BufRead>(input: R, source_name: &str) -> Result<Self> {
        let (m, n, t) = read_triplets(input, source_name)?;
        CscMatrix::from_triplets(m, n, &t)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "dense matrix shape mismatch");
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        DenseMatrix::from_vec(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                for (ov, bv) in o.iter_mut().zip(other.row(l)) {
                    *ov += av * bv;
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Writes entries whose value exceeds `threshold`.
    pub fn write_triplets<W: Write>(&self, threshold: f64, out: W) -> Result<()> {
        let entries = (0..self.rows).flat_map(|i| {
            (0..self.cols).filter_map(move |j| {
                let v = self[(i, j)];
                (v > threshold).then_some((i, j, v))
            })
        });
        write_triplets(self.rows, self.cols, entries.collect::<Vec<_>>().into_iter(), out)
    }

    pub fn read_triplets<R: BufRead>(input: R, source_name: &str) -> Result<Self> {
        let (m, n, t) = read_triplets(input, source_name)?;
        let mut d = DenseMatrix::zeros(m, n);
        for (i, j, v) in t {
            d[(i, j)] = v;
        }
        Ok(d)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn write_triplets<W: Write>(
    nrows: usize,
    ncols: usize,
    entries: impl ExactSizeIterator<Item = (usize, usize, f64)>,
    mut out: W,
) -> Result<()> {
    writeln!(out, "{} {} {}", nrows, ncols, entries.len())?;
    for (i, j, v) in entries {
        writeln!(out, "{i} {j} {v}")?;
    }
    Ok(())
}

type Triplets = (usize, usize, Vec<(usize, usize, f64)>);

fn read_triplets<R: BufRead>(input: R, source_name: &str) -> Result<Triplets> {
    let mut lines = input.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) => {
                let l = l?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
            None => return Err(Error::parse(source_name, 1, "missing header")),
        }
    };
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(source_name, 1, e))?;
    let [m, n, nnz] = dims[..] else {
        return Err(Error::parse(source_name, 1, "header must be `m n nnz`"));
    };
    let mut triplets = Vec::with_capacity(nnz);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let mut field = |what: &str| {
            parts
                .next()
                .ok_or_else(|| Error::parse(source_name, line_no, format!("missing {what}")))
        };
        let r: usize = field("row")?.parse().map_err(|e| Error::parse(source_name, line_no, e))?;
        let c: usize = field("col")?.parse().map_err(|e| Error::parse(source_name, line_no, e))?;
        let v: f64 = field("value")?.parse().map_err(|e| Error::parse(source_name, line_no, e))?;
        if r >= m || c >= n {
            return Err(Error::parse(source_name, line_no, "index out of range"));
        }
        triplets.push((r, c, v));
    }
    if triplets.len() != nnz {
        return Err(Error::parse(
            source_name,
            1,
            format!("header declares {nnz} entries, found {}", triplets.len()),
        ));
    }
    Ok((m, n, triplets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_sum_and_zeros_drop() {
        let m = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 0.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn header_mismatch_rejected() {
        let text = "2 2 3\n0 0 1.5\n1 1 2\n";
        assert!(CscMatrix::read_triplets(text.as_bytes(), "t").is_err());
    }

    #[test]
    fn dense_export_thresholds() {
        let d = DenseMatrix::from_rows(&[vec![1.0, 1e-12], vec![0.0, 0.5]]);
        let mut buf = Vec::new();
        d.write_triplets(1e-9, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "2 2 2\n0 0 1\n1 1 0.5\n");
    }

    proptest! {
        #[test]
        fn triplet_text_round_trips(entries in prop::collection::vec((0usize..6, 0usize..5, 0.001f64..1e6), 0..30)) {
            let m = CscMatrix::from_triplets(6, 5, &entries).unwrap();
            let mut buf = Vec::new();
            m.write_triplets(&mut buf).unwrap();
            let back = CscMatrix::read_triplets(buf.as_slice(), "t").unwrap();
            prop_assert_eq!(back, m);
        }
    }
}

//! Minimal triplet/row sparse matrix used to assemble constraint blocks.

use nalgebra::{DMatrix, DVector};

/// Sparse matrix stored as a list of rows, each row a list of `(column, value)`
/// pairs. Duplicate column entries inside a row are summed on compression.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseMatrix {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, rows: Vec::new() }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { ncols, rows: vec![Vec::new(); nrows] }
    }

    pub fn identity(n: usize) -> Self {
        Self { ncols: n, rows: (0..n).map(|i| vec![(i, 1.0)]).collect() }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = Self::new(m.ncols());
        for r in 0..m.nrows() {
            out.push_row(
                (0..m.ncols())
                    .filter_map(|c| {
                        let v = m[(r, c)];
                        (v != 0.0).then_some((c, v))
                    })
                    .collect(),
            );
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    /// Appends a row. Panics if a column index is out of range.
    pub fn push_row(&mut self, mut row: Vec<(usize, f64)>) {
        assert!(row.iter().all(|&(c, _)| c < self.ncols), "column index out of range");
        compress(&mut row);
        self.rows.push(row);
    }

    /// Adds `val` to entry `(r, c)`, keeping the row sorted.
    pub fn add_entry(&mut self, r: usize, c: usize, val: f64) {
        assert!(c < self.ncols, "column index out of range");
        let row = &mut self.rows[r];
        match row.binary_search_by_key(&c, |&(col, _)| col) {
            Ok(k) => row[k].1 += val,
            Err(k) => row.insert(k, (c, val)),
        }
    }

    /// Appends all rows of `other`, shifting its columns by `col_offset`.
    pub fn append(&mut self, other: &SparseMatrix, col_offset: usize) {
        assert!(other.ncols + col_offset <= self.ncols);
        for row in &other.rows {
            self.rows.push(row.iter().map(|&(c, v)| (c + col_offset, v)).collect());
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.iter().map(|&(c, v)| v * x[c]).sum::<f64>()),
        )
    }

    pub fn tr_mul_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.rows.len());
        let mut out = DVector::zeros(self.ncols);
        for (row, &yr) in self.rows.iter().zip(y.iter()) {
            if yr != 0.0 {
                for &(c, v) in row {
                    out[c] += v * yr;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Column-compressed `(colptr, rowval, nzval)` triple, optionally keeping
    /// only the upper triangle (for symmetric objective matrices).
    pub fn to_csc_parts(&self, upper_only: bool) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut counts = vec![0usize; self.ncols + 1];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                if v != 0.0 && (!upper_only || r <= c) {
                    counts[c + 1] += 1;
                }
            }
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let nnz = counts[self.ncols];
        let mut next = counts.clone();
        let mut rowval = vec![0usize; nnz];
        let mut nzval = vec![0.0; nnz];
        // rows are visited in increasing order, so each column ends up sorted
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                if v != 0.0 && (!upper_only || r <= c) {
                    let k = next[c];
                    rowval[k] = r;
                    nzval[k] = v;
                    next[c] += 1;
                }
            }
        }
        (counts, rowval, nzval)
    }
}

fn compress(row: &mut Vec<(usize, f64)>) {
    row.sort_by_key(|&(c, _)| c);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for &(c, v) in row.iter() {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => out.push((c, v)),
        }
    }
    out.retain(|&(_, v)| v != 0.0);
    *row = out;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut m = SparseMatrix::new(3);
        m.push_row(vec![(2, 1.0), (0, 2.0), (2, 3.0)]);
        assert_eq!(m.row(0), &[(0, 2.0), (2, 4.0)]);
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert_eq!(m.mul_vec(&x)[0], 6.0);
    }

    #[test]
    fn csc_upper_triangle() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let (colptr, rowval, nzval) = SparseMatrix::from_dense(&d).to_csc_parts(true);
        assert_eq!(colptr, vec![0, 1, 3]);
        assert_eq!(rowval, vec![0, 0, 1]);
        assert_eq!(nzval, vec![2.0, 1.0, 3.0]);
    }

    #[test]
    fn transpose_product_matches_dense() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, -1.0, 4.0]);
        let s = SparseMatrix::from_dense(&d);
        let y = DVector::from_vec(vec![0.5, 2.0]);
        assert_eq!(s.tr_mul_vec(&y), d.transpose() * y);
    }
}

use alloc::vec;
use alloc::vec::Vec;

/// Compressed sparse row matrix. Symmetric operators are stored in full.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
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

    /// Iterates over the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.nrows).map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()).sum()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.triplets().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// Principal submatrix on `indices` (which must be strictly increasing).
    pub fn principal_submatrix(&self, indices: &[usize]) -> CsrMatrix {
        let mut position = vec![usize::MAX; self.ncols];
        for (k, &i) in indices.iter().enumerate() {
            position[i] = k;
        }
        let mut triplets = Vec::new();
        for (k, &i) in indices.iter().enumerate() {
            for (j, v) in self.row(i) {
                if position[j] != usize::MAX {
                    triplets.push((k, position[j], v));
                }
            }
        }
        CsrMatrix::from_triplets(indices.len(), indices.len(), &triplets)
    }

    /// Copy of `self` with `diag` added to the main diagonal.
    pub fn with_added_diagonal(&self, diag: &[f64]) -> CsrMatrix {
        assert_eq!(diag.len(), self.nrows);
        let mut triplets: Vec<(usize, usize, f64)> = self.triplets().collect();
        triplets.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.nrows * self.ncols];
        for (i, j, v) in self.triplets() {
            dense[i * self.ncols + j] = v;
        }
        dense
    }
}

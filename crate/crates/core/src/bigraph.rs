//! Sparse bipartite adjacency storage.
//!
//! A [`BipartiteGraph`] holds an `m x n` matrix of non-negative integer edge
//! weights in both row-major and column-major compressed form, together with
//! the row and column degree vectors. It is immutable once built.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    m: usize,
    n: usize,
    // row-major view
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<u64>,
    // column-major view
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_vals: Vec<u64>,
    row_degrees: Vec<u64>,
    col_degrees: Vec<u64>,
    total: u64,
}

/// Which side of the bipartite graph an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Rows,
    Cols,
}

impl BipartiteGraph {
    /// Builds a graph from `(row, col, weight)` triples. Duplicate pairs are
    /// summed and zero weights are dropped.
    pub fn from_triples<I>(m: usize, n: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, u64)>,
    {
        if m == 0 || n == 0 {
            return Err(Error::EmptyShape { m, n });
        }
        let mut summed: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (row, col, w) in triples {
            if row >= m || col >= n {
                return Err(Error::IndexOutOfRange { row, col, m, n });
            }
            if w > 0 {
                *summed.entry((row, col)).or_insert(0) += w;
            }
        }

        let nnz = summed.len();
        let mut row_ptr = vec![0usize; m + 1];
        let mut row_cols = Vec::with_capacity(nnz);
        let mut row_vals = Vec::with_capacity(nnz);
        let mut row_degrees = vec![0u64; m];
        let mut col_degrees = vec![0u64; n];
        let mut col_counts = vec![0usize; n];
        for (&(i, j), &a) in &summed {
            row_ptr[i + 1] += 1;
            row_cols.push(j);
            row_vals.push(a);
            row_degrees[i] += a;
            col_degrees[j] += a;
            col_counts[j] += 1;
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }

        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + col_counts[j];
        }
        let mut cursor = col_ptr.clone();
        let mut col_rows = vec![0usize; nnz];
        let mut col_vals = vec![0u64; nnz];
        // BTreeMap iterates in (row, col) order, so each column's rows come out ascending.
        for (&(i, j), &a) in &summed {
            let at = cursor[j];
            col_rows[at] = i;
            col_vals[at] = a;
            cursor[j] += 1;
        }

        let total = row_degrees.iter().sum();
        Ok(Self {
            m,
            n,
            row_ptr,
            row_cols,
            row_vals,
            col_ptr,
            col_rows,
            col_vals,
            row_degrees,
            col_degrees,
            total,
        })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    /// Number of stored (non-zero) entries.
    pub fn nnz(&self) -> usize {
        self.row_vals.len()
    }

    /// Total edge weight `sum_ij A_ij`.
    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn row_degrees(&self) -> &[u64] {
        &self.row_degrees
    }

    pub fn col_degrees(&self) -> &[u64] {
        &self.col_degrees
    }

    /// Non-zero entries of row `i` as `(col, weight)`, ascending in `col`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.row_cols[range.clone()]
            .iter()
            .copied()
            .zip(self.row_vals[range].iter().copied())
    }

    /// Non-zero entries of column `j` as `(row, weight)`, ascending in `row`.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.col_rows[range.clone()]
            .iter()
            .copied()
            .zip(self.col_vals[range].iter().copied())
    }

    /// All non-zero entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.m).flat_map(move |i| self.row(i).map(move |(j, a)| (i, j, a)))
    }

    /// Entry `A_ij`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> u64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.row_cols[range.clone()].binary_search(&j) {
            Ok(pos) => self.row_vals[range.start + pos],
            Err(_) => 0,
        }
    }

    /// The transposed graph (`n x m`).
    pub fn transpose(&self) -> Self {
        Self {
            m: self.n,
            n: self.m,
            row_ptr: self.col_ptr.clone(),
            row_cols: self.col_rows.clone(),
            row_vals: self.col_vals.clone(),
            col_ptr: self.row_ptr.clone(),
            col_rows: self.row_cols.clone(),
            col_vals: self.row_vals.clone(),
            row_degrees: self.col_degrees.clone(),
            col_degrees: self.row_degrees.clone(),
            total: self.total,
        }
    }

    /// Largest stored weight (0 for an empty graph).
    pub fn max_weight(&self) -> u64 {
        self.row_vals.iter().copied().max().unwrap_or(0)
    }

    /// Global density `D = sum_ij A_ij / (m n)`.
    pub fn density(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::ZeroDensity);
        }
        Ok(self.total as f64 / (self.m as f64 * self.n as f64))
    }

    /// Degree parameters held fixed during fitting:
    /// `theta_i = d_i / (n sqrt(D))`, `lambda_j = d_j / (m sqrt(D))`.
    ///
    /// With this scaling `sum(theta) * sum(lambda)` equals the total edge weight.
    pub fn scaled_degree_params(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let root_d = self.density()?.sqrt();
        let row_scale = self.n as f64 * root_d;
        let col_scale = self.m as f64 * root_d;
        let theta = self.row_degrees.iter().map(|&d| d as f64 / row_scale).collect();
        let lambda = self.col_degrees.iter().map(|&d| d as f64 / col_scale).collect();
        Ok((theta, lambda))
    }
}

/// Convenience wrapper matching the triple-list constructor.
pub fn build_graph(m: usize, n: usize, triples: &[(usize, usize, u64)]) -> Result<BipartiteGraph> {
    BipartiteGraph::from_triples(m, n, triples.iter().copied())
}

//! Undirected graphs and the 1-hop graph convolution filters built from them.
//!
//! Every filter is stored row-compressed with sorted column indices, so the
//! nonzero pattern of row `i` is `{i} ∪ neighbors(i)` and can be scanned
//! contiguously when extracting ego-graphs.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest index set for which dense principal submatrices are materialized.
pub const DENSE_GUARD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

/// Undirected weighted graph with each edge stored once as `u < v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Validates and canonicalizes an edge list. `position` in errors is the
    /// zero-based index of the offending edge in `edges`.
    pub fn new<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut seen = HashSet::new();
        let mut canon = Vec::new();
        for (position, (u, v, w)) in edges.into_iter().enumerate() {
            for index in [u, v] {
                if index >= n {
                    return Err(Error::EdgeOutOfRange { position, index, n });
                }
            }
            if u == v {
                return Err(Error::SelfLoop { position, node: u });
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidWeight { position, weight: w });
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            if !seen.insert((a, b)) {
                return Err(Error::DuplicateEdge { position, u, v });
            }
            canon.push(Edge { u: a, v: b, w });
        }
        canon.sort_by_key(|e| (e.u, e.v));

        let mut adjacency = vec![Vec::new(); n];
        for e in &canon {
            adjacency[e.u].push((e.v, e.w));
            adjacency[e.v].push((e.u, e.w));
        }
        for row in &mut adjacency {
            row.sort_by_key(|&(j, _)| j);
        }
        Ok(Graph { n, edges: canon, adjacency })
    }

    pub fn unweighted(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(n, edges.iter().map(|&(u, v)| (u, v, 1.0)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Sorted `(neighbor, weight)` pairs.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Number of incident edges.
    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Sum of incident edge weights; the diagonal of the degree matrix.
    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.adjacency[i].iter().map(|&(_, w)| w).sum()
    }

    pub fn weighted_degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.weighted_degree(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// `A + I`
    Unnormalized,
    /// `D^{-1/2} A D^{-1/2} + I`
    SymNormalized,
    /// `D^{-1} A + I`
    RandomWalk,
    /// `I`; a degenerate filter that decouples nodes.
    Identity,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [
        FilterKind::Unnormalized,
        FilterKind::SymNormalized,
        FilterKind::RandomWalk,
        FilterKind::Identity,
    ];

    /// The three filters analysed for stability.
    pub const STUDIED: [FilterKind; 3] = [
        FilterKind::Unnormalized,
        FilterKind::SymNormalized,
        FilterKind::RandomWalk,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            FilterKind::Unnormalized => "unnorm",
            FilterKind::SymNormalized => "symnorm",
            FilterKind::RandomWalk => "rw",
            FilterKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.short_name() == s)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Sparse `g(L)` in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    n: usize,
    kind: FilterKind,
    symmetric: bool,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl FilterMatrix {
    pub fn build(g: &Graph, kind: FilterKind) -> Self {
        let n = g.n();
        let degrees = g.weighted_degrees();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);

        for i in 0..n {
            let neighbors: &[(usize, f64)] = match kind {
                FilterKind::Identity => &[],
                _ => g.neighbors(i),
            };
            // neighbors are sorted, so the diagonal is spliced in at its rank
            let mut diag_done = false;
            for &(j, w) in neighbors {
                if !diag_done && j > i {
                    col_idx.push(i);
                    values.push(1.0);
                    diag_done = true;
                }
                let value = match kind {
                    FilterKind::Unnormalized => w,
                    // degrees of both endpoints are positive whenever an edge exists;
                    // isolated nodes never reach this branch (0/0 := 0)
                    FilterKind::SymNormalized => w / (degrees[i] * degrees[j]).sqrt(),
                    FilterKind::RandomWalk => w / degrees[i],
                    FilterKind::Identity => unreachable!(),
                };
                col_idx.push(j);
                values.push(value);
            }
            if !diag_done {
                col_idx.push(i);
                values.push(1.0);
            }
            row_ptr.push(col_idx.len());
        }

        let mut m = FilterMatrix { n, kind, symmetric: true, row_ptr, col_idx, values };
        m.symmetric = match kind {
            FilterKind::RandomWalk => m.is_exactly_symmetric(),
            _ => true,
        };
        m
    }

    fn is_exactly_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .all(|(&j, &v)| self.get(j, i) == v)
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices (ascending) and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `y = M x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `y = Mᵀ x`
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        y.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let all: Vec<usize> = (0..self.n).collect();
        self.principal_submatrix(&all)
    }

    /// Dense restriction of `g(L)` to the rows and columns in `idx`, which must
    /// be sorted, unique, and in range.
    pub fn principal_submatrix(&self, idx: &[usize]) -> Result<DenseMatrix> {
        if idx.len() > DENSE_GUARD {
            return Err(Error::SizeGuard { size: idx.len(), limit: DENSE_GUARD });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n) {
            return Err(Error::IndexOutOfRange { index: bad, size: self.n });
        }
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("principal submatrix indices must be sorted and unique"));
        }
        Ok(self.gather(idx))
    }

    /// Like [`principal_submatrix`](Self::principal_submatrix) but for any
    /// ordering of distinct in-range indices.
    pub(crate) fn gather(&self, idx: &[usize]) -> DenseMatrix {
        let q = idx.len();
        let mut out = DenseMatrix::zeros(q, q);
        for (a, &i) in idx.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (b, &j) in idx.iter().enumerate() {
                if let Ok(k) = cols.binary_search(&j) {
                    out.set(a, b, vals[k]);
                }
            }
        }
        out
    }
}

/// Row-major dense matrix, used for ego-graph blocks and as an eigen oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch { expected: c, actual: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, actual: other.rows });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }
}

//! Ego-graphs: the principal block of `g(L)` around one node together with
//! the features of that block. A one-layer model's output at a node depends
//! only on its ego-graph.

use rayon::prelude::*;

use crate::graph::{DenseMatrix, FilterMatrix};
use crate::model::Activation;
use crate::{Error, Result};

/// Tolerance for treating a feature row as unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Node features, one row of dimension `d_in` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d_in: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d_in: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d_in {
            return Err(Error::DimensionMismatch { expected: n * d_in, actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(FeatureMatrix { n, d_in, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d_in = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d_in) {
            return Err(Error::DimensionMismatch { expected: d_in, actual: bad.len() });
        }
        Self::new(rows.len(), d_in, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d_in..(i + 1) * self.d_in]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d_in.max(1)).take(self.n)
    }

    /// True when every row has L2 norm at most `1 + UNIT_NORM_TOL`.
    pub fn rows_within_unit_ball(&self) -> bool {
        self.rows().all(|r| l2(r) <= 1.0 + UNIT_NORM_TOL)
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub features: FeatureMatrix,
    /// Rows that were all-zero and left untouched.
    pub zero_rows: usize,
}

/// Scales every nonzero row to unit L2 norm.
pub fn normalize_features(x: &FeatureMatrix) -> Normalized {
    let mut data = x.data.clone();
    let mut zero_rows = 0;
    for row in data.chunks_mut(x.d_in.max(1)).take(x.n) {
        let norm = l2(row);
        if norm == 0.0 {
            zero_rows += 1;
            continue;
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Normalized {
        features: FeatureMatrix { n: x.n, d_in: x.d_in, data },
        zero_rows,
    }
}

/// The ego-graph of one node. Local index 0 is the center; the remaining
/// members follow in ascending global order.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoGraph {
    center: usize,
    nodes: Vec<usize>,
    filter_block: DenseMatrix,
    features_block: DenseMatrix,
}

impl EgoGraph {
    pub fn center(&self) -> usize {
        self.center
    }

    /// Local-to-global index map.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.nodes.iter().position(|&g| g == global)
    }

    /// Ego-graph size `q`.
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn filter_block(&self) -> &DenseMatrix {
        &self.filter_block
    }

    pub fn features_block(&self) -> &DenseMatrix {
        &self.features_block
    }

    pub fn d_in(&self) -> usize {
        self.features_block.cols()
    }

    /// `Σ_j e_{·j} x_j`, i.e. row 0 of `g_x(L) h_x`.
    pub fn aggregate(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d_in()];
        for (b, &e) in self.filter_block.row(0).iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(self.features_block.row(b)) {
                *o += e * x;
            }
        }
        out
    }

    /// Checks `‖[g_x(L) h_x]_0‖ ≤ λ_{G_x}^max ‖h_x‖_F`, the ego-level step of
    /// the `g_λ` bound. Returns `(lhs / ‖h_x‖_F, λ_{G_x}^max)`; the ratio is 0
    /// when the ego features vanish.
    pub fn ego_norm_bound(&self) -> Result<(f64, f64)> {
        let lambda = crate::spectral::dense_spectrum(&self.filter_block)?
            .first()
            .map_or(0.0, |v| v.abs());
        let h = self.features_block.frobenius();
        let lhs = if h == 0.0 { 0.0 } else { l2(&self.aggregate()) / h };
        Ok((lhs, lambda))
    }
}

/// Extracts the ego-graph of `node`; its members are the nonzero columns of
/// row `node` of `g(L)`.
pub fn extract_ego(f: &FilterMatrix, x: &FeatureMatrix, node: usize) -> Result<EgoGraph> {
    if node >= f.n() {
        return Err(Error::IndexOutOfRange { index: node, size: f.n() });
    }
    if x.n() != f.n() {
        return Err(Error::DimensionMismatch { expected: f.n(), actual: x.n() });
    }
    let (cols, _) = f.row(node);
    let mut nodes = Vec::with_capacity(cols.len());
    nodes.push(node);
    nodes.extend(cols.iter().copied().filter(|&j| j != node));

    let filter_block = f.gather(&nodes);
    let mut features_block = DenseMatrix::zeros(nodes.len(), x.d_in());
    for (a, &g) in nodes.iter().enumerate() {
        for (k, &v) in x.row(g).iter().enumerate() {
            features_block.set(a, k, v);
        }
    }
    Ok(EgoGraph { center: node, nodes, filter_block, features_block })
}

/// Single-node output `σ(Σ_j e_{·j} x_jᵀ θ)`.
pub fn node_output(e: &EgoGraph, theta: &[f64], act: Activation) -> Result<f64> {
    if theta.len() != e.d_in() {
        return Err(Error::DimensionMismatch { expected: e.d_in(), actual: theta.len() });
    }
    Ok(act.value(dot(&e.aggregate(), theta)))
}

/// Aggregated feature vectors `(g(L) X)_i` for all nodes, straight from the
/// sparse rows.
pub fn aggregate_all(f: &FilterMatrix, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    if x.n() != f.n() {
        return Err(Error::DimensionMismatch { expected: f.n(), actual: x.n() });
    }
    Ok((0..f.n())
        .map(|i| {
            let (cols, vals) = f.row(i);
            let mut out = vec![0.0; x.d_in()];
            for (&j, &e) in cols.iter().zip(vals) {
                for (o, &v) in out.iter_mut().zip(x.row(j)) {
                    *o += e * v;
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GLambda {
    /// `max_x ‖Σ_j e_{·j} x_j‖₂`
    pub value: f64,
    /// Node attaining the maximum.
    pub node: usize,
    /// Whether every feature row was within the unit ball.
    pub features_normalized: bool,
}

impl GLambda {
    /// `g_λ ≤ λ + tol`
    pub fn within(&self, lambda_max: f64, tol: f64) -> bool {
        self.value <= lambda_max + tol
    }
}

/// Empirical `g_λ` over every node of the graph.
pub fn g_lambda_empirical(f: &FilterMatrix, x: &FeatureMatrix) -> Result<GLambda> {
    if x.n() != f.n() {
        return Err(Error::DimensionMismatch { expected: f.n(), actual: x.n() });
    }
    let (value, node) = (0..f.n())
        .into_par_iter()
        .map(|i| {
            let (cols, vals) = f.row(i);
            let mut out = vec![0.0; x.d_in()];
            for (&j, &e) in cols.iter().zip(vals) {
                for (o, &v) in out.iter_mut().zip(x.row(j)) {
                    *o += e * v;
                }
            }
            (l2(&out), i)
        })
        .reduce(|| (0.0, 0), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    Ok(GLambda { value, node, features_normalized: x.rows_within_unit_ball() })
}

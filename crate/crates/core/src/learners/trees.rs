//! Least-squares gradient boosting over histogram-binned features.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

const MAX_BINS: usize = 255;

/// Features quantised to at most 255 bins each. Bin `b` of feature `f` holds
/// the values `x <= edges[f][b]` that are above the previous edge.
pub struct BinnedMatrix {
    n_rows: usize,
    n_features: usize,
    /// Column-major bin codes.
    codes: Vec<u8>,
    edges: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn new(x: ArrayView2<'_, f64>) -> Self {
        let (n, d) = x.dim();
        let mut codes = vec![0u8; n * d];
        let mut edges = Vec::with_capacity(d);
        for f in 0..d {
            let col = x.column(f);
            let e = bin_edges(col);
            for (i, &v) in col.iter().enumerate() {
                codes[f * n + i] = e.partition_point(|&edge| edge < v) as u8;
            }
            edges.push(e);
        }
        Self { n_rows: n, n_features: d, codes, edges }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn code(&self, f: usize, i: usize) -> usize {
        self.codes[f * self.n_rows + i] as usize
    }

    fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }
}

/// Split points between distinct values; quantile-spaced when there are more
/// than `MAX_BINS` distinct values.
fn bin_edges(col: ArrayView1<'_, f64>) -> Vec<f64> {
    let mut v: Vec<f64> = col.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    if v.len() <= 1 {
        return Vec::new();
    }
    if v.len() <= MAX_BINS {
        return v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let mut sorted: Vec<f64> = col.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..MAX_BINS)
        .map(|q| {
            let pos = q * n / MAX_BINS;
            0.5 * (sorted[pos - 1] + sorted[pos])
        })
        .collect();
    edges.dedup();
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Least-squares tree on pre-binned inputs; also returns the in-sample fit.
    pub fn fit(binned: &BinnedMatrix, targets: &[f64], min_leaf: usize, max_depth: usize) -> (Self, Vec<f64>) {
        let (tree, leaves) = Self::fit_leaves(binned, targets, min_leaf, max_depth);
        let fitted = leaves.iter().map(|&l| tree.leaf_value(l)).collect();
        (tree, fitted)
    }

    /// Like [`RegressionTree::fit`] but returns the leaf node index of every row.
    pub fn fit_leaves(binned: &BinnedMatrix, targets: &[f64], min_leaf: usize, max_depth: usize) -> (Self, Vec<usize>) {
        let mut tree = RegressionTree { nodes: Vec::new() };
        let mut leaves = vec![0; binned.n_rows()];
        let rows: Vec<usize> = (0..binned.n_rows()).collect();
        tree.grow(binned, targets, rows, min_leaf.max(1), max_depth, &mut leaves);
        (tree, leaves)
    }

    fn leaf_value(&self, node: usize) -> f64 {
        match self.nodes[node] {
            Node::Leaf { value } => value,
            Node::Split { .. } => panic!("node {node} is not a leaf"),
        }
    }

    /// Overwrite the value of leaf `node`.
    pub fn set_leaf_value(&mut self, node: usize, value: f64) {
        match &mut self.nodes[node] {
            Node::Leaf { value: v } => *v = value,
            Node::Split { .. } => panic!("node {node} is not a leaf"),
        }
    }

    fn grow(
        &mut self,
        binned: &BinnedMatrix,
        targets: &[f64],
        rows: Vec<usize>,
        min_leaf: usize,
        depth_left: usize,
        leaves: &mut [usize],
    ) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&i| targets[i]).sum();
        self.nodes.push(Node::Leaf { value: sum / n as f64 });

        let split =
            if depth_left > 0 && n >= 2 * min_leaf { best_split(binned, targets, &rows, sum, min_leaf) } else { None };
        let Some((feature, bin)) = split else {
            for &i in &rows {
                leaves[i] = id;
            }
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| binned.code(feature, i) <= bin);
        let left = self.grow(binned, targets, left_rows, min_leaf, depth_left - 1, leaves);
        let right = self.grow(binned, targets, right_rows, min_leaf, depth_left - 1, leaves);
        self.nodes[id] = Node::Split { feature, threshold: binned.edges[feature][bin], left, right };
        id
    }
}

/// Best (feature, bin) by squared-error reduction subject to `min_leaf`.
fn best_split(
    binned: &BinnedMatrix,
    targets: &[f64],
    rows: &[usize],
    total: f64,
    min_leaf: usize,
) -> Option<(usize, usize)> {
    let n = rows.len();
    let base = total * total / n as f64;
    let mut best: Option<(usize, usize)> = None;
    let mut best_gain = 1e-12 * base.abs().max(1e-12);
    let mut sums = vec![0.0; MAX_BINS + 1];
    let mut counts = vec![0usize; MAX_BINS + 1];
    for f in 0..binned.n_features {
        let nb = binned.n_bins(f);
        if nb < 2 {
            continue;
        }
        sums[..nb].iter_mut().for_each(|s| *s = 0.0);
        counts[..nb].iter_mut().for_each(|c| *c = 0);
        for &i in rows {
            let b = binned.code(f, i);
            sums[b] += targets[i];
            counts[b] += 1;
        }
        let (mut sl, mut nl) = (0.0, 0usize);
        for b in 0..nb - 1 {
            sl += sums[b];
            nl += counts[b];
            let nr = n - nl;
            if nl < min_leaf {
                continue;
            }
            if nr < min_leaf {
                break;
            }
            let sr = total - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - base;
            if gain > best_gain {
                best_gain = gain;
                best = Some((f, b));
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingParams {
    pub n_trees: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    base: f64,
    shrinkage: f64,
    trees: Vec<RegressionTree>,
    n_features: usize,
}

impl BoostedTrees {
    pub fn constant(base: f64, shrinkage: f64, n_features: usize) -> Self {
        Self { base, shrinkage, trees: Vec::new(), n_features }
    }

    /// Least-squares boosting. Returns the model and the training MSE after each tree.
    pub fn fit(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, params: &BoostingParams) -> (Self, Vec<f64>) {
        let binned = BinnedMatrix::new(x);
        let n = y.len();
        let base = y.sum() / n as f64;
        let mut model = Self::constant(base, params.shrinkage, x.ncols());
        let mut pred = vec![base; n];
        let mut resid = vec![0.0; n];
        let mut trace = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            for i in 0..n {
                resid[i] = y[i] - pred[i];
            }
            let (tree, fitted) = RegressionTree::fit(&binned, &resid, params.min_leaf, params.max_depth);
            for i in 0..n {
                pred[i] += params.shrinkage * fitted[i];
            }
            model.trees.push(tree);
            let mse = (0..n).map(|i| (y[i] - pred[i]).powi(2)).sum::<f64>() / n as f64;
            trace.push(mse);
        }
        (model, trace)
    }

    pub fn push_tree(&mut self, tree: RegressionTree) {
        self.trees.push(tree);
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.base + self.shrinkage * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> ndarray::Array1<f64> {
        let mut row = vec![0.0; x.ncols()];
        x.rows()
            .into_iter()
            .map(|r| {
                row.iter_mut().zip(r).for_each(|(d, s)| *d = *s);
                self.predict_row(&row)
            })
            .collect()
    }
}

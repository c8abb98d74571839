//! CART regression trees, random forests and least-squares gradient boosting.
//!
//! Splits send `x[feature] <= threshold` to the left child. Thresholds sit at
//! midpoints between consecutive distinct values. Among splits with equal
//! variance reduction the lowest feature index wins, then the lowest threshold.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("X has {rows} rows but y has {len} entries")]
    LengthMismatch { rows: usize, len: usize },
    #[error("empty training data")]
    Empty,
    #[error("model expects {expected} columns, got {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("non-finite value in training data")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row(feature) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, TreeError> {
        check_columns(self.n_features, x.ncols())?;
        Ok(x.rows().into_iter().map(|r| self.predict_row(|f| r[f])).collect())
    }

    /// Depth of the deepest leaf; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn check_columns(expected: usize, found: usize) -> Result<(), TreeError> {
    if expected != found {
        return Err(TreeError::ColumnMismatch { expected, found });
    }
    Ok(())
}

/// Tree growth limits plus the size of the per-node random feature subset
/// (`None` means every feature).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: None, min_samples_leaf: 1, max_features: None }
    }
}

/// Feature-major copy of the training matrix.
pub struct ColumnData {
    cols: Vec<Vec<f64>>,
    n_rows: usize,
}

impl ColumnData {
    pub fn new(x: ArrayView2<f64>) -> Result<Self, TreeError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TreeError::NonFinite);
        }
        Ok(ColumnData { cols: x.columns().into_iter().map(|c| c.to_vec()).collect(), n_rows: x.nrows() })
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
}

struct Builder<'a> {
    data: &'a ColumnData,
    y: &'a [f64],
    params: TreeParams,
    // One index segment per feature, each sorted by that feature's value.
    order: Vec<Vec<u32>>,
    scratch: Vec<u32>,
    goes_left: Vec<bool>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    n_left: usize,
}

impl Builder<'_> {
    fn leaf_value(&self, start: usize, end: usize) -> f64 {
        let seg = &self.order[0][start..end];
        seg.iter().map(|&i| self.y[i as usize]).sum::<f64>() / seg.len() as f64
    }

    fn best_split(&self, start: usize, end: usize, features: &[usize]) -> Option<Candidate> {
        let n = end - start;
        let msl = self.params.min_samples_leaf.max(1);
        if n < 2 * msl {
            return None;
        }
        let seg0 = &self.order[0][start..end];
        let total: f64 = seg0.iter().map(|&i| self.y[i as usize]).sum();
        let sse: f64 = {
            let mean = total / n as f64;
            seg0.iter().map(|&i| (self.y[i as usize] - mean).powi(2)).sum()
        };
        if sse <= 0.0 {
            return None;
        }
        let tol = 1e-12 * sse.max(1.0);
        let base = total * total / n as f64;
        let mut best: Option<Candidate> = None;
        for &f in features {
            let col = &self.data.cols[f];
            let seg = &self.order[f][start..end];
            let mut sum_left = 0.0;
            for k in 0..n - 1 {
                sum_left += self.y[seg[k] as usize];
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < msl {
                    continue;
                }
                if n_right < msl {
                    break;
                }
                let v = col[seg[k] as usize];
                let v_next = col[seg[k + 1] as usize];
                if v >= v_next {
                    continue;
                }
                let sum_right = total - sum_left;
                let gain = sum_left * sum_left / n_left as f64 + sum_right * sum_right / n_right as f64 - base;
                let better = match best {
                    None => gain > tol,
                    Some(b) => gain > b.gain + tol,
                };
                if better {
                    best = Some(Candidate { feature: f, threshold: midpoint(v, v_next), gain, n_left });
                }
            }
        }
        best
    }

    fn partition(&mut self, start: usize, end: usize, split: &Candidate) {
        let col = &self.data.cols[split.feature];
        for &i in &self.order[0][start..end] {
            self.goes_left[i as usize] = col[i as usize] <= split.threshold;
        }
        for f in 0..self.order.len() {
            let seg = &mut self.order[f][start..end];
            self.scratch.clear();
            let mut w = 0;
            for k in 0..seg.len() {
                let i = seg[k];
                if self.goes_left[i as usize] {
                    seg[w] = i;
                    w += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            seg[w..].copy_from_slice(&self.scratch);
        }
    }

    fn grow(&mut self, start: usize, end: usize, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: self.leaf_value(start, end) });
        if self.params.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let p = self.data.n_features();
        let features: Vec<usize> = match self.params.max_features {
            Some(m) if m < p => {
                let mut f = sample(rng, p, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let Some(split) = self.best_split(start, end, &features) else {
            return id;
        };
        self.partition(start, end, &split);
        let mid = start + split.n_left;
        let left = self.grow(start, mid, depth + 1, rng);
        let right = self.grow(mid, end, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // Adjacent floats can round the midpoint up to `b`.
    if m >= b { a } else { m }
}

/// Grows one tree on `rows` (duplicates allowed, as in a bootstrap sample).
pub fn fit_tree(
    data: &ColumnData,
    y: &[f64],
    rows: &[usize],
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<RegressionTree, TreeError> {
    if data.n_rows() != y.len() {
        return Err(TreeError::LengthMismatch { rows: data.n_rows(), len: y.len() });
    }
    if rows.is_empty() {
        return Err(TreeError::Empty);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(TreeError::NonFinite);
    }
    let mut base: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    base.sort_unstable();
    let order: Vec<Vec<u32>> = if data.n_features() == 0 {
        vec![base]
    } else {
        data.cols
            .iter()
            .map(|col| {
                let mut o = base.clone();
                o.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                o
            })
            .collect()
    };
    let n = rows.len();
    let mut builder = Builder {
        data,
        y,
        params: *params,
        order,
        scratch: Vec::with_capacity(n),
        goes_left: vec![false; data.n_rows()],
        nodes: Vec::new(),
    };
    builder.grow(0, n, 0, rng);
    Ok(RegressionTree {
        nodes: builder.nodes,
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        n_features: data.n_features(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    RandomForest,
    GradientBoosting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFit {
    pub kind: EnsembleKind,
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub base_prediction: f64,
    pub n_trees: usize,
    pub seed: u64,
    pub n_features: usize,
}

impl EnsembleFit {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, TreeError> {
        check_columns(self.n_features, x.ncols())?;
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let sum: f64 = self.trees.iter().map(|t| t.predict_row(|f| r[f])).sum();
                match self.kind {
                    EnsembleKind::RandomForest => sum / self.trees.len() as f64,
                    EnsembleKind::GradientBoosting => self.base_prediction + self.learning_rate * sum,
                }
            })
            .collect())
    }

    /// JSON tree arrays plus the digest of the training column layout.
    pub fn to_json(&self, column_meta_digest: &str) -> String {
        let mut v = serde_json::to_value(self).expect("ensemble serialization");
        v["column_meta_digest"] = serde_json::Value::from(column_meta_digest);
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestOptions {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions { n_trees: 100, max_depth: None, min_samples_leaf: 1, max_features: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingOptions {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BoostingOptions {
    fn default() -> Self {
        BoostingOptions { n_trees: 100, max_depth: Some(3), learning_rate: 0.1, seed: 0 }
    }
}

fn check_xy(x: ArrayView2<f64>, y: &[f64]) -> Result<(), TreeError> {
    if x.nrows() != y.len() {
        return Err(TreeError::LengthMismatch { rows: x.nrows(), len: y.len() });
    }
    if y.is_empty() {
        return Err(TreeError::Empty);
    }
    Ok(())
}

fn invalid(name: &'static str, reason: &str) -> TreeError {
    TreeError::InvalidParameter { name, reason: reason.to_string() }
}

/// Bootstrap-aggregated regression trees. Each tree draws from its own
/// ChaCha stream, so the result does not depend on the thread count.
pub fn fit_random_forest(x: ArrayView2<f64>, y: &[f64], opts: &ForestOptions) -> Result<EnsembleFit, TreeError> {
    check_xy(x, y)?;
    if opts.n_trees == 0 {
        return Err(invalid("n_trees", "must be at least 1"));
    }
    if opts.max_features == Some(0) {
        return Err(invalid("max_features", "must be at least 1"));
    }
    let data = ColumnData::new(x)?;
    let n = y.len();
    let params = TreeParams {
        max_depth: opts.max_depth,
        min_samples_leaf: opts.min_samples_leaf,
        max_features: opts.max_features,
    };
    let trees = (0..opts.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            fit_tree(&data, y, &rows, &params, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EnsembleFit {
        kind: EnsembleKind::RandomForest,
        n_trees: trees.len(),
        trees,
        learning_rate: 1.0,
        base_prediction: 0.0,
        seed: opts.seed,
        n_features: x.ncols(),
    })
}

/// Least-squares boosting: start at the mean, then fit each tree to the
/// current residuals and add it scaled by the learning rate.
pub fn fit_gradient_boosting(x: ArrayView2<f64>, y: &[f64], opts: &BoostingOptions) -> Result<EnsembleFit, TreeError> {
    fit_gradient_boosting_traced(x, y, opts).map(|(fit, _)| fit)
}

/// Like [`fit_gradient_boosting`] and also returns the training MSE after
/// each stage.
pub fn fit_gradient_boosting_traced(
    x: ArrayView2<f64>,
    y: &[f64],
    opts: &BoostingOptions,
) -> Result<(EnsembleFit, Vec<f64>), TreeError> {
    check_xy(x, y)?;
    if opts.n_trees == 0 {
        return Err(invalid("n_trees", "must be at least 1"));
    }
    if !(opts.learning_rate > 0.0 && opts.learning_rate <= 1.0) {
        return Err(invalid("learning_rate", "must lie in (0, 1]"));
    }
    let data = ColumnData::new(x)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(TreeError::NonFinite);
    }
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let rows: Vec<usize> = (0..n).collect();
    let params = TreeParams { max_depth: opts.max_depth, min_samples_leaf: 1, max_features: None };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trees = Vec::with_capacity(opts.n_trees);
    let mut trace = Vec::with_capacity(opts.n_trees);
    for _ in 0..opts.n_trees {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let tree = fit_tree(&data, &resid, &rows, &params, &mut rng)?;
        for (i, p) in pred.iter_mut().enumerate() {
            *p += opts.learning_rate * tree.predict_row(|f| data.cols[f][i]);
        }
        trace.push(pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    Ok((
        EnsembleFit {
            kind: EnsembleKind::GradientBoosting,
            n_trees: trees.len(),
            trees,
            learning_rate: opts.learning_rate,
            base_prediction: base,
            seed: opts.seed,
            n_features: x.ncols(),
        },
        trace,
    ))
}

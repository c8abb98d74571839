//! Exact t-SNE and the factor atlas built from learned factor embeddings.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::neural::{Network, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} is infeasible for {n} points")]
    Perplexity { perplexity: f64, n: usize },
    #[error("non-finite input vector")]
    NonFinite,
    #[error("factor {0:?} has no embedding runs")]
    NoRuns(String),
    #[error("vector for {factor:?} has length {found}, expected {expected}")]
    Dimension { factor: String, expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iter: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 5.0,
            n_iter: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            seed: 0,
        }
    }
}

/// Symmetric joint probabilities and the bandwidth search results.
#[derive(Debug, Clone)]
pub struct JointProbabilities {
    pub p: Array2<f64>,
    /// Precision `1 / (2σ²)` per point.
    pub betas: Vec<f64>,
    /// Entropy of each conditional distribution, in bits.
    pub entropies: Vec<f64>,
}

fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Conditional row `p_{j|i}` for precision `beta`, and its entropy in bits.
fn conditional_row(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == i { 0.0 } else { (-(v - min) * beta).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut h = 0.0;
    for v in p.iter_mut() {
        *v /= sum;
        if *v > 0.0 {
            h -= *v * v.ln();
        }
    }
    (p, h / std::f64::consts::LN_2)
}

pub fn check_perplexity(n: usize, perplexity: f64) -> Result<(), ProjectionError> {
    if n < 4 {
        return Err(ProjectionError::TooFewPoints(n));
    }
    if !(perplexity > 1.0 && perplexity < (n - 1) as f64) {
        return Err(ProjectionError::Perplexity { perplexity, n });
    }
    if perplexity >= (n - 1) as f64 / 3.0 {
        log::warn!("perplexity {perplexity} is large for {n} points; neighbourhoods cover most of the set");
    }
    Ok(())
}

/// Gaussian affinities with per-point bandwidths found by bisection so each
/// conditional distribution has entropy `log2(perplexity)` (tolerance 1e-5),
/// symmetrized as `(P + Pᵀ) / 2N`.
pub fn joint_probabilities(x: ArrayView2<f64>, perplexity: f64) -> Result<JointProbabilities, ProjectionError> {
    let n = x.nrows();
    check_perplexity(n, perplexity)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite);
    }
    let d = squared_distances(x);
    let target = perplexity.log2();
    let mut cond = Array2::zeros((n, n));
    let mut betas = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let row = d.row(i).to_vec();
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let (mut p, mut h) = conditional_row(&row, i, beta);
        for _ in 0..200 {
            if (h - target).abs() < 1e-5 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (p, h) = conditional_row(&row, i, beta);
        }
        cond.row_mut(i).assign(&Array1::from(p));
        betas.push(beta);
        entropies.push(h);
    }
    let denom = 2.0 * n as f64;
    let p = Array2::from_shape_fn((n, n), |(i, j)| (cond[[i, j]] + cond[[j, i]]) / denom);
    Ok(JointProbabilities { p, betas, entropies })
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    pub coords: Array2<f64>,
    /// KL(P‖Q) after every iteration, with the unexaggerated P.
    pub kl_history: Vec<f64>,
    pub joint: JointProbabilities,
}

fn kl_divergence(p: &Array2<f64>, num: &Array2<f64>, sum_num: f64) -> f64 {
    let mut kl = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if i != j && pij > 0.0 {
            let q = (num[[i, j]] / sum_num).max(1e-300);
            kl += pij * (pij / q).ln();
        }
    }
    kl
}

/// Rows sorted lexicographically, so the result does not depend on input order.
fn canonical_order(x: ArrayView2<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

/// Exact t-SNE to two dimensions: gradient descent with momentum and
/// per-coordinate gains, early exaggeration for the first iterations.
///
/// Points are processed in lexicographic row order and initialised from the
/// seed, so permuting the input rows permutes the output rows.
pub fn tsne(x: ArrayView2<f64>, cfg: &TsneConfig) -> Result<TsneResult, ProjectionError> {
    let n = x.nrows();
    check_perplexity(n, cfg.perplexity)?;
    let order = canonical_order(x);
    let xs = x.select(Axis(0), &order);
    let joint = joint_probabilities(xs.view(), cfg.perplexity)?;
    let p = &joint.p;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = Array2::from_shape_simple_fn((n, 2), || normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let mut kl_history = Vec::with_capacity(cfg.n_iter);

    for iter in 0..cfg.n_iter {
        let exaggerate = iter < cfg.exaggeration_iters;
        let exag = if exaggerate { cfg.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let mut sum_num = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = v;
                num[[j, i]] = v;
                sum_num += 2.0 * v;
            }
        }
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // The constant factor 4 of the KL gradient is folded into the step size.
                let mult = (exag * p[[i, j]] - num[[i, j]] / sum_num) * num[[i, j]];
                grad[[i, 0]] += mult * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += mult * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
            *gain = gain.max(0.01);
            *u = momentum * *u - cfg.learning_rate * *gain * g;
        }
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        y -= &mean;

        // KL at the updated positions.
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = v;
                num[[j, i]] = v;
                s += 2.0 * v;
            }
        }
        kl_history.push(kl_divergence(p, &num, s));
    }

    let mut coords = Array2::zeros((n, 2));
    for (k, &orig) in order.iter().enumerate() {
        coords.row_mut(orig).assign(&y.row(k));
    }
    // Report P in the caller's row order as well.
    let mut inv = vec![0; n];
    for (k, &orig) in order.iter().enumerate() {
        inv[orig] = k;
    }
    let joint = JointProbabilities {
        p: Array2::from_shape_fn((n, n), |(i, j)| joint.p[[inv[i], inv[j]]]),
        betas: inv.iter().map(|&k| joint.betas[k]).collect(),
        entropies: inv.iter().map(|&k| joint.entropies[k]).collect(),
    };
    Ok(TsneResult { coords, kl_history, joint })
}

/// Column means of a factor's projection matrix plus its bias, for group
/// `group` of an embedded network.
pub fn embedding_summary<T: Scalar>(net: &Network<T>, group: usize) -> Option<Vec<f64>> {
    let groups = net.groups()?;
    if group >= groups.len() {
        return None;
    }
    let w = &net.params()[2 * group];
    let b = &net.params()[2 * group + 1];
    let rows = w.nrows();
    Some(
        (0..b.ncols())
            .map(|k| {
                let mean = if rows == 0 { 0.0 } else { w.column(k).iter().map(|v| v.as_f64()).sum::<f64>() / rows as f64 };
                mean + b[[0, k]].as_f64()
            })
            .collect(),
    )
}

/// One factor's embedding summary from one task's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEmbedding {
    pub task: String,
    pub factor: String,
    pub vector: Vec<f64>,
}

/// Averages each factor's summaries over tasks.
pub fn factor_vectors(factors: &[String], runs: &[FactorEmbedding]) -> Result<BTreeMap<String, Vec<f64>>, ProjectionError> {
    let mut out = BTreeMap::new();
    for f in factors {
        let mine: Vec<&FactorEmbedding> = runs.iter().filter(|r| &r.factor == f).collect();
        let Some(first) = mine.first() else {
            return Err(ProjectionError::NoRuns(f.clone()));
        };
        let dim = first.vector.len();
        let mut acc = vec![0.0; dim];
        for r in &mine {
            if r.vector.len() != dim {
                return Err(ProjectionError::Dimension { factor: f.clone(), expected: dim, found: r.vector.len() });
            }
            for (a, v) in acc.iter_mut().zip(&r.vector) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= mine.len() as f64);
        out.insert(f.clone(), acc);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasEntry {
    /// 1-based position of the factor in the codebook.
    pub index: usize,
    pub name: String,
    pub project: String,
    pub vector: Vec<f64>,
    pub x: f64,
    pub y: f64,
    pub inverse_rank: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingAtlas {
    pub entries: Vec<AtlasEntry>,
    pub kl_final: f64,
}

impl EmbeddingAtlas {
    /// Projects the factor vectors and attaches project and inverse rank.
    /// Entries follow codebook factor order; factors without a vector are left out.
    pub fn build(
        codebook: &Codebook,
        vectors: &BTreeMap<String, Vec<f64>>,
        inverse_ranks: &BTreeMap<String, f64>,
        cfg: &TsneConfig,
    ) -> Result<Self, ProjectionError> {
        let present: Vec<(usize, &crate::codebook::FactorSpec, &Vec<f64>)> = codebook
            .factors()
            .iter()
            .enumerate()
            .filter_map(|(i, f)| vectors.get(&f.name).map(|v| (i + 1, f, v)))
            .collect();
        let dim = present.first().map_or(0, |p| p.2.len());
        for (_, f, v) in &present {
            if v.len() != dim {
                return Err(ProjectionError::Dimension { factor: f.name.clone(), expected: dim, found: v.len() });
            }
        }
        let x = Array2::from_shape_fn((present.len(), dim), |(i, j)| present[i].2[j]);
        let res = tsne(x.view(), cfg)?;
        let entries = present
            .iter()
            .enumerate()
            .map(|(row, (index, f, v))| AtlasEntry {
                index: *index,
                name: f.name.clone(),
                project: f.project.as_str().to_string(),
                vector: (*v).clone(),
                x: res.coords[[row, 0]],
                y: res.coords[[row, 1]],
                inverse_rank: inverse_ranks.get(&f.name).copied(),
            })
            .collect();
        Ok(EmbeddingAtlas { entries, kl_final: res.kl_history.last().copied().unwrap_or(f64::NAN) })
    }

    /// CSV `factor_index,name,project,x,y,inverse_rank`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ProjectionError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| ProjectionError::Csv(e.to_string());
        w.write_record(["factor_index", "name", "project", "x", "y", "inverse_rank"]).map_err(err)?;
        for e in &self.entries {
            w.write_record([
                e.index.to_string(),
                e.name.clone(),
                e.project.clone(),
                e.x.to_string(),
                e.y.to_string(),
                e.inverse_rank.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| ProjectionError::Csv(e.to_string()))
    }
}

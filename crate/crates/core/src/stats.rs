//! Significance testing for model comparisons: paired t-tests with
//! Holm-Bonferroni correction and a nested-F test for a sparsity × model
//! interaction.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::linear::min_norm_lstsq;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("samples have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("task coverage mismatch: {0}")]
    Coverage(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("csv: {0}")]
    Csv(String),
}

/// Two-sided tail probability of Student's t with `dof` degrees of freedom.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    beta_reg(dof / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Upper tail probability `P(F > f)` of the F distribution.
pub fn f_survival(f: f64, df_num: f64, df_den: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let x = df_den / (df_den + df_num * f);
    beta_reg(df_den / 2.0, df_num / 2.0, x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: usize,
    pub p: f64,
}

/// Paired t-test on `a − b` with the sample standard deviation.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    let dof = n - 1;
    Ok(TTest { t, dof, p: t_two_sided_p(t, dof as f64) })
}

/// Holm's step-down adjustment, returned in input order.
pub fn holm_bonferroni(p: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(StatsError::InvalidPValue(bad));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * p[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    Ok(out)
}

/// Per-task mean RMSEs, one row per model, columns in `tasks` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTaskMeans {
    pub models: Vec<String>,
    pub tasks: Vec<String>,
    pub means: Vec<Vec<f64>>,
}

impl ModelTaskMeans {
    /// Builds the table from `(model, task) → mean`; every model must cover
    /// every task.
    pub fn from_map(map: &BTreeMap<(String, String), f64>, models: &[String], tasks: &[String]) -> Result<Self, StatsError> {
        let mut means = Vec::with_capacity(models.len());
        for m in models {
            let mut row = Vec::with_capacity(tasks.len());
            for t in tasks {
                let v = map
                    .get(&(m.clone(), t.clone()))
                    .ok_or_else(|| StatsError::Coverage(format!("model {m} has no result for task {t}")))?;
                row.push(*v);
            }
            means.push(row);
        }
        Ok(ModelTaskMeans { models: models.to_vec(), tasks: tasks.to_vec(), means })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub model_a: String,
    pub model_b: String,
    pub t: Option<f64>,
    pub dof: usize,
    pub p_raw: Option<f64>,
    pub p_corrected: Option<f64>,
    pub note: Option<String>,
}

/// One paired test per unordered model pair, corrected jointly. Pairs whose
/// differences have zero variance are kept with a note and left out of the
/// correction family.
pub fn ttest_matrix(table: &ModelTaskMeans) -> Result<Vec<PairedTestResult>, StatsError> {
    let k = table.models.len();
    if k < 2 {
        return Err(StatsError::TooFew { needed: 2, got: k });
    }
    if table.means.len() != k || table.means.iter().any(|r| r.len() != table.tasks.len()) {
        return Err(StatsError::Coverage("ragged mean table".into()));
    }
    let mut rows = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let base = PairedTestResult {
                model_a: table.models[i].clone(),
                model_b: table.models[j].clone(),
                t: None,
                dof: table.tasks.len().saturating_sub(1),
                p_raw: None,
                p_corrected: None,
                note: None,
            };
            rows.push(match paired_ttest(&table.means[i], &table.means[j]) {
                Ok(r) => PairedTestResult { t: Some(r.t), dof: r.dof, p_raw: Some(r.p), ..base },
                Err(StatsError::ZeroVariance) => PairedTestResult {
                    note: Some("zero-variance differences; excluded from correction".into()),
                    ..base
                },
                Err(e) => return Err(e),
            });
        }
    }
    let idx: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.p_raw.is_some()).map(|(i, _)| i).collect();
    let raw: Vec<f64> = idx.iter().map(|&i| rows[i].p_raw.unwrap()).collect();
    for (&i, p) in idx.iter().zip(holm_bonferroni(&raw)?) {
        rows[i].p_corrected = Some(p);
    }
    Ok(rows)
}

/// CSV with columns `model_a,model_b,t,dof,p_corrected,p_raw,note`.
pub fn write_ttest_csv<W: Write>(rows: &[PairedTestResult], writer: W) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| StatsError::Csv(e.to_string());
    w.write_record(["model_a", "model_b", "t", "dof", "p_corrected", "p_raw", "note"]).map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.model_a.clone(),
            r.model_b.clone(),
            opt(r.t),
            r.dof.to_string(),
            opt(r.p_corrected),
            opt(r.p_raw),
            r.note.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| StatsError::Csv(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub rss_reduced: f64,
    pub rss_full: f64,
    pub df_reduced: usize,
    pub df_full: usize,
    pub f_stat: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p: f64,
}

fn fit_rss(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64, StatsError> {
    let (beta, rank) = min_norm_lstsq(x, y);
    if rank < x.ncols() {
        return Err(StatsError::SingularDesign);
    }
    Ok((y - x * beta).norm_squared())
}

/// F-test comparing a reduced design against a full design that nests it.
pub fn nested_f_test(y: &[f64], reduced: &DMatrix<f64>, full: &DMatrix<f64>) -> Result<AnovaResult, StatsError> {
    let n = y.len();
    if reduced.nrows() != n || full.nrows() != n {
        return Err(StatsError::LengthMismatch(n, full.nrows()));
    }
    if full.ncols() <= reduced.ncols() {
        return Err(StatsError::Coverage("full design must add columns".into()));
    }
    if n <= full.ncols() {
        return Err(StatsError::TooFew { needed: full.ncols() + 1, got: n });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let yv = DVector::from_column_slice(y);
    let rss_reduced = fit_rss(reduced, &yv)?;
    let rss_full = fit_rss(full, &yv)?.min(rss_reduced);
    let df_reduced = n - reduced.ncols();
    let df_full = n - full.ncols();
    let df_num = df_reduced - df_full;
    let num = (rss_reduced - rss_full) / df_num as f64;
    let f_stat = if rss_full > 0.0 {
        num / (rss_full / df_full as f64)
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(AnovaResult {
        rss_reduced,
        rss_full,
        df_reduced,
        df_full,
        f_stat,
        df_num,
        df_den: df_full,
        p: f_survival(f_stat, df_num as f64, df_full as f64),
    })
}

/// One test sample's error under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRecord {
    pub model: String,
    pub sparsity: f64,
    pub abs_error: f64,
}

/// Nested-F test of `abs_error ~ 1 + model + sparsity` against the same
/// model plus `model × sparsity` terms. Model levels are dummy-coded
/// against the alphabetically first model.
pub fn sparsity_anova(records: &[SparsityRecord]) -> Result<AnovaResult, StatsError> {
    let mut levels: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
    levels.sort_unstable();
    levels.dedup();
    let k = levels.len();
    if k < 2 {
        return Err(StatsError::TooFew { needed: 2, got: k });
    }
    let n = records.len();
    let level: Vec<usize> = records.iter().map(|r| levels.binary_search(&r.model.as_str()).unwrap()).collect();
    let reduced = DMatrix::from_fn(n, k + 1, |i, j| match j {
        0 => 1.0,
        j if j < k => f64::from(level[i] == j),
        _ => records[i].sparsity,
    });
    let full = DMatrix::from_fn(n, 2 * k, |i, j| {
        if j <= k {
            reduced[(i, j)]
        } else {
            f64::from(level[i] == j - k) * records[i].sparsity
        }
    });
    let y: Vec<f64> = records.iter().map(|r| r.abs_error).collect();
    nested_f_test(&y, &reduced, &full)
}

/// Slope of `abs_error` on sparsity per model (simple least squares).
pub fn sparsity_slopes(records: &[SparsityRecord]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<&str, (f64, f64, f64, f64, f64)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(&r.model).or_default();
        e.0 += 1.0;
        e.1 += r.sparsity;
        e.2 += r.abs_error;
        e.3 += r.sparsity * r.sparsity;
        e.4 += r.sparsity * r.abs_error;
    }
    acc.into_iter()
        .map(|(m, (n, sx, sy, sxx, sxy))| {
            let den = n * sxx - sx * sx;
            let slope = if den > 0.0 { (n * sxy - sx * sy) / den } else { f64::NAN };
            (m.to_string(), slope)
        })
        .collect()
}

/// One-sample Kolmogorov-Smirnov test against U(0, 1); returns `(D, p)`.
///
/// The p-value uses the asymptotic Kolmogorov distribution with Stephens'
/// small-sample correction of the scaling factor.
pub fn ks_uniform(samples: &[f64]) -> Result<(f64, f64), StatsError> {
    if samples.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    Ok((d, kolmogorov_q(lambda)))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

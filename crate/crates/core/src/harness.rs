//! Benchmark protocol: prediction tasks, paired random splits, model fits,
//! RMSE summaries, rankings and per-sample error records.
//!
//! Every (task, model, split) job takes its randomness from
//! [`derive_seed`]`(seed, [task, model, split])` and every split partition from
//! `derive_seed(seed, ["split", task, split])`, so results do not depend on
//! scheduling.

mod factors;
mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_records, read_splits, RECORDS_FILE, REPORT_FILE, SPLITS_FILE, SUMMARY_FILE};
pub use factors::{inverse_rank, rank_factors, FactorRankConfig, FactorRanking, FactorSummary, FactorTaskResult};

use crate::codebook::Project;
use crate::dataio::Dataset;
use crate::digest::{derive_seed, index_digest, sha256_hex};
use crate::linear::{fit_lasso, fit_ols, fit_ridge, LassoOptions, DEFAULT_LAMBDA};
use crate::neural::{train, Architecture, FactorGroup, Head, NetSpec, TrainConfig};
use crate::preprocess::{PreprocessOptions, Preprocessor};
use crate::stats::{ModelTaskMeans, SparsityRecord, StatsError};
use crate::trees::{fit_gradient_boosting, fit_random_forest, BoostingOptions, ForestOptions};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown task {0:?}; valid tasks: {1}")]
    UnknownTask(String, String),
    #[error("unknown model {0:?}; valid models: {1}")]
    UnknownModel(String, String),
    #[error("outcome column {0:?} missing from the dataset")]
    MissingOutcome(String),
    #[error("task {task} has {rows} rows with an outcome; at least {needed} required")]
    InsufficientRows { task: String, rows: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no results for model {model} on task {task}")]
    MissingResults { task: String, model: String },
    #[error("predictions and targets have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("report file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, HarnessError> {
    if pred.len() != target.len() {
        return Err(HarnessError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(HarnessError::Empty);
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Arithmetic mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Ascending ranks starting at 1; tied values share the mean of their ranks.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    Comp,
    Ef,
    Em,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Comp, Measure::Ef, Measure::Em];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Comp => "COMP",
            Measure::Ef => "EF",
            Measure::Em => "EM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Wave {
    M2,
    M3,
    /// Change from M2 to M3.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorPolicy {
    /// Cognitive-project variables are left out.
    NoCognitive,
    /// Cognitive-project variables (baseline scores) are predictors.
    WithM2Cognitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictionTask {
    pub measure: Measure,
    pub wave: Wave,
}

impl PredictionTask {
    /// The nine tasks in reporting order.
    pub fn all() -> Vec<PredictionTask> {
        let mut v = Vec::new();
        for wave in [Wave::M2, Wave::M3, Wave::Delta] {
            for measure in Measure::ALL {
                v.push(PredictionTask { measure, wave });
            }
        }
        v
    }

    pub fn name(&self) -> String {
        let suffix = match self.wave {
            Wave::M2 => "M2",
            Wave::M3 => "M3",
            Wave::Delta => "DELTA",
        };
        format!("{}_{suffix}", self.measure.as_str())
    }

    pub fn policy(&self) -> PredictorPolicy {
        match self.wave {
            Wave::M2 => PredictorPolicy::NoCognitive,
            Wave::M3 | Wave::Delta => PredictorPolicy::WithM2Cognitive,
        }
    }

    pub fn head(&self) -> Head {
        match self.wave {
            Wave::Delta => Head::Linear,
            _ => Head::Relu,
        }
    }

    /// Preprocessing options for this task on top of `base`.
    pub fn preprocess_options(&self, base: &PreprocessOptions) -> PreprocessOptions {
        let mut o = base.clone();
        if self.policy() == PredictorPolicy::NoCognitive && !o.exclude_projects.contains(&Project::Cognitive) {
            o.exclude_projects.push(Project::Cognitive);
        }
        o
    }

    /// Target per dataset row; `None` where the outcome is unavailable.
    /// Change scores are M3 minus M2.
    pub fn targets(&self, ds: &Dataset) -> Result<Vec<Option<f64>>, HarnessError> {
        let col = |wave: &str| {
            let name = format!("{}_{wave}", self.measure.as_str());
            ds.outcome(&name).map(|v| v.to_vec()).ok_or(HarnessError::MissingOutcome(name))
        };
        match self.wave {
            Wave::M2 => col("M2"),
            Wave::M3 => col("M3"),
            Wave::Delta => {
                let m2 = col("M2")?;
                let m3 = col("M3")?;
                Ok(m2.iter().zip(&m3).map(|(a, b)| Some((*b)? - (*a)?)).collect())
            }
        }
    }
}

impl fmt::Display for PredictionTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for PredictionTask {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        PredictionTask::all().into_iter().find(|t| t.name() == up).ok_or_else(|| {
            let valid: Vec<String> = PredictionTask::all().iter().map(|t| t.name()).collect();
            HarnessError::UnknownTask(s.to_string(), valid.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearRegression,
    RidgeRegression,
    LassoRegression,
    RandomForest,
    /// Least-squares gradient boosting in the slot of the XGBoost baseline.
    Xgboost,
    Dnn,
    EmbedDnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::LinearRegression,
        ModelKind::RidgeRegression,
        ModelKind::LassoRegression,
        ModelKind::RandomForest,
        ModelKind::Xgboost,
        ModelKind::Dnn,
        ModelKind::EmbedDnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LinearRegression => "linear_regression",
            ModelKind::RidgeRegression => "ridge_regression",
            ModelKind::LassoRegression => "lasso_regression",
            ModelKind::RandomForest => "random_forest",
            ModelKind::Xgboost => "xgboost",
            ModelKind::Dnn => "dnn",
            ModelKind::EmbedDnn => "embed_dnn",
        }
    }

    fn alias(self) -> &'static str {
        match self {
            ModelKind::LinearRegression => "ols",
            ModelKind::RidgeRegression => "ridge",
            ModelKind::LassoRegression => "lasso",
            ModelKind::RandomForest => "rf",
            ModelKind::Xgboost => "gb",
            ModelKind::Dnn => "dnn",
            ModelKind::EmbedDnn => "embed_dnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let low = s.trim().to_ascii_lowercase();
        ModelKind::ALL.into_iter().find(|m| m.name() == low || m.alias() == low).ok_or_else(|| {
            let valid: Vec<String> = ModelKind::ALL.iter().map(|m| format!("{} ({})", m.name(), m.alias())).collect();
            HarnessError::UnknownModel(s.to_string(), valid.join(", "))
        })
    }
}

/// Hyperparameters of every model. Seeds inside are replaced per job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub ridge_lambda: f64,
    pub lasso: LassoOptions,
    pub forest: ForestOptions,
    pub boosting: BoostingOptions,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            ridge_lambda: DEFAULT_LAMBDA,
            lasso: LassoOptions::default(),
            forest: ForestOptions::default(),
            boosting: BoostingOptions::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n_splits: usize,
    pub train_frac: f64,
    pub seed: u64,
    pub models: ModelConfig,
    pub preprocess: PreprocessOptions,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_splits: 10,
            train_frac: 0.75,
            seed: 0,
            models: ModelConfig::default(),
            preprocess: PreprocessOptions::default(),
        }
    }
}

pub const MIN_TASK_ROWS: usize = 8;

/// Row partition of one (task, split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPartition {
    pub task: String,
    pub split: usize,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub train_digest: String,
    pub test_digest: String,
    /// Digest of the scaler fitted on the training rows.
    pub scaler_digest: String,
}

/// Outcome of one (task, model, split) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub task: String,
    pub model: String,
    pub split: usize,
    pub rmse: Option<f64>,
    pub error: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub train_digest: String,
    pub test_digest: String,
    pub seed: u64,
}

/// One test sample's prediction under one (task, model, split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub task: String,
    pub model: String,
    pub split: usize,
    pub row: usize,
    pub participant_id: String,
    pub sparsity: u32,
    pub target: f64,
    pub prediction: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub task: String,
    pub model: String,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    pub n_ok: usize,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<String>,
    pub models: Vec<String>,
    pub n_splits: usize,
    pub train_frac: f64,
    pub seed: u64,
    pub partitions: Vec<SplitPartition>,
    pub results: Vec<SplitResult>,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    /// Successful split RMSEs of `model` on `task`, in split order.
    pub fn split_rmses(&self, task: &str, model: &str) -> Vec<f64> {
        self.results.iter().filter(|r| r.task == task && r.model == model).filter_map(|r| r.rmse).collect()
    }

    /// Mean and population SD over successful splits.
    pub fn summary(&self, task: &str, model: &str) -> Option<(f64, f64)> {
        let v = self.split_rmses(task, model);
        if v.is_empty() { None } else { Some(mean_sd(&v)) }
    }

    /// Models ranked by mean RMSE on `task` (1 = lowest), mid-ranks on ties.
    pub fn rank_models(&self, task: &str) -> Result<Vec<ModelSummary>, HarnessError> {
        let mut rows = Vec::new();
        for m in &self.models {
            let v = self.split_rmses(task, m);
            if v.is_empty() {
                return Err(HarnessError::MissingResults { task: task.to_string(), model: m.clone() });
            }
            let (mean, sd) = mean_sd(&v);
            rows.push(ModelSummary {
                task: task.to_string(),
                model: m.clone(),
                mean_rmse: mean,
                sd_rmse: sd,
                n_ok: v.len(),
                rank: 0.0,
            });
        }
        let means: Vec<f64> = rows.iter().map(|r| r.mean_rmse).collect();
        for (r, rank) in rows.iter_mut().zip(mid_ranks(&means)) {
            r.rank = rank;
        }
        Ok(rows)
    }

    /// Ranking tables for every task where all models have results.
    pub fn rankings(&self) -> Vec<ModelSummary> {
        self.tasks.iter().filter_map(|t| self.rank_models(t).ok()).flatten().collect()
    }

    /// Mean RMSE per (model, task) for the paired t-tests.
    pub fn task_means(&self) -> Result<ModelTaskMeans, HarnessError> {
        let mut map = BTreeMap::new();
        for t in &self.tasks {
            for m in &self.models {
                if let Some((mean, _)) = self.summary(t, m) {
                    map.insert((m.clone(), t.clone()), mean);
                }
            }
        }
        Ok(ModelTaskMeans::from_map(&map, &self.models, &self.tasks)?)
    }

    /// Flat `(model, sparsity, absolute error)` table, one row per test
    /// sample, model and split.
    pub fn sparsity_records(&self) -> Vec<SparsityRecord> {
        sparsity_records(&self.records)
    }

    pub fn n_failures(&self) -> usize {
        self.results.iter().filter(|r| r.rmse.is_none()).count()
    }
}

pub fn sparsity_records(records: &[SampleRecord]) -> Vec<SparsityRecord> {
    records
        .iter()
        .map(|r| SparsityRecord { model: r.model.clone(), sparsity: r.sparsity as f64, abs_error: r.abs_error })
        .collect()
}

/// Rows with a target for `task`, and the target vector indexed by row.
fn task_rows(ds: &Dataset, task: &PredictionTask) -> Result<(Vec<usize>, Vec<Option<f64>>), HarnessError> {
    let targets = task.targets(ds)?;
    let rows: Vec<usize> = (0..ds.n_rows()).filter(|&r| targets[r].is_some()).collect();
    if rows.len() < MIN_TASK_ROWS {
        return Err(HarnessError::InsufficientRows { task: task.name(), rows: rows.len(), needed: MIN_TASK_ROWS });
    }
    Ok((rows, targets))
}

/// Seeded shuffle of `rows` cut at `round(train_frac · n)`; both sides sorted.
pub fn split_rows(rows: &[usize], train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_frac * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
    let mut train = shuffled[..n_train].to_vec();
    let mut test = shuffled[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn split_seed(master: u64, task: &str, split: usize) -> u64 {
    derive_seed(master, &["split", task, &split.to_string()])
}

pub fn job_seed(master: u64, task: &str, model: &str, split: usize) -> u64 {
    derive_seed(master, &[task, model, &split.to_string()])
}

fn scaler_digest(p: &Preprocessor) -> String {
    let text = serde_json::to_string(p.scaler()).expect("scaler serialization");
    sha256_hex(text.as_bytes())
}

/// Fits one model on `(x_train, y_train)` and predicts `x_test`.
pub fn fit_predict(
    kind: ModelKind,
    cfg: &ModelConfig,
    head: Head,
    groups: &[FactorGroup],
    x_train: &Array2<f64>,
    y_train: &[f64],
    x_test: &Array2<f64>,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let err = |e: &dyn fmt::Display| e.to_string();
    match kind {
        ModelKind::LinearRegression => {
            fit_ols(x_train.view(), y_train).and_then(|f| f.predict(x_test.view())).map_err(|e| err(&e))
        }
        ModelKind::RidgeRegression => fit_ridge(x_train.view(), y_train, cfg.ridge_lambda)
            .and_then(|f| f.predict(x_test.view()))
            .map_err(|e| err(&e)),
        ModelKind::LassoRegression => {
            let fit = fit_lasso(x_train.view(), y_train, &cfg.lasso).map_err(|e| err(&e))?;
            if !fit.converged {
                log::warn!("lasso stopped after {} sweeps without converging", fit.iterations);
            }
            fit.predict(x_test.view()).map_err(|e| err(&e))
        }
        ModelKind::RandomForest => {
            let opts = ForestOptions { seed, ..cfg.forest };
            fit_random_forest(x_train.view(), y_train, &opts).and_then(|f| f.predict(x_test.view())).map_err(|e| err(&e))
        }
        ModelKind::Xgboost => {
            let opts = BoostingOptions { seed, ..cfg.boosting };
            fit_gradient_boosting(x_train.view(), y_train, &opts)
                .and_then(|f| f.predict(x_test.view()))
                .map_err(|e| err(&e))
        }
        ModelKind::Dnn | ModelKind::EmbedDnn => {
            let arch = if kind == ModelKind::Dnn { Architecture::Full } else { Architecture::Embedded(groups.to_vec()) };
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            let net = train::<f32>(x_train.view(), y_train, arch, NetSpec::standard(head), &tc).map_err(|e| err(&e))?;
            net.predict(x_test.view()).map_err(|e| err(&e))
        }
    }
}

struct SplitJob {
    task_idx: usize,
    split: usize,
}

/// Runs every model on `n_splits` paired random splits of every task.
/// Preprocessing is fitted on each split's training rows only. Failed fits
/// are recorded in the report rather than aborting the run.
pub fn run_benchmark(
    ds: &Dataset,
    tasks: &[PredictionTask],
    models: &[ModelKind],
    cfg: &BenchmarkConfig,
) -> Result<EvalReport, HarnessError> {
    if tasks.is_empty() || models.is_empty() {
        return Err(HarnessError::Config("need at least one task and one model".into()));
    }
    if cfg.n_splits == 0 {
        return Err(HarnessError::Config("n_splits must be at least 1".into()));
    }
    if !(cfg.train_frac > 0.0 && cfg.train_frac < 1.0) {
        return Err(HarnessError::Config("train_frac must lie in (0, 1)".into()));
    }
    let prepared: Vec<(Vec<usize>, Vec<Option<f64>>)> =
        tasks.iter().map(|t| task_rows(ds, t)).collect::<Result<_, _>>()?;
    let task_options: Vec<PreprocessOptions> = tasks.iter().map(|t| t.preprocess_options(&cfg.preprocess)).collect();

    let jobs: Vec<SplitJob> = (0..tasks.len())
        .flat_map(|task_idx| (0..cfg.n_splits).map(move |split| SplitJob { task_idx, split }))
        .collect();

    type JobOut = Result<(SplitPartition, Vec<(SplitResult, Vec<SampleRecord>)>), HarnessError>;
    let outputs: Vec<JobOut> = jobs
        .par_iter()
        .map(|job| {
            let task = &tasks[job.task_idx];
            let name = task.name();
            let (rows, targets) = &prepared[job.task_idx];
            let (train_rows, test_rows) = split_rows(rows, cfg.train_frac, split_seed(cfg.seed, &name, job.split));
            let opts = &task_options[job.task_idx];
            let pre = Preprocessor::fit(ds, &train_rows, opts)?;
            let dm_train = pre.transform(ds, &train_rows)?;
            let dm_test = pre.transform(ds, &test_rows)?;
            let groups = FactorGroup::from_design(&dm_train);
            let y_train: Vec<f64> = train_rows.iter().map(|&r| targets[r].expect("task row")).collect();
            let y_test: Vec<f64> = test_rows.iter().map(|&r| targets[r].expect("task row")).collect();
            let partition = SplitPartition {
                task: name.clone(),
                split: job.split,
                train_digest: index_digest(&train_rows),
                test_digest: index_digest(&test_rows),
                scaler_digest: scaler_digest(&pre),
                train_rows: train_rows.clone(),
                test_rows: test_rows.clone(),
            };
            let fits = models
                .par_iter()
                .map(|&kind| {
                    let seed = job_seed(cfg.seed, &name, kind.name(), job.split);
                    let outcome = fit_predict(
                        kind,
                        &cfg.models,
                        task.head(),
                        &groups,
                        &dm_train.values,
                        &y_train,
                        &dm_test.values,
                        seed,
                    )
                    .and_then(|pred| {
                        if pred.iter().all(|p| p.is_finite()) {
                            Ok(pred)
                        } else {
                            Err("non-finite predictions".to_string())
                        }
                    });
                    let mut result = SplitResult {
                        task: name.clone(),
                        model: kind.name().to_string(),
                        split: job.split,
                        rmse: None,
                        error: None,
                        n_train: train_rows.len(),
                        n_test: test_rows.len(),
                        train_digest: partition.train_digest.clone(),
                        test_digest: partition.test_digest.clone(),
                        seed,
                    };
                    let mut records = Vec::new();
                    match outcome {
                        Ok(pred) => {
                            result.rmse = Some(rmse(&pred, &y_test).expect("lengths match"));
                            for (k, &row) in test_rows.iter().enumerate() {
                                records.push(SampleRecord {
                                    task: name.clone(),
                                    model: kind.name().to_string(),
                                    split: job.split,
                                    row,
                                    participant_id: ds.participant_ids()[row].clone(),
                                    sparsity: dm_test.row_sparsity[k],
                                    target: y_test[k],
                                    prediction: pred[k],
                                    abs_error: (pred[k] - y_test[k]).abs(),
                                });
                            }
                        }
                        Err(e) => {
                            log::warn!("{name} / {kind} / split {}: {e}", job.split);
                            result.error = Some(e);
                        }
                    }
                    (result, records)
                })
                .collect();
            log::info!("{name} split {} done", job.split);
            Ok((partition, fits))
        })
        .collect();

    let mut report = EvalReport {
        tasks: tasks.iter().map(|t| t.name()).collect(),
        models: models.iter().map(|m| m.name().to_string()).collect(),
        n_splits: cfg.n_splits,
        train_frac: cfg.train_frac,
        seed: cfg.seed,
        partitions: Vec::new(),
        results: Vec::new(),
        records: Vec::new(),
    };
    for out in outputs {
        let (partition, fits) = out?;
        report.partitions.push(partition);
        for (result, records) in fits {
            report.results.push(result);
            report.records.extend(records);
        }
    }
    // Order results task-major, then model, then split.
    let task_pos = |t: &str| report.tasks.iter().position(|x| x == t).unwrap();
    let model_pos = |m: &str| report.models.iter().position(|x| x == m).unwrap();
    let mut results = std::mem::take(&mut report.results);
    results.sort_by_key(|r| (task_pos(&r.task), model_pos(&r.model), r.split));
    let mut records = std::mem::take(&mut report.records);
    records.sort_by_key(|r| (task_pos(&r.task), model_pos(&r.model), r.split, r.row));
    report.results = results;
    report.records = records;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_fixtures() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.0, 3.0], &[2.0, 5.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(HarnessError::LengthMismatch(1, 2))));
        assert!(matches!(rmse(&[], &[]), Err(HarnessError::Empty)));
        let y = [1.0, 2.0, 6.0, 3.0];
        let (mean, sd) = mean_sd(&y);
        assert!((rmse(&[mean; 4], &y).unwrap() - sd).abs() < 1e-12);
    }

    #[test]
    fn mid_rank_fixtures() {
        assert_eq!(mid_ranks(&[3.1, 2.0, 2.0]), vec![3.0, 1.5, 1.5]);
        assert_eq!(mid_ranks(&[5.0]), vec![1.0]);
        assert_eq!(mid_ranks(&[2.0, 2.0, 2.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn task_names_and_policies() {
        let all = PredictionTask::all();
        assert_eq!(all.len(), 9);
        let names: Vec<String> = all.iter().map(|t| t.name()).collect();
        assert!(names.contains(&"EF_DELTA".to_string()));
        for t in &all {
            assert_eq!(t.head() == Head::Linear, t.wave == Wave::Delta);
            assert_eq!(t.policy() == PredictorPolicy::NoCognitive, t.wave == Wave::M2);
        }
        assert_eq!("comp_m3".parse::<PredictionTask>().unwrap().name(), "COMP_M3");
        assert!("COMP_M4".parse::<PredictionTask>().is_err());
    }

    #[test]
    fn model_names() {
        assert_eq!("ols".parse::<ModelKind>().unwrap(), ModelKind::LinearRegression);
        assert_eq!("xgboost".parse::<ModelKind>().unwrap(), ModelKind::Xgboost);
        let err = "svm".parse::<ModelKind>().unwrap_err().to_string();
        assert!(err.contains("embed_dnn"));
    }

    #[test]
    fn split_is_partition() {
        let rows: Vec<usize> = (0..20).map(|i| i * 2).collect();
        let (tr, te) = split_rows(&rows, 0.75, 9);
        assert_eq!(tr.len(), 15);
        assert_eq!(te.len(), 5);
        let mut all = [tr.clone(), te].concat();
        all.sort_unstable();
        assert_eq!(all, rows);
        assert_eq!(split_rows(&rows, 0.75, 9).0, tr);
    }
}

//! Factor importance: one single-factor embedding network per (task, factor),
//! ranked by test RMSE within each task and averaged across tasks.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mid_ranks, rmse, split_rows, task_rows, HarnessError, PredictionTask};
use crate::codebook::{Codebook, Project};
use crate::dataio::Dataset;
use crate::digest::derive_seed;
use crate::neural::{single_factor_net, NetSpec, TrainConfig};
use crate::preprocess::{PreprocessOptions, Preprocessor};
use crate::projection::{embedding_summary, FactorEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorRankConfig {
    pub seed: u64,
    pub train_frac: f64,
    pub train: TrainConfig,
    pub preprocess: PreprocessOptions,
}

impl Default for FactorRankConfig {
    fn default() -> Self {
        FactorRankConfig { seed: 0, train_frac: 0.75, train: TrainConfig::default(), preprocess: PreprocessOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTaskResult {
    pub task: String,
    pub factor: String,
    pub rmse: Option<f64>,
    /// Mid-rank among the factors that trained successfully on this task.
    pub rank: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSummary {
    /// 1-based position in the codebook's factor list.
    pub index: usize,
    pub factor: String,
    pub project: Project,
    pub n_tasks: usize,
    pub average_rank: f64,
    pub inverse_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRanking {
    pub per_task: Vec<FactorTaskResult>,
    /// Factors ordered by ascending average rank.
    pub factors: Vec<FactorSummary>,
    /// Factors left out of the averages because a fit failed.
    pub excluded: Vec<String>,
    pub embeddings: Vec<FactorEmbedding>,
}

pub fn inverse_rank(average_rank: f64) -> f64 {
    1.0 / average_rank
}

impl FactorRanking {
    /// Ranks factors within each task by RMSE and averages across tasks.
    /// A factor with any failed fit is excluded from every average.
    pub fn from_results(
        codebook: &Codebook,
        mut per_task: Vec<FactorTaskResult>,
        embeddings: Vec<FactorEmbedding>,
    ) -> FactorRanking {
        let mut excluded: Vec<String> =
            per_task.iter().filter(|r| r.rmse.is_none()).map(|r| r.factor.clone()).collect();
        excluded.sort_by_key(|f| codebook.factor_position(f));
        excluded.dedup();
        for f in &excluded {
            log::warn!("factor {f} excluded from average ranks after a failed fit");
        }

        let mut tasks: Vec<String> = Vec::new();
        for r in &per_task {
            if !tasks.contains(&r.task) {
                tasks.push(r.task.clone());
            }
        }
        for task in &tasks {
            let idx: Vec<usize> = (0..per_task.len())
                .filter(|&i| &per_task[i].task == task && per_task[i].rmse.is_some())
                .collect();
            let values: Vec<f64> = idx.iter().map(|&i| per_task[i].rmse.unwrap()).collect();
            for (i, r) in idx.into_iter().zip(mid_ranks(&values)) {
                per_task[i].rank = Some(r);
            }
        }

        let mut by_factor: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &per_task {
            if let Some(rank) = r.rank {
                by_factor.entry(r.factor.as_str()).or_default().push(rank);
            }
        }
        let mut factors: Vec<FactorSummary> = codebook
            .factors()
            .iter()
            .enumerate()
            .filter(|(_, f)| !excluded.contains(&f.name))
            .filter_map(|(i, f)| {
                let ranks = by_factor.get(f.name.as_str())?;
                let avg = ranks.iter().sum::<f64>() / ranks.len() as f64;
                Some(FactorSummary {
                    index: i + 1,
                    factor: f.name.clone(),
                    project: f.project,
                    n_tasks: ranks.len(),
                    average_rank: avg,
                    inverse_rank: inverse_rank(avg),
                })
            })
            .collect();
        factors.sort_by(|a, b| a.average_rank.total_cmp(&b.average_rank).then(a.index.cmp(&b.index)));
        FactorRanking { per_task, factors, excluded, embeddings }
    }

    /// Inverse rank per factor name.
    pub fn inverse_ranks(&self) -> BTreeMap<String, f64> {
        self.factors.iter().map(|f| (f.factor.clone(), f.inverse_rank)).collect()
    }

    /// One row per ranked factor: `factor_index,factor,project,n_tasks,average_rank,inverse_rank`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(writer);
        let fmt = |e: csv::Error| HarnessError::Format(e.to_string());
        w.write_record(["factor_index", "factor", "project", "n_tasks", "average_rank", "inverse_rank"]).map_err(fmt)?;
        for f in &self.factors {
            w.write_record([
                f.index.to_string(),
                f.factor.clone(),
                f.project.as_str().to_string(),
                f.n_tasks.to_string(),
                format!("{:.2}", f.average_rank),
                format!("{:.2}", f.inverse_rank),
            ])
            .map_err(fmt)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per (task, factor) fit.
    pub fn write_task_csv<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(writer);
        let fmt = |e: csv::Error| HarnessError::Format(e.to_string());
        w.write_record(["task", "factor", "rmse", "rank", "error"]).map_err(fmt)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.per_task {
            w.write_record([
                r.task.clone(),
                r.factor.clone(),
                opt(r.rmse),
                opt(r.rank),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(fmt)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains one single-factor embedding network per (task, factor) on one
/// seeded 75/25 split per task. Cognitive factors drop out of M2 tasks
/// through the task's predictor policy.
pub fn rank_factors(
    ds: &Dataset,
    tasks: &[PredictionTask],
    cfg: &FactorRankConfig,
) -> Result<FactorRanking, HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::Config("need at least one task".into()));
    }
    if !(cfg.train_frac > 0.0 && cfg.train_frac < 1.0) {
        return Err(HarnessError::Config("train_frac must lie in (0, 1)".into()));
    }
    struct Prepared {
        name: String,
        spec: NetSpec,
        dm_train: crate::preprocess::DesignMatrix,
        dm_test: crate::preprocess::DesignMatrix,
        y_train: Vec<f64>,
        y_test: Vec<f64>,
    }
    let mut prepared = Vec::new();
    for task in tasks {
        let name = task.name();
        let (rows, targets) = task_rows(ds, task)?;
        let (train_rows, test_rows) =
            split_rows(&rows, cfg.train_frac, derive_seed(cfg.seed, &["factor-split", &name]));
        let pre = Preprocessor::fit(ds, &train_rows, &task.preprocess_options(&cfg.preprocess))?;
        prepared.push(Prepared {
            spec: NetSpec::standard(task.head()),
            dm_train: pre.transform(ds, &train_rows)?,
            dm_test: pre.transform(ds, &test_rows)?,
            y_train: train_rows.iter().map(|&r| targets[r].expect("task row")).collect(),
            y_test: test_rows.iter().map(|&r| targets[r].expect("task row")).collect(),
            name,
        });
    }
    let jobs: Vec<(usize, String)> =
        prepared.iter().enumerate().flat_map(|(t, p)| p.dm_train.factors.iter().map(move |f| (t, f.clone()))).collect();
    let outputs: Vec<(FactorTaskResult, Option<FactorEmbedding>)> = jobs
        .par_iter()
        .map(|(t, factor)| {
            let p = &prepared[*t];
            let tc = TrainConfig { seed: derive_seed(cfg.seed, &["factor", &p.name, factor]), ..cfg.train.clone() };
            let fitted = single_factor_net::<f32>(&p.dm_train, &p.y_train, factor, p.spec.clone(), &tc)
                .and_then(|net| Ok((net.predict(p.dm_test.values.view())?, net)))
                .map_err(|e| e.to_string())
                .and_then(|(pred, net)| {
                    let score = rmse(&pred, &p.y_test).map_err(|e| e.to_string())?;
                    if score.is_finite() { Ok((score, net)) } else { Err("non-finite predictions".to_string()) }
                });
            match fitted {
                Ok((score, net)) => {
                    let vector = embedding_summary(&net.net, 0).expect("single embedded group");
                    (
                        FactorTaskResult { task: p.name.clone(), factor: factor.clone(), rmse: Some(score), rank: None, error: None },
                        Some(FactorEmbedding { task: p.name.clone(), factor: factor.clone(), vector }),
                    )
                }
                Err(e) => {
                    log::warn!("{} / factor {factor}: {e}", p.name);
                    (FactorTaskResult { task: p.name.clone(), factor: factor.clone(), rmse: None, rank: None, error: Some(e) }, None)
                }
            }
        })
        .collect();
    let (per_task, embeddings): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
    Ok(FactorRanking::from_results(ds.codebook(), per_task, embeddings.into_iter().flatten().collect()))
}

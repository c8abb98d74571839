//! Subcommand implementations. Each returns the files it wrote.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use sparsebench::codebook::{load_codebook, midus_shaped, synthetic_codebook, Codebook, SyntheticLayout};
use sparsebench::dataio::{generate_synthetic, ingest, Dataset, SynthConfig};
use sparsebench::harness::{
    rank_factors, run_benchmark, BenchmarkConfig, EvalReport, FactorRankConfig, FactorRanking, HarnessError,
    ModelKind, PredictionTask,
};
use sparsebench::projection::{factor_vectors, EmbeddingAtlas, TsneConfig};
use sparsebench::stats::{sparsity_anova, sparsity_slopes, ttest_matrix, write_ttest_csv, AnovaResult};

use crate::args::{BenchmarkArgs, GenSynthArgs, IngestArgs, LayoutChoice, ProjectArgs, RankFactorsArgs, StatsArgs, TrainOverrides};
use crate::error::{classify, CliError, CliResult, Classify};
use crate::manifest::ManifestBuilder;

pub const CODEBOOK_FILE: &str = "codebook.json";
pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const INGEST_FILE: &str = "ingest.json";
pub const SPARSITY_FILE: &str = "sparsity.csv";
pub const TTEST_FILE: &str = "ttest.csv";
pub const ANOVA_FILE: &str = "anova.json";
pub const RANKING_CSV: &str = "factor_ranking.csv";
pub const RANKING_TASKS_CSV: &str = "factor_tasks.csv";
pub const RANKING_JSON: &str = "factor_ranking.json";
pub const ATLAS_CSV: &str = "atlas.csv";
pub const ATLAS_JSON: &str = "atlas.json";

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).io_ctx(format!("reading {}", path.display()))?;
    serde_json::from_str(&text).usage_ctx(format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).io_ctx(format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).io_ctx(format!("creating {}", dir.display()))
}

fn create_file(path: &Path) -> CliResult<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).io_ctx(format!("creating {}", path.display()))?))
}

fn harness_err(e: HarnessError, ctx: &str) -> CliError {
    match e {
        HarnessError::Io(io) => CliError { kind: crate::error::ExitKind::Io, error: anyhow::Error::new(io).context(ctx.to_string()) },
        other => CliError { kind: crate::error::ExitKind::Usage, error: anyhow::Error::new(other).context(ctx.to_string()) },
    }
}

fn load_inputs(codebook: &Path, data: &Path) -> CliResult<Dataset> {
    let cb = classify(load_codebook(codebook), format!("loading codebook {}", codebook.display()))?;
    classify(ingest(&cb, data), format!("ingesting {}", data.display()))
}

fn parse_list<T: std::str::FromStr<Err = HarnessError>>(items: &[String]) -> CliResult<Vec<T>> {
    items.iter().map(|s| s.parse::<T>().map_err(|e| CliError::usage(e))).collect()
}

fn tasks_or_all(items: &[String]) -> CliResult<Vec<PredictionTask>> {
    if items.is_empty() { Ok(PredictionTask::all()) } else { parse_list(items) }
}

fn apply_train(train: &mut sparsebench::neural::TrainConfig, o: &TrainOverrides) {
    if let Some(v) = o.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = o.patience {
        train.patience = v;
    }
    if let Some(v) = o.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        train.learning_rate = v;
    }
}

pub fn gen_synth(a: &GenSynthArgs) -> CliResult<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_participants {
        cfg.n_participants = n;
    }
    if let Some(r) = a.missing_rate {
        cfg.missing_rate = r;
    }
    cfg.validate().usage_ctx("invalid synthetic configuration")?;
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(p) = &a.config {
        inputs.push(p);
    }
    let cb: Codebook = match (&a.codebook, a.layout) {
        (Some(p), _) => {
            inputs.push(p);
            classify(load_codebook(p), format!("loading codebook {}", p.display()))?
        }
        (None, LayoutChoice::Midus) => midus_shaped(),
        (None, LayoutChoice::Synthetic) => synthetic_codebook(&SyntheticLayout {
            n_factors: a.factors,
            numerical_per_factor: a.numerical,
            categorical_per_factor: a.categorical,
            levels_per_categorical: a.levels,
        }),
    };
    let manifest = ManifestBuilder::new("gen-synth", &cfg, cfg.seed, &inputs)?;
    let synth = generate_synthetic(&cb, &cfg).usage_ctx("generating synthetic data")?;
    create_dir(&a.out)?;
    let cb_path = a.out.join(CODEBOOK_FILE);
    classify(cb.save(&cb_path), format!("writing {}", cb_path.display()))?;
    let data_path = a.out.join(DATA_FILE);
    classify(synth.dataset.save_csv(&data_path), format!("writing {}", data_path.display()))?;
    let truth_path = write_json(&a.out.join(TRUTH_FILE), &synth.truth)?;
    log::info!(
        "generated {} participants x {} variables, sparsity {}",
        synth.dataset.n_rows(),
        synth.dataset.n_vars(),
        synth.dataset.sparsity()
    );
    manifest.finish(&a.out, &[cb_path, data_path, truth_path])?;
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    n_participants: usize,
    n_variables: usize,
    n_factors: usize,
    n_categorical: usize,
    n_numerical: usize,
    sparsity: u64,
    mean_row_sparsity: f64,
    zero_variance: Vec<String>,
    outcomes: Vec<OutcomeCount>,
}

#[derive(Serialize)]
struct OutcomeCount {
    name: String,
    present: usize,
}

pub fn ingest_cmd(a: &IngestArgs) -> CliResult<()> {
    let manifest = ManifestBuilder::new("ingest", &serde_json::json!({}), 0, &[&a.codebook, &a.data])?;
    let ds = load_inputs(&a.codebook, &a.data)?;
    let rows = ds.sparsity_per_row();
    let cb = ds.codebook();
    let included: Vec<_> = cb.included().collect();
    let summary = IngestSummary {
        n_participants: ds.n_rows(),
        n_variables: ds.n_vars(),
        n_factors: cb.factor_count(),
        n_categorical: included.iter().filter(|v| v.is_categorical()).count(),
        n_numerical: included.iter().filter(|v| !v.is_categorical()).count(),
        sparsity: ds.sparsity(),
        mean_row_sparsity: if rows.is_empty() { 0.0 } else { rows.iter().map(|&r| r as f64).sum::<f64>() / rows.len() as f64 },
        zero_variance: ds.zero_variance().to_vec(),
        outcomes: ds
            .outcomes()
            .iter()
            .map(|(k, v)| OutcomeCount { name: k.clone(), present: v.iter().flatten().count() })
            .collect(),
    };
    create_dir(&a.out)?;
    let summary_path = write_json(&a.out.join(INGEST_FILE), &summary)?;
    let sparsity_path = a.out.join(SPARSITY_FILE);
    let mut w = create_file(&sparsity_path)?;
    {
        use std::io::Write;
        let ctx = || format!("writing {}", sparsity_path.display());
        writeln!(w, "participant_id,sparsity").io_ctx(ctx())?;
        for (id, s) in ds.participant_ids().iter().zip(&rows) {
            writeln!(w, "{id},{s}").io_ctx(ctx())?;
        }
        w.flush().io_ctx(ctx())?;
    }
    log::info!("{} participants, sparsity {}, {} zero-variance variables", summary.n_participants, summary.sparsity, summary.zero_variance.len());
    manifest.finish(&a.out, &[summary_path, sparsity_path])?;
    Ok(())
}

pub fn benchmark(a: &BenchmarkArgs) -> CliResult<()> {
    let mut cfg: BenchmarkConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(v) = a.splits {
        cfg.n_splits = v;
    }
    if let Some(v) = a.train_frac {
        cfg.train_frac = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    apply_train(&mut cfg.models.train, &a.train);
    let tasks = tasks_or_all(&a.tasks)?;
    let models: Vec<ModelKind> = if a.models.is_empty() { ModelKind::ALL.to_vec() } else { parse_list(&a.models)? };
    let mut inputs: Vec<&Path> = vec![&a.codebook, &a.data];
    if let Some(p) = &a.config {
        inputs.push(p);
    }
    let effective = serde_json::json!({
        "benchmark": cfg,
        "tasks": tasks.iter().map(|t| t.name()).collect::<Vec<_>>(),
        "models": models.iter().map(|m| m.name()).collect::<Vec<_>>(),
    });
    let manifest = ManifestBuilder::new("benchmark", &effective, cfg.seed, &inputs)?;
    let ds = load_inputs(&a.codebook, &a.data)?;
    log::info!("benchmark: {} tasks x {} models x {} splits", tasks.len(), models.len(), cfg.n_splits);
    let report = run_benchmark(&ds, &tasks, &models, &cfg).map_err(|e| harness_err(e, "running benchmark"))?;
    create_dir(&a.out)?;
    let outputs = report.save(&a.out).map_err(|e| harness_err(e, "writing report"))?;
    manifest.finish(&a.out, &outputs)?;
    let failures = report.n_failures();
    for row in report.rankings() {
        log::info!("{:<11} {:<18} rank {:>4} rmse {:.4} (sd {:.4})", row.task, row.model, row.rank, row.mean_rmse, row.sd_rmse);
    }
    if failures == report.results.len() {
        return Err(CliError::compute("every model fit failed"));
    }
    if failures > 0 {
        log::warn!("{failures} of {} fits failed; see splits.csv", report.results.len());
    }
    Ok(())
}

pub fn rank_factors_cmd(a: &RankFactorsArgs) -> CliResult<()> {
    let mut cfg: FactorRankConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => FactorRankConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    apply_train(&mut cfg.train, &a.train);
    let tasks = tasks_or_all(&a.tasks)?;
    let mut inputs: Vec<&Path> = vec![&a.codebook, &a.data];
    if let Some(p) = &a.config {
        inputs.push(p);
    }
    let effective = serde_json::json!({
        "rank_factors": cfg,
        "tasks": tasks.iter().map(|t| t.name()).collect::<Vec<_>>(),
    });
    let manifest = ManifestBuilder::new("rank-factors", &effective, cfg.seed, &inputs)?;
    let ds = load_inputs(&a.codebook, &a.data)?;
    let ranking = rank_factors(&ds, &tasks, &cfg).map_err(|e| harness_err(e, "ranking factors"))?;
    create_dir(&a.out)?;
    let csv_path = a.out.join(RANKING_CSV);
    ranking.write_csv(create_file(&csv_path)?).map_err(|e| harness_err(e, "writing factor ranking"))?;
    let tasks_path = a.out.join(RANKING_TASKS_CSV);
    ranking.write_task_csv(create_file(&tasks_path)?).map_err(|e| harness_err(e, "writing factor ranking"))?;
    let json_path = write_json(&a.out.join(RANKING_JSON), &ranking)?;
    manifest.finish(&a.out, &[csv_path, tasks_path, json_path])?;
    if ranking.factors.is_empty() {
        return Err(CliError::compute("no factor could be ranked"));
    }
    Ok(())
}

#[derive(Serialize)]
struct AnovaReport {
    n_records: usize,
    models: Vec<String>,
    anova: AnovaResult,
    slopes: std::collections::BTreeMap<String, f64>,
}

pub fn stats(a: &StatsArgs) -> CliResult<()> {
    let report_file = a.report.join(sparsebench::harness::REPORT_FILE);
    let records_file = a.report.join(sparsebench::harness::RECORDS_FILE);
    let manifest = ManifestBuilder::new("stats", &serde_json::json!({}), 0, &[&report_file, &records_file])?;
    let report = EvalReport::load(&a.report).map_err(|e| harness_err(e, format!("loading report from {}", a.report.display()).as_str()))?;
    create_dir(&a.out)?;
    let means = report.task_means().map_err(|e| harness_err(e, "collecting per-task means"))?;
    let tests = ttest_matrix(&means).map_err(|e| CliError::compute(format!("t-tests: {e}")))?;
    let ttest_path = a.out.join(TTEST_FILE);
    write_ttest_csv(&tests, create_file(&ttest_path)?).io_ctx("writing t-test table")?;
    let records = report.sparsity_records();
    let anova = sparsity_anova(&records).map_err(|e| CliError::compute(format!("sparsity ANOVA: {e}")))?;
    log::info!("sparsity x model interaction: F({}, {}) = {:.3}, p = {:.3e}", anova.df_num, anova.df_den, anova.f_stat, anova.p);
    let anova_path = write_json(
        &a.out.join(ANOVA_FILE),
        &AnovaReport { n_records: records.len(), models: report.models.clone(), anova, slopes: sparsity_slopes(&records) },
    )?;
    manifest.finish(&a.out, &[ttest_path, anova_path])?;
    Ok(())
}

pub fn project(a: &ProjectArgs) -> CliResult<()> {
    let mut cfg: TsneConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TsneConfig::default(),
    };
    if let Some(v) = a.perplexity {
        cfg.perplexity = v;
    }
    if let Some(v) = a.iterations {
        cfg.n_iter = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let mut inputs: Vec<&Path> = vec![&a.ranking, &a.codebook];
    if let Some(p) = &a.config {
        inputs.push(p);
    }
    let manifest = ManifestBuilder::new("project", &cfg, cfg.seed, &inputs)?;
    let cb = classify(load_codebook(&a.codebook), format!("loading codebook {}", a.codebook.display()))?;
    let ranking: FactorRanking = read_json(&a.ranking)?;
    let factors: Vec<String> = cb
        .factors()
        .iter()
        .filter(|f| ranking.embeddings.iter().any(|e| e.factor == f.name))
        .map(|f| f.name.clone())
        .collect();
    let vectors = factor_vectors(&factors, &ranking.embeddings).usage_ctx("averaging factor embeddings")?;
    let atlas = EmbeddingAtlas::build(&cb, &vectors, &ranking.inverse_ranks(), &cfg).usage_ctx("projecting embeddings")?;
    create_dir(&a.out)?;
    let csv_path = a.out.join(ATLAS_CSV);
    atlas.write_csv(create_file(&csv_path)?).io_ctx("writing atlas")?;
    let json_path = write_json(&a.out.join(ATLAS_JSON), &atlas)?;
    log::info!("projected {} factors, final KL {:.4}", atlas.entries.len(), atlas.kl_final);
    manifest.finish(&a.out, &[csv_path, json_path])?;
    Ok(())
}

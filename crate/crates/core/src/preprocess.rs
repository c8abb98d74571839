//! Dataset → dense design matrix: z-scored numericals, one-hot categoricals,
//! mean/all-zero imputation, and column provenance.
//!
//! Scaling parameters are fitted on training rows only. A fitted
//! [`Preprocessor`] never looks at the rows it is later applied to.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Project, VariableKind};
use crate::dataio::{Cell, Dataset};
use crate::digest::sha256_hex;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("unknown factor {0:?}")]
    UnknownFactor(String),
    #[error("row index {0} out of range")]
    RowOutOfRange(usize),
    #[error("no training rows")]
    EmptyTraining,
    #[error("dataset layout differs from the one the preprocessor was fitted on")]
    LayoutMismatch,
    #[error("export failed: {0}")]
    Export(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n − 1.
    Sample,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessOptions {
    pub sd_convention: SdConvention,
    /// Adds one 0/1 absence indicator column per variable.
    pub missing_indicators: bool,
    /// Variables of these projects are left out entirely.
    pub exclude_projects: Vec<Project>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub variable: String,
    pub factor: String,
    pub kind: VariableKind,
    pub level: Option<String>,
    #[serde(default)]
    pub indicator: bool,
}

impl ColumnMeta {
    pub fn name(&self) -> String {
        match (&self.level, self.indicator) {
            (_, true) => format!("{}:absent", self.variable),
            (Some(level), false) => format!("{}={}", self.variable, level),
            (None, false) => self.variable.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParam {
    pub variable: String,
    pub mean: f64,
    pub sd: f64,
}

/// A variable left out of the matrix, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedVariable {
    pub variable: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: Array2<f64>,
    pub columns: Vec<ColumnMeta>,
    /// Factor layout in codebook order (excluded projects removed).
    pub factors: Vec<String>,
    pub row_sparsity: Vec<u32>,
    pub scaler: Vec<ScalerParam>,
    pub dropped: Vec<DroppedVariable>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    columns: &'a [ColumnMeta],
    factors: &'a [String],
    scaler: &'a [ScalerParam],
    dropped: &'a [DroppedVariable],
    layout_digest: String,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    /// Indices of columns whose source variable belongs to `factor`.
    pub fn columns_for_factor(&self, factor: &str) -> Result<Vec<usize>, PreprocessError> {
        if !self.factors.iter().any(|f| f == factor) {
            return Err(PreprocessError::UnknownFactor(factor.to_string()));
        }
        Ok(self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.factor == factor)
            .map(|(i, _)| i)
            .collect())
    }

    /// Column partition in factor-layout order.
    pub fn factor_partition(&self) -> Vec<(String, Vec<usize>)> {
        self.factors
            .iter()
            .map(|f| (f.clone(), self.columns_for_factor(f).expect("factor from layout")))
            .collect()
    }

    /// Digest over column names and factor layout.
    pub fn layout_digest(&self) -> String {
        layout_digest(&self.columns, &self.factors)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PreprocessError> {
        let err = |e: csv::Error| PreprocessError::Export(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns.iter().map(ColumnMeta::name)).map_err(err)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| format!("{v}"))).map_err(err)?;
        }
        w.flush().map_err(|e| PreprocessError::Export(e.to_string()))
    }

    /// JSON audit record of column provenance and fitted scaler parameters.
    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&Sidecar {
            columns: &self.columns,
            factors: &self.factors,
            scaler: &self.scaler,
            dropped: &self.dropped,
            layout_digest: self.layout_digest(),
        })
        .expect("sidecar serialization")
    }
}

pub fn layout_digest(columns: &[ColumnMeta], factors: &[String]) -> String {
    let mut text = String::new();
    for c in columns {
        text.push_str(&c.name());
        text.push('\u{1f}');
        text.push_str(&c.factor);
        text.push('\n');
    }
    text.push('\u{1e}');
    for f in factors {
        text.push_str(f);
        text.push('\n');
    }
    sha256_hex(text.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
enum Plan {
    Numeric { col: usize, mean: f64, sd: f64 },
    Categorical { col: usize, n_levels: usize },
}

/// Scaling and encoding parameters fitted on a training row set.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    options: PreprocessOptions,
    considered: Vec<usize>,
    plans: Vec<Plan>,
    columns: Vec<ColumnMeta>,
    factors: Vec<String>,
    scaler: Vec<ScalerParam>,
    dropped: Vec<DroppedVariable>,
    n_vars: usize,
}

impl Preprocessor {
    pub fn fit(ds: &Dataset, train_rows: &[usize], options: &PreprocessOptions) -> Result<Self, PreprocessError> {
        if train_rows.is_empty() {
            return Err(PreprocessError::EmptyTraining);
        }
        if let Some(&r) = train_rows.iter().find(|&&r| r >= ds.n_rows()) {
            return Err(PreprocessError::RowOutOfRange(r));
        }
        let excluded = |p: Project| options.exclude_projects.contains(&p);
        let considered: Vec<usize> = (0..ds.n_vars()).filter(|&c| !excluded(ds.variable(c).project)).collect();
        let factors: Vec<String> = ds
            .codebook()
            .factors()
            .iter()
            .filter(|f| !excluded(f.project))
            .map(|f| f.name.clone())
            .collect();

        let mut plans = Vec::new();
        let mut columns = Vec::new();
        let mut scaler = Vec::new();
        let mut dropped = Vec::new();
        for &col in &considered {
            let var = ds.variable(col);
            let plan = match var.kind {
                VariableKind::Numerical => {
                    let present: Vec<f64> = train_rows
                        .iter()
                        .filter_map(|&r| match ds.cell(r, col) {
                            Cell::Number(v) => Some(v),
                            _ => None,
                        })
                        .collect();
                    let Some((mean, sd)) = moments(&present, options.sd_convention) else {
                        log::warn!("variable {} dropped: fewer than 2 present training values", var.id);
                        dropped.push(DroppedVariable {
                            variable: var.id.clone(),
                            reason: format!("{} present training values", present.len()),
                        });
                        continue;
                    };
                    if !(sd > 0.0) {
                        log::warn!("variable {} dropped: constant on training rows", var.id);
                        dropped.push(DroppedVariable {
                            variable: var.id.clone(),
                            reason: "zero training variance".into(),
                        });
                        continue;
                    }
                    scaler.push(ScalerParam { variable: var.id.clone(), mean, sd });
                    columns.push(ColumnMeta {
                        variable: var.id.clone(),
                        factor: var.factor.clone(),
                        kind: var.kind,
                        level: None,
                        indicator: false,
                    });
                    Plan::Numeric { col, mean, sd }
                }
                VariableKind::Categorical => {
                    for level in &var.levels {
                        columns.push(ColumnMeta {
                            variable: var.id.clone(),
                            factor: var.factor.clone(),
                            kind: var.kind,
                            level: Some(level.clone()),
                            indicator: false,
                        });
                    }
                    Plan::Categorical { col, n_levels: var.levels.len() }
                }
            };
            if options.missing_indicators {
                columns.push(ColumnMeta {
                    variable: var.id.clone(),
                    factor: var.factor.clone(),
                    kind: var.kind,
                    level: None,
                    indicator: true,
                });
            }
            plans.push(plan);
        }
        Ok(Preprocessor {
            options: options.clone(),
            considered,
            plans,
            columns,
            factors,
            scaler,
            dropped,
            n_vars: ds.n_vars(),
        })
    }

    pub fn scaler(&self) -> &[ScalerParam] {
        &self.scaler
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn transform(&self, ds: &Dataset, rows: &[usize]) -> Result<DesignMatrix, PreprocessError> {
        if ds.n_vars() != self.n_vars {
            return Err(PreprocessError::LayoutMismatch);
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= ds.n_rows()) {
            return Err(PreprocessError::RowOutOfRange(r));
        }
        let width = self.columns.len();
        let mut values = Array2::<f64>::zeros((rows.len(), width));
        let mut row_sparsity = Vec::with_capacity(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            let mut out = values.row_mut(i);
            let mut k = 0;
            for plan in &self.plans {
                let col = match plan {
                    Plan::Numeric { col, mean, sd } => {
                        if let Cell::Number(v) = ds.cell(r, *col) {
                            out[k] = (v - mean) / sd;
                        }
                        k += 1;
                        *col
                    }
                    Plan::Categorical { col, n_levels } => {
                        if let Cell::Level(l) = ds.cell(r, *col) {
                            out[k + l as usize] = 1.0;
                        }
                        k += n_levels;
                        *col
                    }
                };
                if self.options.missing_indicators {
                    out[k] = if ds.cell(r, col).is_present() { 0.0 } else { 1.0 };
                    k += 1;
                }
            }
            debug_assert_eq!(k, width);
            row_sparsity.push(self.considered.iter().filter(|&&c| !ds.cell(r, c).is_present()).count() as u32);
        }
        Ok(DesignMatrix {
            values,
            columns: self.columns.clone(),
            factors: self.factors.clone(),
            row_sparsity,
            scaler: self.scaler.clone(),
            dropped: self.dropped.clone(),
        })
    }
}

/// Fits on `train` rows and transforms both row sets with the same layout.
pub fn fit_transform(
    ds: &Dataset,
    train: &[usize],
    apply: &[usize],
    options: &PreprocessOptions,
) -> Result<(DesignMatrix, DesignMatrix), PreprocessError> {
    let pre = Preprocessor::fit(ds, train, options)?;
    Ok((pre.transform(ds, train)?, pre.transform(ds, apply)?))
}

fn moments(values: &[f64], convention: SdConvention) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match convention {
        SdConvention::Population => n as f64,
        SdConvention::Sample => (n - 1) as f64,
    };
    Some((mean, (ss / denom).sqrt()))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::codebook::{Codebook, FactorSpec, VariableSpec};

    fn dataset(cells: Vec<Cell>, n: usize) -> Dataset {
        let cb = Codebook::new(
            vec![
                FactorSpec { name: "A".into(), project: Project::Survey },
                FactorSpec { name: "B".into(), project: Project::Cognitive },
            ],
            vec![
                VariableSpec::numerical("x", Project::Survey, "A"),
                VariableSpec::categorical("c", Project::Survey, "A", &["a", "b", "c"]),
                VariableSpec::numerical("z", Project::Cognitive, "B"),
            ],
        )
        .unwrap();
        let ids = (0..n).map(|i| format!("p{i}")).collect();
        Dataset::new(Arc::new(cb), ids, cells, BTreeMap::new()).unwrap()
    }

    fn grid() -> Dataset {
        use Cell::*;
        dataset(
            vec![
                Number(1.0), Level(0), Number(5.0),
                Number(2.0), Level(1), Number(6.0),
                Number(3.0), Level(2), Number(7.0),
                Missing, Invalid, Number(8.0),
            ],
            4,
        )
    }

    #[test]
    fn zscores_with_population_sd() {
        let ds = grid();
        let (train, _) = fit_transform(&ds, &[0, 1, 2], &[3], &PreprocessOptions::default()).unwrap();
        let col: Vec<f64> = train.values.column(0).to_vec();
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in col.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(train.scaler[0].mean, 2.0);
    }

    #[test]
    fn one_hot_and_imputation() {
        let ds = grid();
        let (train, apply) = fit_transform(&ds, &[0, 1, 2], &[1, 3], &PreprocessOptions::default()).unwrap();
        assert_eq!(train.n_cols(), 1 + 3 + 1);
        assert_eq!(apply.values.row(0).to_vec()[1..4], [0.0, 1.0, 0.0]);
        // absent numerical -> training mean (0 after scaling), absent categorical -> all zeros
        assert_eq!(apply.values.row(1).to_vec()[..4], [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(apply.row_sparsity, vec![0, 2]);
    }

    #[test]
    fn sample_sd_convention() {
        let ds = grid();
        let opts = PreprocessOptions { sd_convention: SdConvention::Sample, ..Default::default() };
        let (train, _) = fit_transform(&ds, &[0, 1, 2], &[3], &opts).unwrap();
        assert!((train.values[[0, 0]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_values_drops_variable() {
        let ds = grid();
        let (train, _) = fit_transform(&ds, &[0, 3], &[1], &PreprocessOptions::default()).unwrap();
        assert_eq!(train.dropped.len(), 1);
        assert_eq!(train.dropped[0].variable, "x");
        assert_eq!(train.n_cols(), 3 + 1);
    }

    #[test]
    fn indicators_and_project_exclusion() {
        let ds = grid();
        let opts = PreprocessOptions {
            missing_indicators: true,
            exclude_projects: vec![Project::Cognitive],
            ..Default::default()
        };
        let (train, apply) = fit_transform(&ds, &[0, 1, 2], &[3], &opts).unwrap();
        assert_eq!(train.n_cols(), (1 + 1) + (3 + 1));
        assert_eq!(train.factors, vec!["A".to_string()]);
        assert_eq!(apply.values.row(0).to_vec(), vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(train.columns_for_factor("B"), Err(PreprocessError::UnknownFactor(_))));
    }

    #[test]
    fn factor_columns_partition() {
        let ds = grid();
        let (train, _) = fit_transform(&ds, &[0, 1, 2], &[3], &PreprocessOptions::default()).unwrap();
        assert_eq!(train.columns_for_factor("A").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(train.columns_for_factor("B").unwrap(), vec![4]);
    }

    #[test]
    fn apply_rows_never_influence_scaler() {
        use Cell::*;
        let ds = grid();
        let mut cells = ds.cells().to_vec();
        cells[9] = Number(1000.0);
        let altered = dataset(cells, 4);
        let opts = PreprocessOptions::default();
        let a = Preprocessor::fit(&ds, &[0, 1, 2], &opts).unwrap();
        let b = Preprocessor::fit(&altered, &[0, 1, 2], &opts).unwrap();
        assert_eq!(a.scaler(), b.scaler());
    }

    #[test]
    fn exports_csv_and_sidecar() {
        let ds = grid();
        let (train, _) = fit_transform(&ds, &[0, 1, 2], &[3], &PreprocessOptions::default()).unwrap();
        let mut buf = Vec::new();
        train.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,c=a,c=b,c=c,z\n"));
        let side: serde_json::Value = serde_json::from_str(&train.sidecar_json()).unwrap();
        assert_eq!(side["scaler"].as_array().unwrap().len(), 2);
    }
}

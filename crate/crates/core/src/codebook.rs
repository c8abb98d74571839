//! Variable schema and the project → factor → variable hierarchy.
//!
//! A [`Codebook`] is loaded from a JSON document and validated once; after
//! that it is immutable and can be shared freely between threads.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod presets;

pub use presets::{midus_shaped, synthetic_codebook, SyntheticLayout, MIDUS_FACTORS};

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("codebook parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate variable id {0:?}")]
    DuplicateVariableId(String),
    #[error("duplicate factor name {0:?}")]
    DuplicateFactor(String),
    #[error("variable {variable:?} references unknown factor {factor:?}")]
    UnknownFactor { variable: String, factor: String },
    #[error("variable {variable:?} declares project {declared} but factor {factor:?} belongs to {actual}")]
    ProjectMismatch {
        variable: String,
        factor: String,
        declared: Project,
        actual: Project,
    },
    #[error("categorical variable {0:?} needs at least 2 levels")]
    TooFewLevels(String),
    #[error("categorical variable {0:?} has duplicate levels")]
    DuplicateLevel(String),
    #[error("numerical variable {0:?} must not declare levels")]
    NumericalWithLevels(String),
    #[error("sentinel tokens must be pairwise distinct")]
    AmbiguousSentinels,
    #[error("unknown factor {0:?}")]
    NoSuchFactor(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Top-level data-collection project a factor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Project {
    Survey,
    Cognitive,
    DailyDiary,
    Biomarkers,
}

impl Project {
    pub const ALL: [Project; 4] = [
        Project::Survey,
        Project::Cognitive,
        Project::DailyDiary,
        Project::Biomarkers,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Project::Survey => "Survey",
            Project::Cognitive => "Cognitive",
            Project::DailyDiary => "DailyDiary",
            Project::Biomarkers => "Biomarkers",
        }
    }
}

impl fmt::Display for Project {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariableKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub id: String,
    pub project: Project,
    pub factor: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    pub included: bool,
}

impl VariableSpec {
    pub fn numerical(id: &str, project: Project, factor: &str) -> Self {
        VariableSpec {
            id: id.to_string(),
            project,
            factor: factor.to_string(),
            kind: VariableKind::Numerical,
            levels: Vec::new(),
            included: true,
        }
    }

    pub fn categorical<S: AsRef<str>>(id: &str, project: Project, factor: &str, levels: &[S]) -> Self {
        VariableSpec {
            id: id.to_string(),
            project,
            factor: factor.to_string(),
            kind: VariableKind::Categorical,
            levels: levels.iter().map(|l| l.as_ref().to_string()).collect(),
            included: true,
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == VariableKind::Categorical
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub name: String,
    pub project: Project,
}

/// Tokens used in data files for the three absence states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sentinels {
    pub missing: String,
    pub invalid: String,
    pub inapplicable: String,
}

impl Default for Sentinels {
    fn default() -> Self {
        Sentinels {
            missing: String::new(),
            invalid: "INVALID".to_string(),
            inapplicable: "INAPP".to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookDoc {
    factors: Vec<FactorSpec>,
    variables: Vec<VariableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentinels: Option<Sentinels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    factors: Vec<FactorSpec>,
    variables: Vec<VariableSpec>,
    sentinels: Sentinels,
    sentinels_explicit: bool,
    factor_index: HashMap<String, usize>,
    variable_index: HashMap<String, usize>,
}

impl Codebook {
    /// Validates and builds a codebook with default sentinel tokens.
    pub fn new(factors: Vec<FactorSpec>, variables: Vec<VariableSpec>) -> Result<Self, CodebookError> {
        Self::build(factors, variables, None)
    }

    pub fn with_sentinels(
        factors: Vec<FactorSpec>,
        variables: Vec<VariableSpec>,
        sentinels: Sentinels,
    ) -> Result<Self, CodebookError> {
        Self::build(factors, variables, Some(sentinels))
    }

    fn build(
        factors: Vec<FactorSpec>,
        variables: Vec<VariableSpec>,
        sentinels: Option<Sentinels>,
    ) -> Result<Self, CodebookError> {
        let mut factor_index = HashMap::with_capacity(factors.len());
        for (i, f) in factors.iter().enumerate() {
            if factor_index.insert(f.name.clone(), i).is_some() {
                return Err(CodebookError::DuplicateFactor(f.name.clone()));
            }
        }
        let mut variable_index = HashMap::with_capacity(variables.len());
        for (i, v) in variables.iter().enumerate() {
            if variable_index.insert(v.id.clone(), i).is_some() {
                return Err(CodebookError::DuplicateVariableId(v.id.clone()));
            }
            let fi = factor_index.get(&v.factor).ok_or_else(|| CodebookError::UnknownFactor {
                variable: v.id.clone(),
                factor: v.factor.clone(),
            })?;
            let actual = factors[*fi].project;
            if actual != v.project {
                return Err(CodebookError::ProjectMismatch {
                    variable: v.id.clone(),
                    factor: v.factor.clone(),
                    declared: v.project,
                    actual,
                });
            }
            match v.kind {
                VariableKind::Categorical => {
                    if v.levels.len() < 2 {
                        return Err(CodebookError::TooFewLevels(v.id.clone()));
                    }
                    let distinct: HashSet<&str> = v.levels.iter().map(String::as_str).collect();
                    if distinct.len() != v.levels.len() {
                        return Err(CodebookError::DuplicateLevel(v.id.clone()));
                    }
                }
                VariableKind::Numerical => {
                    if !v.levels.is_empty() {
                        return Err(CodebookError::NumericalWithLevels(v.id.clone()));
                    }
                }
            }
        }
        let sentinels_explicit = sentinels.is_some();
        let sentinels = sentinels.unwrap_or_default();
        if sentinels.missing == sentinels.invalid
            || sentinels.missing == sentinels.inapplicable
            || sentinels.invalid == sentinels.inapplicable
        {
            return Err(CodebookError::AmbiguousSentinels);
        }
        Ok(Codebook {
            factors,
            variables,
            sentinels,
            sentinels_explicit,
            factor_index,
            variable_index,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CodebookError> {
        let doc: CodebookDoc = serde_json::from_str(text).map_err(|e| CodebookError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::build(doc.factors, doc.variables, doc.sentinels)
    }

    pub fn to_json_string(&self) -> String {
        let doc = CodebookDoc {
            factors: self.factors.clone(),
            variables: self.variables.clone(),
            sentinels: self.sentinels_explicit.then(|| self.sentinels.clone()),
        };
        // Serializing plain owned data cannot fail.
        serde_json::to_string_pretty(&doc).expect("codebook serialization")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodebookError> {
        let path = path.as_ref();
        let mut text = self.to_json_string();
        text.push('\n');
        fs::write(path, text).map_err(|source| CodebookError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn sentinels(&self) -> &Sentinels {
        &self.sentinels
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, name: &str) -> Option<&FactorSpec> {
        self.factor_index.get(name).map(|&i| &self.factors[i])
    }

    pub fn factor_position(&self, name: &str) -> Option<usize> {
        self.factor_index.get(name).copied()
    }

    pub fn variable(&self, id: &str) -> Option<&VariableSpec> {
        self.variable_index.get(id).map(|&i| &self.variables[i])
    }

    pub fn variable_position(&self, id: &str) -> Option<usize> {
        self.variable_index.get(id).copied()
    }

    pub fn included(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables.iter().filter(|v| v.included)
    }

    /// Included variable counts as `(categorical, numerical)`.
    pub fn kind_counts(&self) -> (usize, usize) {
        self.included().fold((0, 0), |(c, n), v| match v.kind {
            VariableKind::Categorical => (c + 1, n),
            VariableKind::Numerical => (c, n + 1),
        })
    }

    /// Included variables of `factor`, in codebook order.
    pub fn factor_variables(&self, factor: &str) -> Result<Vec<&VariableSpec>, CodebookError> {
        if !self.factor_index.contains_key(factor) {
            return Err(CodebookError::NoSuchFactor(factor.to_string()));
        }
        Ok(self.included().filter(|v| v.factor == factor).collect())
    }

    /// Returns a copy with the listed variables marked `included = false`.
    pub fn with_excluded<'a, I>(&self, ids: I) -> Codebook
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = self.clone();
        for id in ids {
            if let Some(&i) = self.variable_index.get(id) {
                out.variables[i].included = false;
            }
        }
        out
    }
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook, CodebookError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CodebookError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Codebook::from_json_str(&text)
}

pub fn save_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<(), CodebookError> {
    cb.save(path)
}

//! Participant data: cell classification, CSV ingest/export and sparsity
//! accounting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::codebook::{Codebook, VariableKind, VariableSpec};

pub mod synth;

pub use synth::{
    generate_synthetic, GroundTruth, MissingMechanism, OutcomeFn, SynthConfig, SynthConfigError, Synthetic,
};

pub const PARTICIPANT_COLUMN: &str = "participant_id";
pub const OUTCOME_PREFIX: &str = "outcome:";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("header/codebook mismatch: {0}")]
    HeaderMismatch(String),
    #[error("line {line}, column {column:?}: cannot parse {token:?} as a finite number")]
    UnparseableNumber { line: u64, column: String, token: String },
    #[error("line {line}, column {column:?}: {token:?} is not a level of this variable")]
    UnknownLevel { line: u64, column: String, token: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One participant × variable entry.
///
/// `Number` and `Level` are the present states; the remaining three are the
/// absence sentinels, all of which count toward sparsity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Number(f64),
    Level(u32),
    Missing,
    Invalid,
    Inapplicable,
}

impl Cell {
    pub fn is_present(&self) -> bool {
        matches!(self, Cell::Number(_) | Cell::Level(_))
    }

    fn valid_for(&self, var: &VariableSpec) -> bool {
        match (self, var.kind) {
            (Cell::Number(v), VariableKind::Numerical) => v.is_finite(),
            (Cell::Level(l), VariableKind::Categorical) => (*l as usize) < var.levels.len(),
            (Cell::Number(_), _) | (Cell::Level(_), _) => false,
            _ => true,
        }
    }
}

/// Participant × included-variable grid plus per-participant outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    codebook: Arc<Codebook>,
    variables: Vec<usize>,
    participant_ids: Vec<String>,
    cells: Vec<Cell>,
    outcomes: BTreeMap<String, Vec<Option<f64>>>,
    zero_variance: Vec<String>,
}

impl Dataset {
    /// `cells` is row-major over the codebook's included variables.
    pub fn new(
        codebook: Arc<Codebook>,
        participant_ids: Vec<String>,
        cells: Vec<Cell>,
        outcomes: BTreeMap<String, Vec<Option<f64>>>,
    ) -> Result<Self, DataError> {
        let variables: Vec<usize> = codebook
            .variables()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.included)
            .map(|(i, _)| i)
            .collect();
        let n = participant_ids.len();
        if cells.len() != n * variables.len() {
            return Err(DataError::Invalid(format!(
                "grid has {} cells, expected {} × {}",
                cells.len(),
                n,
                variables.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &participant_ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate participant id {id:?}")));
            }
        }
        for (name, vals) in &outcomes {
            if vals.len() != n {
                return Err(DataError::Invalid(format!("outcome {name:?} has {} entries", vals.len())));
            }
            if vals.iter().flatten().any(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!("outcome {name:?} has a non-finite value")));
            }
        }
        let p = variables.len();
        for (i, cell) in cells.iter().enumerate() {
            let var = &codebook.variables()[variables[i % p.max(1)]];
            if !cell.valid_for(var) {
                return Err(DataError::Invalid(format!(
                    "row {}, variable {:?}: {cell:?} not valid for a {:?} variable",
                    i / p,
                    var.id,
                    var.kind
                )));
            }
        }
        Ok(Dataset {
            codebook,
            variables,
            participant_ids,
            cells,
            outcomes,
            zero_variance: Vec::new(),
        })
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn codebook_arc(&self) -> Arc<Codebook> {
        Arc::clone(&self.codebook)
    }

    pub fn n_rows(&self) -> usize {
        self.participant_ids.len()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn participant_ids(&self) -> &[String] {
        &self.participant_ids
    }

    /// Included variables in grid column order.
    pub fn variables(&self) -> impl Iterator<Item = &VariableSpec> + '_ {
        self.variables.iter().map(move |&i| &self.codebook.variables()[i])
    }

    pub fn variable(&self, col: usize) -> &VariableSpec {
        &self.codebook.variables()[self.variables[col]]
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.variables.len() + col]
    }

    pub fn row(&self, row: usize) -> &[Cell] {
        let p = self.variables.len();
        &self.cells[row * p..(row + 1) * p]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn outcomes(&self) -> &BTreeMap<String, Vec<Option<f64>>> {
        &self.outcomes
    }

    pub fn outcome(&self, name: &str) -> Option<&[Option<f64>]> {
        self.outcomes.get(name).map(Vec::as_slice)
    }

    /// Variables demoted at ingest because they carried no variation.
    pub fn zero_variance(&self) -> &[String] {
        &self.zero_variance
    }

    /// Total count of absent cells.
    pub fn sparsity(&self) -> u64 {
        self.cells.iter().filter(|c| !c.is_present()).count() as u64
    }

    pub fn sparsity_per_row(&self) -> Vec<u32> {
        let p = self.variables.len();
        if p == 0 {
            return vec![0; self.n_rows()];
        }
        self.cells
            .chunks(p)
            .map(|row| row.iter().filter(|c| !c.is_present()).count() as u32)
            .collect()
    }

    /// Demotes variables whose present cells take at most one distinct value.
    fn drop_zero_variance(self) -> Result<Self, DataError> {
        let p = self.n_vars();
        let n = self.n_rows();
        let mut flagged = Vec::new();
        for col in 0..p {
            let mut first: Option<Cell> = None;
            let mut varies = false;
            for row in 0..n {
                let c = self.cells[row * p + col];
                if !c.is_present() {
                    continue;
                }
                match first {
                    None => first = Some(c),
                    Some(f) if f != c => {
                        varies = true;
                        break;
                    }
                    _ => {}
                }
            }
            if !varies {
                flagged.push(col);
            }
        }
        if flagged.is_empty() {
            return Ok(self);
        }
        let ids: Vec<String> = flagged.iter().map(|&c| self.variable(c).id.clone()).collect();
        for id in &ids {
            log::warn!("variable {id} has zero variance; excluded");
        }
        let keep: Vec<usize> = (0..p).filter(|c| !flagged.contains(c)).collect();
        let mut cells = Vec::with_capacity(n * keep.len());
        for row in 0..n {
            cells.extend(keep.iter().map(|&c| self.cells[row * p + c]));
        }
        let codebook = Arc::new(self.codebook.with_excluded(ids.iter().map(String::as_str)));
        let mut out = Dataset::new(codebook, self.participant_ids, cells, self.outcomes)?;
        out.zero_variance = ids;
        Ok(out)
    }

    /// Writes the dataset in the ingest CSV layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let sentinels = self.codebook.sentinels();
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        let mut header = vec![PARTICIPANT_COLUMN.to_string()];
        header.extend(self.variables().map(|v| v.id.clone()));
        header.extend(self.outcomes.keys().map(|k| format!("{OUTCOME_PREFIX}{k}")));
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for row in 0..self.n_rows() {
            record.clear();
            record.push(self.participant_ids[row].clone());
            for (col, cell) in self.row(row).iter().enumerate() {
                record.push(match *cell {
                    Cell::Number(v) => format!("{v}"),
                    Cell::Level(l) => self.variable(col).levels[l as usize].clone(),
                    Cell::Missing => sentinels.missing.clone(),
                    Cell::Invalid => sentinels.invalid.clone(),
                    Cell::Inapplicable => sentinels.inapplicable.clone(),
                });
            }
            for vals in self.outcomes.values() {
                record.push(vals[row].map(|v| format!("{v}")).unwrap_or_default());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|source| DataError::Io { path: "<writer>".into(), source })?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

enum Column {
    Variable(usize),
    Outcome(String),
    Ignored,
}

/// Reads a participant CSV against `cb`.
pub fn ingest(cb: &Codebook, data_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = data_path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(cb, std::io::BufReader::new(file))
}

pub fn ingest_reader<R: Read>(cb: &Codebook, reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some(PARTICIPANT_COLUMN) {
        return Err(DataError::HeaderMismatch(format!(
            "first column must be {PARTICIPANT_COLUMN:?}"
        )));
    }
    let included: Vec<usize> = cb
        .variables()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.included)
        .map(|(i, _)| i)
        .collect();
    let grid_col: HashMap<usize, usize> = included.iter().enumerate().map(|(g, &v)| (v, g)).collect();
    let mut columns = Vec::with_capacity(header.len() - 1);
    let mut seen = HashSet::new();
    for name in header.iter().skip(1) {
        if !seen.insert(name.to_string()) {
            return Err(DataError::HeaderMismatch(format!("duplicate column {name:?}")));
        }
        if let Some(outcome) = name.strip_prefix(OUTCOME_PREFIX) {
            columns.push(Column::Outcome(outcome.to_string()));
            continue;
        }
        match cb.variable_position(name) {
            Some(pos) if cb.variables()[pos].included => columns.push(Column::Variable(grid_col[&pos])),
            Some(_) => columns.push(Column::Ignored),
            None => {
                return Err(DataError::HeaderMismatch(format!("column {name:?} is not in the codebook")));
            }
        }
    }
    let absent: Vec<&str> = included
        .iter()
        .map(|&i| cb.variables()[i].id.as_str())
        .filter(|id| !seen.contains(*id))
        .collect();
    if !absent.is_empty() {
        return Err(DataError::HeaderMismatch(format!(
            "{} included variable(s) missing from header, first {:?}",
            absent.len(),
            absent[0]
        )));
    }

    let level_maps: Vec<HashMap<&str, u32>> = included
        .iter()
        .map(|&i| {
            cb.variables()[i]
                .levels
                .iter()
                .enumerate()
                .map(|(k, l)| (l.as_str(), k as u32))
                .collect()
        })
        .collect();
    let sentinels = cb.sentinels();
    let p = included.len();
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    let mut outcomes: BTreeMap<String, Vec<Option<f64>>> = columns
        .iter()
        .filter_map(|c| match c {
            Column::Outcome(name) => Some((name.clone(), Vec::new())),
            _ => None,
        })
        .collect();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(DataError::RaggedRow { line, expected: header.len(), found: record.len() });
        }
        ids.push(record[0].to_string());
        let base = cells.len();
        cells.resize(base + p, Cell::Missing);
        for (k, column) in columns.iter().enumerate() {
            let token = &record[k + 1];
            match column {
                Column::Ignored => {}
                Column::Outcome(name) => {
                    let value = if token.is_empty()
                        || token == sentinels.missing
                        || token == sentinels.invalid
                        || token == sentinels.inapplicable
                    {
                        None
                    } else {
                        Some(parse_finite(token).ok_or_else(|| DataError::UnparseableNumber {
                            line,
                            column: header[k + 1].to_string(),
                            token: token.to_string(),
                        })?)
                    };
                    outcomes.get_mut(name).expect("outcome registered").push(value);
                }
                Column::Variable(g) => {
                    let cell = if token == sentinels.missing {
                        Cell::Missing
                    } else if token == sentinels.invalid {
                        Cell::Invalid
                    } else if token == sentinels.inapplicable {
                        Cell::Inapplicable
                    } else {
                        let var = &cb.variables()[included[*g]];
                        match var.kind {
                            VariableKind::Numerical => {
                                Cell::Number(parse_finite(token).ok_or_else(|| DataError::UnparseableNumber {
                                    line,
                                    column: var.id.clone(),
                                    token: token.to_string(),
                                })?)
                            }
                            VariableKind::Categorical => {
                                Cell::Level(*level_maps[*g].get(token).ok_or_else(|| DataError::UnknownLevel {
                                    line,
                                    column: var.id.clone(),
                                    token: token.to_string(),
                                })?)
                            }
                        }
                    };
                    cells[base + g] = cell;
                }
            }
        }
    }
    Dataset::new(Arc::new(cb.clone()), ids, cells, outcomes)?.drop_zero_variance()
}

fn parse_finite(token: &str) -> Option<f64> {
    token.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

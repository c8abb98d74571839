//! Report files: `splits.csv`, `records.csv`, `summary.json`, `report.json`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalReport, HarnessError, ModelSummary, SampleRecord, SplitResult};

pub const SPLITS_FILE: &str = "splits.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Format(e.to_string())
}

#[derive(Serialize)]
struct Summary<'a> {
    tasks: &'a [String],
    models: &'a [String],
    n_splits: usize,
    train_frac: f64,
    seed: u64,
    n_failures: usize,
    rankings: Vec<ModelSummary>,
}

impl EvalReport {
    /// One row per (task, model, split).
    pub fn write_splits_csv<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        write_rows(writer, &self.results)
    }

    /// One row per (task, model, split, test sample).
    pub fn write_records_csv<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        write_rows(writer, &self.records)
    }

    pub fn summary_json(&self) -> String {
        let s = Summary {
            tasks: &self.tasks,
            models: &self.models,
            n_splits: self.n_splits,
            train_frac: self.train_frac,
            seed: self.seed,
            n_failures: self.n_failures(),
            rankings: self.rankings(),
        };
        serde_json::to_string_pretty(&s).expect("summary serialization")
    }

    /// Writes the four report files into `dir` and returns their paths.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        fs::create_dir_all(dir)?;
        let paths: Vec<PathBuf> = [SPLITS_FILE, RECORDS_FILE, SUMMARY_FILE, REPORT_FILE].iter().map(|f| dir.join(f)).collect();
        self.write_splits_csv(BufWriter::new(File::create(&paths[0])?))?;
        self.write_records_csv(BufWriter::new(File::create(&paths[1])?))?;
        fs::write(&paths[2], self.summary_json())?;
        let full = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Format(e.to_string()))?;
        fs::write(&paths[3], full)?;
        Ok(paths)
    }

    /// Reads a report written by [`EvalReport::save`].
    pub fn load(dir: &Path) -> Result<EvalReport, HarnessError> {
        let text = fs::read_to_string(dir.join(REPORT_FILE))?;
        let mut report: EvalReport =
            serde_json::from_str(&text).map_err(|e| HarnessError::Format(format!("{REPORT_FILE}: {e}")))?;
        report.records = read_records(BufReader::new(File::open(dir.join(RECORDS_FILE))?))?;
        Ok(report)
    }
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>, HarnessError> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<SampleRecord>, HarnessError> {
    read_rows(reader)
}

pub fn read_splits<R: Read>(reader: R) -> Result<Vec<SplitResult>, HarnessError> {
    read_rows(reader)
}

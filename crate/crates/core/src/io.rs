//! Source-task dataset files.
//!
//! The primary format is line-delimited JSON: a header line
//! `{"task_id", "dim", "lower", "upper"}` followed by one `{"x", "y"}` record
//! per line, in original coordinates and maximization sense. A CSV file with
//! columns `x_0, .., x_{d-1}, y` is accepted as a fallback; it carries no
//! header, so the caller supplies the domain and the file stem becomes the
//! task id.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{validate_records, RawRecord, SearchDomain, TaskDataset, TaskRole, ValidationReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub task_id: String,
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DatasetHeader {
    pub fn domain(&self) -> Result<SearchDomain> {
        let domain = SearchDomain::new(self.lower.clone(), self.upper.clone())?;
        if domain.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: domain.dim(),
            });
        }
        Ok(domain)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub records: Vec<RawRecord>,
}

impl DatasetFile {
    pub fn new(task_id: impl Into<String>, domain: &SearchDomain, records: Vec<RawRecord>) -> Self {
        Self {
            header: DatasetHeader {
                task_id: task_id.into(),
                dim: domain.dim(),
                lower: domain.lower().to_vec(),
                upper: domain.upper().to_vec(),
            },
            records,
        }
    }

    /// Exports a dataset back into original coordinates.
    pub fn from_task(dataset: &TaskDataset, domain: &SearchDomain) -> Result<Self> {
        let records = dataset
            .samples()
            .iter()
            .map(|s| {
                Ok(RawRecord {
                    x: domain.denormalize_point(&s.x)?,
                    y: s.y_raw,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(dataset.task_id(), domain, records))
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate_records(&self.records, &self.header.domain()?)
    }

    pub fn to_task(&self, role: TaskRole) -> Result<TaskDataset> {
        TaskDataset::from_records(
            self.header.task_id.clone(),
            role,
            &self.header.domain()?,
            &self.records,
        )
    }
}

/// Reads a dataset file. `.csv` files need `csv_domain`; everything else is
/// parsed as line-delimited JSON.
pub fn read_dataset(path: &Path, csv_domain: Option<&SearchDomain>) -> Result<DatasetFile> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let domain = csv_domain.ok_or_else(|| {
            Error::MalformedDataset(format!("{}: CSV datasets need an explicit domain", path.display()))
        })?;
        read_csv(path, domain)
    } else {
        read_jsonl(path)
    }
}

fn read_jsonl(path: &Path) -> Result<DatasetFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let header: DatasetHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line.map_err(|e| Error::io(path, e))?)?,
        None => {
            return Err(Error::MalformedDataset(format!(
                "{}: missing header line",
                path.display()
            )))
        }
    };
    header.domain()?;
    let mut records = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| {
            Error::MalformedDataset(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        records.push(rec);
    }
    Ok(DatasetFile { header, records })
}

fn read_csv(path: &Path, domain: &SearchDomain) -> Result<DatasetFile> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let dim = domain.dim();
    let expected: Vec<String> = (0..dim)
        .map(|d| format!("x_{d}"))
        .chain(std::iter::once("y".to_string()))
        .collect();
    if headers.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(Error::MalformedDataset(format!(
            "{}: expected columns {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let values = row
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::MalformedDataset(format!("{}: row {i}: {e}", path.display())))?;
        let (x, y) = values.split_at(dim);
        records.push(RawRecord {
            x: x.to_vec(),
            y: y[0],
        });
    }
    let task_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DatasetFile::new(task_id, domain, records))
}

pub fn write_dataset(path: &Path, dataset: &DatasetFile) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut out, &dataset.header)?;
    out.write_all(b"\n").map_err(io)?;
    for rec in &dataset.records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Column layouts of the CSV files the tool writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// `t,x1,...,xd`.
    Trajectory(usize),
    Convergence,
    Spectrum,
    Moments,
    Density,
    Nll,
}

impl Schema {
    pub fn header(self) -> Vec<String> {
        let fixed: &[&str] = match self {
            Schema::Trajectory(d) => {
                return std::iter::once("t".to_string()).chain((1..=d).map(|i| format!("x{i}"))).collect()
            }
            Schema::Convergence => &["method", "dt", "rmse", "paths", "excluded"],
            Schema::Spectrum => &["freq", "power"],
            Schema::Moments => &["t", "mean_sq", "se", "K_LT", "K_S"],
            Schema::Density => &["x", "density"],
            Schema::Nll => &["transitions", "log_det", "quadratic", "nll"],
        };
        fixed.iter().map(|s| s.to_string()).collect()
    }
}

/// One CSV cell. Floats use the shortest representation that reads back to
/// the same value.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => format!("{v:?}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

fn io_error(path: &Path, source: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.to_path_buf(), message: source.to_string() }
}

pub fn emit_csv(path: &Path, schema: Schema, rows: impl IntoIterator<Item = Vec<Cell>>) -> Result<(), CliError> {
    let header = schema.header();
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file));
    w.write_record(&header).map_err(|e| io_error(path, e))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(CliError::Internal(format!(
                "row has {} cells, schema has {} columns",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(Cell::render)).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_error(path, e))?;
    w.write_all(b"\n").map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}

/// Reads a trajectory CSV (`t,x1,...,xd`) into states, dropping the time
/// column.
pub fn read_trajectory(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_error(path, e))?;
    let header = reader.headers().map_err(|e| io_error(path, e))?.clone();
    let expected = Schema::Trajectory(dim).header();
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(CliError::Data(format!("{}: expected columns {}", path.display(), expected.join(","))));
    }
    let mut states = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_error(path, e))?;
        let row: Result<Vec<f64>, _> = record.iter().skip(1).map(str::parse::<f64>).collect();
        let row =
            row.map_err(|_| CliError::Data(format!("{}: malformed number on data row {}", path.display(), line + 1)))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Data(format!("{}: non-finite value on data row {}", path.display(), line + 1)));
        }
        states.push(row);
    }
    Ok(states)
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub splitkit: &'static str,
    pub cli: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub command: &'static str,
    pub config: &'a crate::RunConfig,
    pub args: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub started_at: String,
    pub wall_seconds: f64,
    pub outputs: Vec<PathBuf>,
    pub versions: Versions,
    pub summary: serde_json::Value,
}

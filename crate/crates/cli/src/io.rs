use std::fs;
use std::io::Write;
use std::path::Path;

use amos_core::{AmosUnitParams, AnnGraph, SpikingNetwork, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }

    pub fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Config(_) | TrainError::Target(_) => CliError::Usage(e.to_string()),
            TrainError::Unit(_) => CliError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::data(path.display(), e))
}

/// Writes `text` to `path`, or stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                // a closed pipe (`| head`) is not a failure
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.map_err(|e| CliError::data("stdout", e)),
            }
        }
    }
}

pub fn load_unit(path: &Path) -> Result<AmosUnitParams> {
    AmosUnitParams::from_json(&read(path)?).map_err(|e| CliError::data(path.display(), e))
}

pub fn load_graph(path: &Path) -> Result<AnnGraph> {
    AnnGraph::from_json(&read(path)?).map_err(|e| CliError::data(path.display(), e))
}

pub fn load_network(path: &Path) -> Result<SpikingNetwork> {
    SpikingNetwork::from_json(&read(path)?).map_err(|e| CliError::data(path.display(), e))
}

/// Writes unit parameters and reads them back through validation.
pub fn save_unit(path: &Path, p: &AmosUnitParams) -> Result<()> {
    write(path, &p.to_json())?;
    let back = load_unit(path)?;
    if &back != p {
        return Err(CliError::Data(format!("{}: re-read parameters differ", path.display())));
    }
    Ok(())
}

pub fn save_network(path: &Path, net: &SpikingNetwork) -> Result<()> {
    write(path, &net.to_json())?;
    let back = load_network(path)?;
    if &back != net {
        return Err(CliError::Data(format!("{}: re-read network differs", path.display())));
    }
    Ok(())
}

/// Numeric rows of a CSV with a header. Rows may carry one extra trailing
/// column (e.g. a label), which is dropped.
pub fn read_dataset(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::data(path.display(), e))?;
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(path.display(), e))?;
        let mut row = record
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::data(format!("{} row {}", path.display(), n + 1), e))?;
        if row.len() == dim + 1 {
            row.pop();
        }
        if row.len() != dim {
            return Err(CliError::Data(format!(
                "{} row {}: {} columns, network expects {dim}",
                path.display(),
                n + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::data("csv", e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| CliError::data("csv", e))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data("csv", e))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

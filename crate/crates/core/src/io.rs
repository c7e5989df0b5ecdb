//! Plain CSV matrix/vector files and TOML manifests shared by the archives.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Serialize};

use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Parse { path: path.display().to_string(), msg: msg.into() }
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv<T: Real>(path: &Path, m: &DMatrix<T>) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        writeln!(out, "{}", row.join(",")).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_matrix_csv<T: Real>(path: &Path) -> Result<DMatrix<T>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<T>().map_err(|_| parse_err(path, format!("line {}: bad number {s:?}", i + 1))))
            .collect::<Result<Vec<T>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(path, format!("line {} has {} columns, expected {}", i + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub fn write_vector_csv<T: Real>(path: &Path, v: &DVector<T>) -> Result<(), IoError> {
    write_matrix_csv(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_vector_csv<T: Real>(path: &Path) -> Result<DVector<T>, IoError> {
    let m = read_matrix_csv::<T>(path)?;
    if m.ncols() > 1 {
        return Err(parse_err(path, "expected a single column"));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

pub fn write_toml<S: Serialize>(path: &Path, value: &S) -> Result<(), IoError> {
    let text = toml::to_string(value).map_err(|e| parse_err(path, e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_toml<S: DeserializeOwned>(path: &Path) -> Result<S, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

pub fn ensure_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

//! ASCII raster files.
//!
//! Header keys `ncols`, `nrows`, `xllcenter`, `yllcenter`, `cellsize` and
//! `nodata_value`, one per line, followed by whitespace-separated values.
//! On input `xllcorner`/`yllcorner` are accepted in place of the centers.
//! As in the usual ASCII grid convention the first data line is the
//! northernmost row, so rows are written in reverse of the in-memory order.

use std::io::{BufRead, Write};

use super::{Grid, GridError, GridGeometry};
use crate::scalar::Real;

const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, thiserror::Error)]
pub enum AsciiGridError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("expected {expected} values, found {found}")]
    ValueCount { expected: usize, found: usize },
    #[error("could not parse value {0:?}")]
    Value(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn write_ascii_grid<T: Real, W: Write>(grid: &Grid<T>, mut out: W) -> std::io::Result<()> {
    let g = grid.geometry();
    writeln!(out, "ncols {}", g.n_cols)?;
    writeln!(out, "nrows {}", g.n_rows)?;
    writeln!(out, "xllcenter {}", g.origin_x)?;
    writeln!(out, "yllcenter {}", g.origin_y)?;
    writeln!(out, "cellsize {}", g.cell_size)?;
    writeln!(out, "nodata_value {}", DEFAULT_NODATA)?;
    for r in (0..g.n_rows).rev() {
        let line: Vec<String> = (0..g.n_cols)
            .map(|c| match grid.get(r, c) {
                Some(v) => v.to_string(),
                None => DEFAULT_NODATA.to_string(),
            })
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_ascii_grid<T: Real, R: BufRead>(input: R) -> Result<Grid<T>, AsciiGridError> {
    let mut header = [None::<f64>; 8];
    const KEYS: [&str; 8] = ["ncols", "nrows", "xllcenter", "yllcenter", "cellsize", "nodata_value", "xllcorner", "yllcorner"];
    let mut lines = input.lines().enumerate();
    let mut body = Vec::new();
    for (i, line) in lines.by_ref() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let key_lc = key.to_ascii_lowercase();
        match KEYS.iter().position(|k| *k == key_lc) {
            Some(slot) => {
                let v = parts
                    .next()
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| AsciiGridError::Header { line: i + 1, msg: format!("bad value for {key}") })?;
                header[slot] = Some(v);
            }
            None => {
                body.push(line);
                break;
            }
        }
    }
    let half = header[4].map(|c| 0.5 * c);
    for (center, corner) in [(2, 6), (3, 7)] {
        if header[center].is_some() && header[corner].is_some() {
            return Err(AsciiGridError::Header { line: 0, msg: format!("both {} and {} given", KEYS[center], KEYS[corner]) });
        }
        if let (Some(v), Some(h)) = (header[corner], half) {
            header[center] = Some(v + h);
        }
    }
    for (slot, key) in KEYS.iter().enumerate().take(5) {
        if header[slot].is_none() {
            return Err(AsciiGridError::Header { line: 0, msg: format!("missing {key}") });
        }
    }
    let n_cols = header[0].unwrap() as usize;
    let n_rows = header[1].unwrap() as usize;
    let nodata_value = header[5].unwrap_or(DEFAULT_NODATA);
    let geometry = GridGeometry::new(header[2].unwrap(), header[3].unwrap(), header[4].unwrap(), n_rows, n_cols)?;
    for (_, line) in lines {
        body.push(line?);
    }
    let tokens: Vec<&str> = body.iter().flat_map(|l| l.split_whitespace()).collect();
    if tokens.len() != geometry.len() {
        return Err(AsciiGridError::ValueCount { expected: geometry.len(), found: tokens.len() });
    }
    let mut values = vec![T::zero(); geometry.len()];
    let mut nodata = vec![false; geometry.len()];
    for (k, tok) in tokens.iter().enumerate() {
        let file_row = k / n_cols;
        let col = k % n_cols;
        let idx = (n_rows - 1 - file_row) * n_cols + col;
        let raw: f64 = tok.parse().map_err(|_| AsciiGridError::Value(tok.to_string()))?;
        if raw == nodata_value {
            nodata[idx] = true;
        } else {
            values[idx] = tok.parse::<T>().map_err(|_| AsciiGridError::Value(tok.to_string()))?;
        }
    }
    Ok(Grid::with_nodata(geometry, values, nodata)?)
}

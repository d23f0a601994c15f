//! Sample-matrix ingestion.
//!
//! Two formats are accepted. CSV holds one sample per row with no header.
//! The binary format is a one-line JSON header `{"rows":n,"cols":d}`
//! followed by `n·d` little-endian `f64` values in row-major order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct BinaryHeader {
    rows: usize,
    cols: usize,
}

/// Reads a matrix, choosing the format from the first byte.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path.as_ref())?;
    parse_matrix(&bytes)
}

pub fn parse_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => parse_binary(bytes),
        Some(_) => parse_csv(bytes),
        None => Err(Error::Parse("empty matrix input".into())),
    }
}

fn parse_csv(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse(format!("row {} has {} columns, expected {c}", i + 1, record.len())));
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: cannot parse `{field}` as a number", i + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse("no rows in CSV input".into()))?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn parse_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: BinaryHeader =
        serde_json::from_str(line.trim()).map_err(|e| Error::Parse(format!("bad binary header: {e}")))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected = header.rows * header.cols * 8;
    if payload.len() != expected {
        return Err(Error::Parse(format!(
            "binary payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(header.rows, header.cols, &values))
}

pub fn write_binary(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let header = serde_json::to_string(&BinaryHeader {
        rows: m.nrows(),
        cols: m.ncols(),
    })
    .map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(f, "{header}")?;
    for row in m.row_iter() {
        for v in row.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

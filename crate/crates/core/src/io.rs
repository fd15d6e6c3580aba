//! CSV tables with locale-independent, round-trip float formatting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 17 significant digits in scientific notation; always parses back exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_table<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a numeric CSV table whose header must equal `expected_header`.
pub fn read_table(path: &Path, expected_header: &[String]) -> Result<Vec<Vec<f64>>> {
    let name = path.display().to_string();
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(&name, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != expected_header {
        return Err(Error::parse(
            &name,
            format!(
                "line 1: expected header `{}`, found `{}`",
                expected_header.join(","),
                header.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::parse(&name, format!("line {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(Error::parse(
                &name,
                format!("line {line}: expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(&name, format!("line {line}, column `{}`: `{cell}` is not a number", header[col])))?;
            if !v.is_finite() {
                return Err(Error::parse(
                    &name,
                    format!("line {line}, column `{}`: non-finite value", header[col]),
                ));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub(crate) fn indexed_header(first: &str, prefix: &str, count: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((0..count).map(|i| format!("{prefix}_{i}")))
        .collect()
}

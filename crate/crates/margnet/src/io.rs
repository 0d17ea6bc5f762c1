//! CSV tables, JSON documents and atomic file writes.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use margnet_core::domain::{Column, Domain, RawTable};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Read a CSV whose header names every domain attribute. Columns come back
/// in domain order; extra columns are dropped.
pub fn read_csv<R: Read>(reader: R, domain: &Domain) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let positions: Vec<usize> = domain
        .names()
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        })
        .collect::<Result<_>>()?;
    let attrs = domain.attributes();
    let mut columns: Vec<Column> = attrs
        .iter()
        .map(|a| if a.is_numeric() { Column::Numeric(Vec::new()) } else { Column::Text(Vec::new()) })
        .collect();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        for ((col, &pos), attr) in columns.iter_mut().zip(&positions).zip(attrs) {
            let cell = record.get(pos).unwrap_or("").trim();
            match col {
                Column::Numeric(v) => v.push(cell.parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: attr.name.clone(),
                })?),
                Column::Text(v) => v.push(cell.to_string()),
            }
        }
    }
    let names = domain.names().into_iter().map(String::from).collect();
    Ok(RawTable::new(names, columns)?)
}

pub fn load_csv(path: &Path, domain: &Domain) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, domain)
}

pub fn csv_bytes(raw: &RawTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&raw.header)?;
    for row in 0..raw.n_rows() {
        w.write_record(raw.columns.iter().map(|c| c.cell(row)))?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

pub fn write_csv(path: &Path, raw: &RawTable) -> Result<()> {
    write_atomic(path, &csv_bytes(raw)?)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory JSON serialization");
    out.push(b'\n');
    out
}

pub fn load_domain(path: &Path) -> Result<Domain> {
    load_json(path)
}

/// Write to a temporary file beside `path`, then rename over it, so readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// `out.csv` with suffix `trace.json` gives `out.trace.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

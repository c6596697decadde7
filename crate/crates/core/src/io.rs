//! Sample CSV files and atomic output writes.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{FhtwError, Result};
use crate::wavelet::ScaleLabel;

/// Which coordinate system a sample file's columns are in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    /// `x_1 .. x_d`, lattice order
    Lattice,
    /// `c[k,l]` in canonical flattening order
    Wavelet,
}

pub fn header(kind: ColumnKind, d: usize) -> Vec<String> {
    match kind {
        ColumnKind::Lattice => (1..=d).map(|i| format!("x_{i}")).collect(),
        ColumnKind::Wavelet => (0..d).map(|i| ScaleLabel::from_flat(i).to_string()).collect(),
    }
}

fn classify(columns: &[String]) -> Option<ColumnKind> {
    let d = columns.len();
    if columns == header(ColumnKind::Lattice, d).as_slice() {
        Some(ColumnKind::Lattice)
    } else if columns == header(ColumnKind::Wavelet, d).as_slice() {
        Some(ColumnKind::Wavelet)
    } else {
        None
    }
}

/// Writes `bytes` to a sibling temp file then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| FhtwError::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        FhtwError::io(path, e)
    })
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FhtwError::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Renders a headed CSV table; floats use shortest round-trip formatting.
pub fn csv_bytes(columns: &[String], rows: &Array2<f64>) -> Result<Vec<u8>> {
    if columns.len() != rows.ncols() {
        return Err(FhtwError::invalid(format!(
            "{} column names for {} columns",
            columns.len(),
            rows.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::with_capacity(rows.len() * 20));
    let to_err = |e: csv::Error| FhtwError::Internal(e.to_string());
    w.write_record(columns).map_err(to_err)?;
    let mut buf = Vec::with_capacity(rows.ncols());
    for row in rows.rows() {
        buf.clear();
        buf.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&buf).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| FhtwError::Internal(e.to_string()))
}

pub fn write_table(path: &Path, columns: &[String], rows: &Array2<f64>) -> Result<()> {
    write_atomic(path, &csv_bytes(columns, rows)?)
}

pub fn write_samples(path: &Path, kind: ColumnKind, samples: &Array2<f64>) -> Result<()> {
    write_table(path, &header(kind, samples.ncols()), samples)
}

/// Reads a headed numeric CSV table.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let ctx = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => FhtwError::io(path, io),
        other => FhtwError::data(ctx.clone(), format!("{other:?}")),
    })?;
    let columns: Vec<String> = r
        .headers()
        .map_err(|e| FhtwError::data(ctx.clone(), e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let d = columns.len();
    let mut flat = Vec::new();
    let mut n = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| FhtwError::data(ctx.clone(), e.to_string()))?;
        if rec.len() != d {
            return Err(FhtwError::data(
                ctx,
                format!("row {} has {} fields, header has {d}", line + 1, rec.len()),
            ));
        }
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                FhtwError::data(ctx.clone(), format!("row {}: '{field}' is not a number", line + 1))
            })?;
            if !v.is_finite() {
                return Err(FhtwError::data(ctx, format!("row {}: non-finite value", line + 1)));
            }
            flat.push(v);
        }
        n += 1;
    }
    let rows = Array2::from_shape_vec((n, d), flat).map_err(|e| FhtwError::Internal(e.to_string()))?;
    Ok((columns, rows))
}

/// Reads a sample file whose header names lattice or wavelet columns.
pub fn read_samples(path: &Path) -> Result<(ColumnKind, Array2<f64>)> {
    let (columns, rows) = read_table(path)?;
    let kind = classify(&columns).ok_or_else(|| {
        FhtwError::data(
            path.display().to_string(),
            "header must be x_1..x_d or c[k,l] labels in canonical order",
        )
    })?;
    if rows.nrows() == 0 {
        return Err(FhtwError::data(path.display().to_string(), "no sample rows"));
    }
    Ok((kind, rows))
}

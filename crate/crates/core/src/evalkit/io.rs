//! CSV persistence: header `x0,...,x{d-1}`, one row per point. Values are
//! written in Rust's shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::path::Path;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e.to_string()),
        other => Error::Parse {
            line,
            column: 0,
            msg: format!("{other:?}"),
        },
    }
}

fn write_rows(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn batch_to_csv(batch: &SampleBatch) -> Result<Vec<u8>> {
    let header = (0..batch.dim()).map(|j| format!("x{j}")).collect();
    write_rows(header, batch.rows().map(|r| r.iter().map(|v| format!("{v:?}")).collect()))
}

pub fn save_batch(batch: &SampleBatch, path: &Path) -> Result<()> {
    write_atomic(path, &batch_to_csv(batch)?)
}

pub fn batch_from_csv(bytes: &[u8]) -> Result<SampleBatch> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(bytes);
    let header = r.headers().map_err(csv_err)?.clone();
    for (j, h) in header.iter().enumerate() {
        if h.trim() != format!("x{j}") {
            return Err(Error::Parse {
                line: 1,
                column: j + 1,
                msg: format!("expected header `x{j}`, found {h:?}"),
            });
        }
    }
    let dim = header.len();
    let mut values = Vec::new();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim {
            return Err(Error::Parse {
                line,
                column: rec.len().min(dim) + 1,
                msg: format!("expected {dim} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                column: j + 1,
                msg: format!("row {}, column x{j}: not a number: {cell:?}", n + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: j + 1,
                    msg: format!("row {}, column x{j}: non-finite value", n + 1),
                });
            }
            values.push(v);
        }
        n += 1;
    }
    SampleBatch::new(n, dim, values)
}

pub fn load_batch(path: &Path) -> Result<SampleBatch> {
    batch_from_csv(&std::fs::read(path)?)
}

/// Trajectory states as CSV with a leading `t` column; rows of each state
/// are written in order, states in sampling order.
pub fn save_trajectory(states: &[(usize, SampleBatch)], path: &Path) -> Result<()> {
    let dim = states.first().map_or(0, |s| s.1.dim());
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|j| format!("x{j}")));
    let rows = states.iter().flat_map(|(t, b)| {
        b.rows().map(move |r| {
            let mut v = vec![t.to_string()];
            v.extend(r.iter().map(|x| format!("{x:?}")));
            v
        })
    });
    write_atomic(path, &write_rows(header, rows)?)
}

//! Dataset CSV: header `x1,...,xd[,y][,w]`, one point per row.
//!
//! A `y` column is appended as the last coordinate of each point so regression
//! data travels as a single (d+1)-dimensional distribution. A missing `w`
//! column means uniform weights.

use crate::empirical::EmpiricalDist;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dist: EmpiricalDist,
    /// Whether the last coordinate is a response `y`.
    pub has_response: bool,
}

impl Dataset {
    pub fn covariate_dim(&self) -> usize {
        self.dist.dim() - usize::from(self.has_response)
    }
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut x_cols = Vec::new();
    let mut y_col = None;
    let mut w_col = None;
    for (i, h) in headers.iter().enumerate() {
        let h = h.to_ascii_lowercase();
        match h.as_str() {
            "y" => y_col = Some(i),
            "w" => w_col = Some(i),
            _ => {
                let k: usize = h
                    .strip_prefix('x')
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unexpected column {h:?}")))?;
                x_cols.push((k, i));
            }
        }
    }
    if x_cols.is_empty() {
        return Err(Error::InvalidArgument("no x columns".into()));
    }
    x_cols.sort();
    for (expected, (k, _)) in x_cols.iter().enumerate() {
        if *k != expected + 1 {
            return Err(Error::InvalidArgument("x columns must be x1..xd".into()));
        }
    }
    let d = x_cols.len() + usize::from(y_col.is_some());
    let mut flat = Vec::new();
    let mut weights = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            let s = rec
                .get(i)
                .ok_or_else(|| Error::InvalidArgument("short row".into()))?;
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {s:?}")))
        };
        for &(_, i) in &x_cols {
            flat.push(field(i)?);
        }
        if let Some(i) = y_col {
            flat.push(field(i)?);
        }
        weights.push(match w_col {
            Some(i) => field(i)?,
            None => 1.0,
        });
    }
    Ok(Dataset {
        dist: EmpiricalDist::from_flat(d, flat, weights)?,
        has_response: y_col.is_some(),
    })
}

pub fn read_dataset_path(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

/// Writes the dataset with a `w` column; round-trips through [`read_dataset`].
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let dx = data.covariate_dim();
    let mut header: Vec<String> = (1..=dx).map(|k| format!("x{k}")).collect();
    if data.has_response {
        header.push("y".into());
    }
    header.push("w".into());
    wtr.write_record(&header)?;
    for (row, w) in data.dist.rows().zip(data.dist.weights()) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{w:?}"));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset_path(path: &Path, data: &Dataset) -> Result<()> {
    write_dataset(std::fs::File::create(path)?, data)
}

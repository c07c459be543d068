use std::io::{Read, Write};
use std::path::Path;

use crate::error::{MixError, Result};

/// An `n x d` table of finite observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    d: usize,
}

impl Dataset {
    pub fn new(values: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(MixError::EmptyData);
        }
        if d == 0 {
            return Err(MixError::Invariant("dataset dimension must be positive".into()));
        }
        if values.len() != n * d {
            return Err(MixError::Dimension {
                expected: n * d,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(MixError::Invariant(format!(
                "non-finite entry at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Dataset { values, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or(MixError::EmptyData)?;
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(MixError::Dimension {
                    expected: d,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Dataset::new(values, rows.len(), d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(MixError::Invariant(format!(
                    "row index {i} out of range for {} rows",
                    self.n
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Dataset::new(values, indices.len(), self.d)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for row in self.rows() {
            for (acc, x) in m.iter_mut().zip(row) {
                *acc += x;
            }
        }
        let n = self.n as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Maximum-likelihood covariance (divisor `n`), row-major `d x d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.d;
        let mean = self.mean();
        let mut cov = vec![0.0; d * d];
        for row in self.rows() {
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in 0..=a {
                    cov[a * d + b] += da * (row[b] - mean[b]);
                }
            }
        }
        let n = self.n as f64;
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / n;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        cov
    }

    /// Parses CSV text. A first record containing no numeric field is taken as
    /// a header; any other non-numeric cell is an error.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut values = Vec::new();
        let mut d = None;
        let mut n = 0;
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(idx + 1);
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: Vec<std::result::Result<f64, _>> =
                record.iter().map(str::parse::<f64>).collect();
            if idx == 0 && parsed.iter().all(|p| p.is_err()) {
                continue;
            }
            let width = *d.get_or_insert(record.len());
            if record.len() != width {
                return Err(MixError::Parse {
                    row: line,
                    column: record.len().min(width) + 1,
                    message: format!("expected {width} fields, found {}", record.len()),
                });
            }
            for (col, (field, value)) in record.iter().zip(parsed).enumerate() {
                match value {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        return Err(MixError::Parse {
                            row: line,
                            column: col + 1,
                            message: format!("not a finite number: {field:?}"),
                        })
                    }
                }
            }
            n += 1;
        }
        match d {
            Some(d) if n > 0 => Dataset::new(values, n, d),
            _ => Err(MixError::EmptyData),
        }
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| MixError::io(path, e))?;
        Dataset::from_csv_reader(std::io::BufReader::new(file))
    }

    /// Writes one row per observation with columns `x1..xd` as header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record((1..=self.d).map(|j| format!("x{j}")))?;
        for row in self.rows() {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush().map_err(|e| MixError::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| MixError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

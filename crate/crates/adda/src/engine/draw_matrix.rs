//! Row-per-iteration storage of recorded functionals, with CSV round-trip.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major matrix of recorded draws: one row per iteration, one
/// named column per scalar component.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawMatrix {
    names: Vec<String>,
    data: Vec<f64>,
}

impl DrawMatrix {
    pub fn new(names: Vec<String>) -> Self {
        assert!(!names.is_empty(), "draw matrix needs at least one column");
        DrawMatrix {
            names,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(names: Vec<String>, rows: usize) -> Self {
        let ncols = names.len();
        let mut m = DrawMatrix::new(names);
        m.data.reserve(rows * ncols);
        m
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(
            row.len(),
            self.names.len(),
            "row length does not match column count"
        );
        self.data.extend_from_slice(row);
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn nrows(&self) -> usize {
        self.data.len() / self.names.len()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.ncols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.ncols();
        &self.data[row * c..(row + 1) * c]
    }

    /// Copy of column `col`, optionally truncated to the first `take` rows.
    pub fn column_prefix(&self, col: usize, take: usize) -> Vec<f64> {
        let rows = take.min(self.nrows());
        (0..rows).map(|r| self.value(r, col)).collect()
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.column_prefix(col, self.nrows())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// True when both matrices agree bit for bit, NaNs included.
    pub fn bits_eq(&self, other: &DrawMatrix) -> bool {
        self.names == other.names
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Header row of component names, then one row of values per iteration.
    /// Values print in shortest round-trip form, so equal runs produce
    /// byte-identical files.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        let mut record = csv::StringRecord::new();
        for r in 0..self.nrows() {
            record.clear();
            for v in self.row(r) {
                record.push_field(format!("{v}").as_str());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<DrawMatrix> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let names: Vec<String> = reader
            .headers()?
            .iter()
            .map(|s| s.to_string())
            .collect();
        if names.is_empty() {
            return Err(Error::MalformedInput {
                path: "<draws>".into(),
                detail: "empty header".into(),
            });
        }
        let mut m = DrawMatrix::new(names);
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != m.ncols() {
                return Err(Error::MalformedInput {
                    path: "<draws>".into(),
                    detail: format!(
                        "row {} has {} fields, expected {}",
                        i + 1,
                        record.len(),
                        m.ncols()
                    ),
                });
            }
            let row: Vec<f64> = record
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::MalformedInput {
                        path: "<draws>".into(),
                        detail: format!("row {}: non-numeric field {f:?}", i + 1),
                    })
                })
                .collect::<Result<_>>()?;
            m.push_row(&row);
        }
        Ok(m)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<DrawMatrix> {
        let path_str = path.as_ref().display().to_string();
        Self::read_csv(std::fs::File::open(&path)?).map_err(|e| match e {
            Error::MalformedInput { detail, .. } => Error::MalformedInput {
                path: path_str,
                detail,
            },
            other => other,
        })
    }
}

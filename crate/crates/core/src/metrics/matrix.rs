use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    symmetric: bool,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, symmetric: bool) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension { what: "distance matrix values", expected: rows * cols, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("distance matrix contains non-finite values".into()));
        }
        if symmetric && rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        Ok(Self { rows, cols, values, symmetric })
    }

    pub fn zeros(n: usize, symmetric: bool) -> Self {
        Self { rows: n, cols: n, values: vec![0.0; n * n], symmetric }
    }

    pub fn from_fn(n: usize, symmetric: bool, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self { rows: n, cols: n, values, symmetric }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Side length of a square matrix.
    pub fn n(&self) -> usize {
        self.rows
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric_mode(&self) -> bool {
        self.symmetric
    }

    pub fn set_symmetric_mode(&mut self, symmetric: bool) {
        self.symmetric = symmetric;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                values[j * self.rows + i] = self.get(i, j);
            }
        }
        Self { rows: self.cols, cols: self.rows, values, symmetric: self.symmetric }
    }

    /// `max |M_ij − M_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows.min(self.cols) {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Writes the full matrix, one row per line, 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for i in 0..self.rows {
            out.write_record(self.row(i).iter().map(|v| format!("{v:.16e}")))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, symmetric: bool) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut values = Vec::new();
        let mut rows = 0;
        let mut cols = None;
        for rec in rd.records() {
            let rec = rec?;
            if *cols.get_or_insert(rec.len()) != rec.len() {
                return Err(Error::Format(format!("row {rows} has {} columns", rec.len())));
            }
            for field in rec.iter() {
                values.push(field.trim().parse::<f64>().map_err(|e| Error::Format(format!("'{field}': {e}")))?);
            }
            rows += 1;
        }
        Self::new(rows, cols.unwrap_or(0), values, symmetric)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_csv(path: &Path, symmetric: bool) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?), symmetric)
    }
}

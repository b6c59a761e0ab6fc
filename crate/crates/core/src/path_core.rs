//! Step paths on the uniform grid of `[0, 1]`.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// A `d`-dimensional path that is constant on `[m/n, (m+1)/n)`.
///
/// `values` holds `n + 1` rows of `d` entries, row `m` being the value at `m/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    d: usize,
    n: usize,
    values: Vec<f64>,
}

impl StepPath {
    pub fn new(d: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::InvalidParameter("d and n must be positive".into()));
        }
        if values.len() != d * (n + 1) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for d={d}, n={n}, got {}",
                d * (n + 1),
                values.len()
            )));
        }
        Ok(Self { d, n, values })
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        Self { d, n, values: vec![0.0; d * (n + 1)] }
    }

    /// Builds a path from per-component columns, each of length `n + 1`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let d = columns.len();
        if d == 0 {
            return Err(Error::InvalidParameter("no columns".into()));
        }
        let len = columns[0].len();
        if len < 2 || columns.iter().any(|c| c.len() != len) {
            return Err(Error::DimensionMismatch("columns differ in length".into()));
        }
        let n = len - 1;
        let mut values = vec![0.0; d * len];
        for (i, col) in columns.iter().enumerate() {
            for (m, v) in col.iter().enumerate() {
                values[m * d + i] = *v;
            }
        }
        Ok(Self { d, n, values })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn grid(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.d..(m + 1) * self.d]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.values[m * self.d..(m + 1) * self.d]
    }

    pub fn get(&self, m: usize, i: usize) -> f64 {
        self.values[m * self.d + i]
    }

    pub fn set(&mut self, m: usize, i: usize, v: f64) {
        self.values[m * self.d + i] = v;
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..=self.n).map(|m| self.get(m, i)).collect()
    }

    /// Grid index of time `t`, i.e. `floor(n t)`.
    pub fn grid_index(n: usize, t: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!("time {t} outside [0, 1]")));
        }
        // absorb rounding in t = m/n
        let x = t * n as f64;
        let m = (x + 1e-12 * (n as f64).max(1.0)).floor() as usize;
        Ok(m.min(n))
    }

    pub fn eval(&self, t: f64) -> Result<&[f64]> {
        Ok(self.row(Self::grid_index(self.n, t)?))
    }

    /// Maximum over grid rows of the Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks(self.d)
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.d != other.d || self.n != other.n {
            return Err(Error::DimensionMismatch(format!(
                "paths ({}, {}) and ({}, {})",
                self.d, self.n, other.d, other.n
            )));
        }
        Ok(())
    }

    /// Pointwise `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        self.check_same(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(Self { d: self.d, n: self.n, values })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { d: self.d, n: self.n, values: self.values.iter().map(|v| c * v).collect() }
    }

    /// Row-wise `w(t) A` for a `d x k` matrix `A`.
    pub fn mul_right(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "path dimension {} vs matrix with {} rows",
                self.d,
                a.nrows()
            )));
        }
        let k = a.ncols();
        let mut values = Vec::with_capacity(k * (self.n + 1));
        for r in self.values.chunks(self.d) {
            for j in 0..k {
                values.push((0..self.d).map(|i| r[i] * a[(i, j)]).sum());
            }
        }
        Ok(Self { d: k, n: self.n, values })
    }

    /// Writes `t, v1, ..., vd` with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.d).map(|i| format!("v{i}")));
        wr.write_record(&header).map_err(csv_err)?;
        for m in 0..=self.n {
            let mut rec = vec![format!("{}", m as f64 / self.n as f64)];
            rec.extend(self.row(m).iter().map(|v| format!("{v:?}")));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let d = rd.headers().map_err(csv_err)?.len().saturating_sub(1);
        let mut values = Vec::new();
        let mut rows = 0usize;
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != d + 1 {
                return Err(Error::Parse(format!("row {} has {} fields", rows + 1, rec.len())));
            }
            for f in rec.iter().skip(1) {
                values.push(f.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
            }
            rows += 1;
        }
        if rows < 2 {
            return Err(Error::Parse("need at least two rows".into()));
        }
        Self::new(d, rows - 1, values)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

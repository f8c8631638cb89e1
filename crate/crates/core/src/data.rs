//! The censored regression sample.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Right-censored log-time responses with regressors and a thresholding variable.
///
/// `y` holds `min(t, c)` on the log scale, `delta` is 1 when the event was
/// observed, `x` is the `n × p` design (an intercept, if any, is an explicit
/// column of ones) and `z` is the variable whose thresholds split the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    y: Vec<f64>,
    delta: Vec<bool>,
    x: DMatrix<f64>,
    z: Vec<f64>,
}

impl SurvivalDataset {
    pub fn new(y: Vec<f64>, delta: Vec<bool>, x: DMatrix<f64>, z: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no observations".into()));
        }
        if delta.len() != n || z.len() != n || x.nrows() != n {
            return Err(Error::InvalidDataset(format!(
                "length mismatch: y={}, delta={}, z={}, x rows={}",
                n,
                delta.len(),
                z.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidDataset("design has no columns".into()));
        }
        if !delta.iter().any(|&d| d) {
            return Err(Error::InvalidDataset("every observation is censored".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("y[{i}] is not finite")));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("z[{i}] is not finite")));
        }
        for c in 0..x.ncols() {
            if let Some(i) = x.column(c).iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("x[{i}, {c}] is not finite")));
            }
        }
        Ok(Self { y, delta, x, z })
    }

    /// Builds a dataset from 0/1 event codes.
    pub fn from_indicators(y: Vec<f64>, delta: &[u8], x: DMatrix<f64>, z: Vec<f64>) -> Result<Self> {
        let mut flags = Vec::with_capacity(delta.len());
        for (i, &d) in delta.iter().enumerate() {
            match d {
                0 => flags.push(false),
                1 => flags.push(true),
                other => {
                    return Err(Error::InvalidDataset(format!(
                        "delta[{i}] = {other}, expected 0 or 1"
                    )))
                }
            }
        }
        Self::new(y, flags, x, z)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of observed events.
    pub fn n_events(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn censoring_rate(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.n() as f64
    }

    /// Rows `idx` (repeats allowed) as a new dataset.
    pub fn resample(&self, idx: &[usize]) -> Result<Self> {
        let p = self.p();
        let mut x = DMatrix::zeros(idx.len(), p);
        for (r, &i) in idx.iter().enumerate() {
            if i >= self.n() {
                return Err(Error::InvalidSubset(format!("index {i} out of range")));
            }
            for c in 0..p {
                x[(r, c)] = self.x[(i, c)];
            }
        }
        Self::new(
            idx.iter().map(|&i| self.y[i]).collect(),
            idx.iter().map(|&i| self.delta[i]).collect(),
            x,
            idx.iter().map(|&i| self.z[i]).collect(),
        )
    }

    /// Indices with `lower < z <= upper`.
    pub fn indices_in(&self, lower: f64, upper: f64) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.z[i] > lower && self.z[i] <= upper)
            .collect()
    }

    /// Partition of the sample by ascending thresholds: `(-inf, a1], (a1, a2], ..., (as, inf)`.
    pub fn split_by_thresholds(&self, thresholds: &[f64]) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); thresholds.len() + 1];
        for i in 0..self.n() {
            let g = thresholds.partition_point(|&a| a < self.z[i]);
            groups[g].push(i);
        }
        groups
    }
}

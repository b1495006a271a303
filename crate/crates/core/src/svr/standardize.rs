use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::CompensatedSum;

/// Per-column affine map to zero mean and unit population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns store `1`.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (row[k] - self.mean[k]) / self.std[k];
        }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            self.transform_row(x.row(i), out.row_mut(i));
        }
        Ok(out)
    }
}

pub fn standardize_fit(x: &Matrix) -> Result<Standardizer> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::InvalidArgument("cannot standardize an empty matrix".into()));
    }
    let n = x.rows() as f64;
    let d = x.cols();
    let mut mean = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for k in 0..d {
        let m = (0..x.rows()).map(|i| x.get(i, k)).collect::<CompensatedSum>().value() / n;
        let v = (0..x.rows())
            .map(|i| {
                let c = x.get(i, k) - m;
                c * c
            })
            .collect::<CompensatedSum>()
            .value()
            / n;
        let s = v.sqrt();
        mean.push(m);
        std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
    }
    Ok(Standardizer { mean, std })
}

//! Epsilon-insensitive support vector regression.
//!
//! The dual is solved by sequential minimal optimization over the `2n`
//! variables `(alpha, alpha*)`; the model keeps only the combined
//! coefficients `alpha_i - alpha*_i` of the support vectors.

mod grid;
mod io;
mod kernel;
mod smo;
mod standardize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use grid::{grid_search, subsample_rows, GridCell, GridResult, GridSpec, Objective};
pub use io::{read_model, write_model, MODEL_FORMAT_VERSION};
pub use kernel::Kernel;
pub use smo::{train_svr, SmoOptions, Termination, TrainingInfo};
pub use standardize::{standardize_fit, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrHyperParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
}

impl SvrHyperParams {
    pub fn new(c: f64, epsilon: f64, kernel: Kernel) -> Result<Self> {
        let h = SvrHyperParams { c, epsilon, kernel };
        h.validate()?;
        Ok(h)
    }

    pub fn linear(c: f64, epsilon: f64) -> Result<Self> {
        Self::new(c, epsilon, Kernel::Linear)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidArgument(format!("C must be positive, got {}", self.c)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        self.kernel.validate()
    }
}

impl fmt::Display for SvrHyperParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C={} epsilon={} kernel={}", self.c, self.epsilon, self.kernel)
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// `linear` or `rbf:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("linear") {
            return Ok(Kernel::Linear);
        }
        if let Some(g) = s.strip_prefix("rbf:").or_else(|| s.strip_prefix("rbf=")) {
            let gamma: f64 = g
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad rbf gamma {g:?}")))?;
            let k = Kernel::Rbf { gamma };
            k.validate()?;
            return Ok(k);
        }
        Err(Error::InvalidArgument(format!(
            "unknown kernel {s:?} (expected linear or rbf:<gamma>)"
        )))
    }
}

/// A trained epsilon-SVR.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    /// Standardized training rows with non-zero coefficient.
    pub support_vectors: Matrix,
    /// `alpha_i - alpha*_i` per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub hyper: SvrHyperParams,
    pub standardizer: Standardizer,
    pub info: TrainingInfo,
}

impl SvrModel {
    pub fn n_support(&self) -> usize {
        self.dual_coefs.len()
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    /// Decision value for an already standardized row.
    fn decision_standardized(&self, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (sv, &coef) in self.support_vectors.iter_rows().zip(&self.dual_coefs) {
            acc += coef * self.hyper.kernel.eval(sv, z);
        }
        acc + self.bias
    }

    /// Primal weights in standardized space; only defined for the linear kernel.
    fn linear_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim()];
        for (sv, &coef) in self.support_vectors.iter_rows().zip(&self.dual_coefs) {
            for (wk, &s) in w.iter_mut().zip(sv) {
                *wk += coef * s;
            }
        }
        w
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.cols(),
            });
        }
        let mut z = vec![0.0; self.dim()];
        let mut out = Vec::with_capacity(x.rows());
        match self.hyper.kernel {
            Kernel::Linear => {
                let w = self.linear_weights();
                for row in x.iter_rows() {
                    self.standardizer.transform_row(row, &mut z);
                    out.push(kernel::dot(&w, &z) + self.bias);
                }
            }
            Kernel::Rbf { .. } => {
                for row in x.iter_rows() {
                    self.standardizer.transform_row(row, &mut z);
                    out.push(self.decision_standardized(&z));
                }
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`SvrModel::predict`].
pub fn predict(model: &SvrModel, x: &Matrix) -> Result<Vec<f64>> {
    model.predict(x)
}

//! Early (feature-level) and late (prediction-level) fusion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::timeseries::{FeatureStream, FrameMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionScheme {
    /// One modality, no fusion.
    None,
    Early,
    Late,
}

impl FusionScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionScheme::None => "none",
            FusionScheme::Early => "early",
            FusionScheme::Late => "late",
        }
    }
}

impl fmt::Display for FusionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "unimodal" => Ok(FusionScheme::None),
            "early" => Ok(FusionScheme::Early),
            "late" => Ok(FusionScheme::Late),
            other => Err(Error::InvalidArgument(format!("unknown fusion scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub scheme: FusionScheme,
    pub modalities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_weights: Option<Vec<f64>>,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        match self.scheme {
            FusionScheme::None if self.modalities.len() != 1 => {
                return Err(Error::InvalidArgument(format!(
                    "unimodal run needs exactly one modality, got {}",
                    self.modalities.len()
                )))
            }
            FusionScheme::Early | FusionScheme::Late if self.modalities.len() < 2 => {
                return Err(Error::InvalidArgument(format!(
                    "{} fusion needs at least two modalities",
                    self.scheme
                )))
            }
            _ => {}
        }
        if let Some(w) = &self.late_weights {
            check_weights(w, self.modalities.len())?;
        }
        Ok(())
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: n,
        });
    }
    if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(Error::InvalidArgument("late weights must be non-negative".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("late weights sum to {s}, not 1")));
    }
    Ok(())
}

/// Per-frame concatenation of the streams, in the given order. A fused frame
/// is valid only when it is valid in every input.
pub fn early_fuse(streams: &[&FeatureStream]) -> Result<FeatureStream> {
    let Some(first) = streams.first() else {
        return Err(Error::InvalidArgument("no streams to fuse".into()));
    };
    let len = first.len();
    for s in &streams[1..] {
        if s.len() != len {
            return Err(Error::LengthMismatch {
                left: s.len(),
                right: len,
            });
        }
        if s.frame_period_s != first.frame_period_s {
            return Err(Error::InvalidArgument(format!(
                "frame period mismatch: {} vs {}",
                s.frame_period_s, first.frame_period_s
            )));
        }
    }
    let dim: usize = streams.iter().map(|s| s.dim()).sum();
    let mut frames = Matrix::zeros(len, dim);
    let mut valid = vec![true; len];
    for t in 0..len {
        let row = frames.row_mut(t);
        let mut off = 0;
        for s in streams {
            row[off..off + s.dim()].copy_from_slice(s.frames.row(t));
            off += s.dim();
            valid[t] &= s.mask.valid[t];
        }
    }
    let modality = streams
        .iter()
        .map(|s| s.modality.as_str())
        .collect::<Vec<_>>()
        .join("+");
    FeatureStream::new(modality, frames, FrameMask { valid }, first.frame_period_s)
}

/// Per-frame weighted mean of the predictions; uniform weights when `None`.
pub fn late_fuse(predictions: &[&[f64]], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let Some(first) = predictions.first() else {
        return Err(Error::InvalidArgument("no predictions to fuse".into()));
    };
    let len = first.len();
    if let Some(p) = predictions.iter().find(|p| p.len() != len) {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: len,
        });
    }
    let k = predictions.len();
    let uniform;
    let w = match weights {
        Some(w) => {
            check_weights(w, k)?;
            w
        }
        None => {
            uniform = vec![1.0 / k as f64; k];
            &uniform[..]
        }
    };
    let out = (0..len)
        .map(|t| {
            if weights.is_none() {
                predictions.iter().map(|p| p[t]).sum::<f64>() / k as f64
            } else {
                predictions.iter().zip(w).map(|(p, wi)| wi * p[t]).sum()
            }
        })
        .collect();
    Ok(out)
}

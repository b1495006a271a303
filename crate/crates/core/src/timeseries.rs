//! Frame-indexed affect traces and feature streams.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics;

/// Frame period of a 25 fps annotation timeline.
pub const DEFAULT_FRAME_PERIOD_S: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffectDimension {
    Arousal,
    Valence,
}

impl AffectDimension {
    pub const ALL: [AffectDimension; 2] = [AffectDimension::Arousal, AffectDimension::Valence];

    pub fn as_str(self) -> &'static str {
        match self {
            AffectDimension::Arousal => "arousal",
            AffectDimension::Valence => "valence",
        }
    }
}

impl fmt::Display for AffectDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AffectDimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arousal" => Ok(AffectDimension::Arousal),
            "valence" => Ok(AffectDimension::Valence),
            other => Err(Error::InvalidArgument(format!(
                "unknown dimension {other:?} (expected arousal or valence)"
            ))),
        }
    }
}

fn check_period(frame_period_s: f64) -> Result<()> {
    if !(frame_period_s.is_finite() && frame_period_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "frame period must be positive, got {frame_period_s}"
        )));
    }
    Ok(())
}

/// One scalar value per frame for a single affect dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct AffectTrace {
    pub dimension: AffectDimension,
    pub frame_period_s: f64,
    pub values: Vec<f64>,
    pub subject_id: String,
}

impl AffectTrace {
    /// A trace that may hold arbitrary finite values (predictions).
    pub fn new(
        dimension: AffectDimension,
        frame_period_s: f64,
        values: Vec<f64>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        check_period(frame_period_s)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affect trace"));
        }
        Ok(AffectTrace {
            dimension,
            frame_period_s,
            values,
            subject_id: subject_id.into(),
        })
    }

    /// A gold-standard trace: values must lie in `[-1, 1]`.
    pub fn gold(
        dimension: AffectDimension,
        frame_period_s: f64,
        values: Vec<f64>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "gold value {} at frame {i} outside [-1, 1]",
                values[i]
            )));
        }
        Self::new(dimension, frame_period_s, values, subject_id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 * self.frame_period_s
    }
}

/// Per-frame validity; `false` marks frames discarded before training.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameMask {
    pub valid: Vec<bool>,
}

impl FrameMask {
    pub fn all_valid(len: usize) -> Self {
        FrameMask {
            valid: vec![true; len],
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        self.valid
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
            .collect()
    }

    pub fn truncated(&self, len: usize) -> FrameMask {
        FrameMask {
            valid: self.valid[..len.min(self.valid.len())].to_vec(),
        }
    }
}

/// Per-frame feature vectors of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub modality: String,
    pub frames: Matrix,
    pub mask: FrameMask,
    pub frame_period_s: f64,
}

impl FeatureStream {
    pub fn new(
        modality: impl Into<String>,
        frames: Matrix,
        mask: FrameMask,
        frame_period_s: f64,
    ) -> Result<Self> {
        check_period(frame_period_s)?;
        if frames.cols() == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if mask.len() != frames.rows() {
            return Err(Error::LengthMismatch {
                left: mask.len(),
                right: frames.rows(),
            });
        }
        for (i, row) in frames.iter_rows().enumerate() {
            if mask.valid[i] && row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite feature on valid frame {i}"
                )));
            }
        }
        Ok(FeatureStream {
            modality: modality.into(),
            frames,
            mask,
            frame_period_s,
        })
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    /// First `len` frames.
    pub fn truncated(&self, len: usize) -> FeatureStream {
        let len = len.min(self.len());
        let idx: Vec<usize> = (0..len).collect();
        FeatureStream {
            modality: self.modality.clone(),
            frames: self.frames.select_rows(&idx),
            mask: self.mask.truncated(len),
            frame_period_s: self.frame_period_s,
        }
    }

    /// Feature rows of the valid frames, in frame order.
    pub fn valid_rows(&self) -> Matrix {
        self.frames.select_rows(&self.mask.valid_indices())
    }
}

/// Everything recorded for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub streams: BTreeMap<String, FeatureStream>,
    pub gold: BTreeMap<AffectDimension, AffectTrace>,
}

impl SubjectRecord {
    pub fn stream(&self, modality: &str) -> Result<&FeatureStream> {
        self.streams.get(modality).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "subject {} has no modality {modality:?}",
                self.subject_id
            ))
        })
    }

    pub fn gold(&self, dim: AffectDimension) -> Result<&AffectTrace> {
        self.gold.get(&dim).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "subject {} has no {dim} annotation",
                self.subject_id
            ))
        })
    }

    /// Checks that all streams and traces share frame period and length.
    pub fn check_aligned(&self) -> Result<()> {
        let mut shape: Option<(usize, f64)> = None;
        let items = self
            .streams
            .values()
            .map(|s| (s.len(), s.frame_period_s))
            .chain(self.gold.values().map(|g| (g.len(), g.frame_period_s)));
        for (len, period) in items {
            match shape {
                None => shape = Some((len, period)),
                Some((l, p)) if l != len || p != period => {
                    return Err(Error::InvalidArgument(format!(
                        "subject {}: misaligned streams ({l} frames @ {p}s vs {len} @ {period}s)",
                        self.subject_id
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SubjectRecord>,
    pub dev: Vec<SubjectRecord>,
}

impl DatasetSplit {
    pub fn new(train: Vec<SubjectRecord>, dev: Vec<SubjectRecord>) -> Result<Self> {
        let ids: BTreeSet<&str> = train.iter().map(|s| s.subject_id.as_str()).collect();
        if let Some(s) = dev.iter().find(|s| ids.contains(s.subject_id.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "subject {} appears in both train and dev",
                s.subject_id
            )));
        }
        for s in train.iter().chain(&dev) {
            s.check_aligned()?;
        }
        Ok(DatasetSplit { train, dev })
    }
}

/// Advances the gold trace by `delay_frames`: output frame `t` holds input
/// frame `t + delay_frames`, and the trailing `delay_frames` frames are dropped.
pub fn shift_gold(gold: &AffectTrace, delay_frames: usize) -> Result<AffectTrace> {
    let values = shift_values(&gold.values, delay_frames)?;
    Ok(AffectTrace {
        values,
        ..gold.clone()
    })
}

pub(crate) fn shift_values(values: &[f64], delay_frames: usize) -> Result<Vec<f64>> {
    if delay_frames >= values.len() {
        return Err(Error::DelayExceedsTrace {
            delay: delay_frames,
            len: values.len(),
        });
    }
    Ok(values[delay_frames..].to_vec())
}

/// Rows of the valid frames and their targets.
pub fn apply_mask_for_training(
    stream: &FeatureStream,
    gold: &AffectTrace,
) -> Result<(Matrix, Vec<f64>)> {
    if stream.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: stream.len(),
            right: gold.len(),
        });
    }
    let idx = stream.mask.valid_indices();
    if idx.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let y = idx.iter().map(|&i| gold.values[i]).collect();
    Ok((stream.frames.select_rows(&idx), y))
}

/// Expands per-valid-frame predictions to every frame. Invalid frames repeat
/// the most recent valid prediction; leading invalid frames take `fill_start`.
pub fn impute_predictions(pred: &[f64], mask: &FrameMask, fill_start: f64) -> Result<Vec<f64>> {
    let valid = mask.valid_count();
    if pred.len() != valid {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: valid,
        });
    }
    let mut out = Vec::with_capacity(mask.len());
    let mut it = pred.iter();
    let mut last = fill_start;
    for &v in &mask.valid {
        if v {
            // count checked above
            last = *it.next().unwrap();
        }
        out.push(last);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayScan {
    pub best_delay: usize,
    /// `(delay, ccc)` in candidate order.
    pub ccc_per_delay: Vec<(usize, f64)>,
}

/// Scores each candidate delay by the CCC between the shifted gold and the
/// matching prefix of `pred`. Ties go to the smallest delay.
pub fn scan_delay(gold: &AffectTrace, pred: &[f64], candidate_delays: &[usize]) -> Result<DelayScan> {
    if candidate_delays.is_empty() {
        return Err(Error::InvalidArgument("empty candidate delay list".into()));
    }
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    let mut table = Vec::with_capacity(candidate_delays.len());
    for &d in candidate_delays {
        let shifted = shift_values(&gold.values, d)?;
        let r = metrics::ccc(&pred[..shifted.len()], &shifted)?;
        table.push((d, r.ccc));
    }
    let (best_delay, _) = table
        .iter()
        .copied()
        .fold(None::<(usize, f64)>, |best, (d, c)| match best {
            Some((bd, bc)) if bc > c || (bc == c && bd <= d) => Some((bd, bc)),
            _ => Some((d, c)),
        })
        .unwrap();
    Ok(DelayScan {
        best_delay,
        ccc_per_delay: table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(values: &[f64]) -> AffectTrace {
        AffectTrace::new(AffectDimension::Arousal, DEFAULT_FRAME_PERIOD_S, values.to_vec(), "s")
            .unwrap()
    }

    #[test]
    fn shift_identity_and_advance() {
        let g = trace(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(shift_gold(&g, 0).unwrap().values, g.values);
        assert_eq!(shift_gold(&g, 2).unwrap().values, vec![3.0, 4.0, 5.0]);
        assert!(matches!(
            shift_gold(&g, 5),
            Err(Error::DelayExceedsTrace { delay: 5, len: 5 })
        ));
    }

    #[test]
    fn arousal_delay_in_seconds() {
        let secs = 70.0 * DEFAULT_FRAME_PERIOD_S;
        assert!((secs - 2.8).abs() < 1e-12);
        assert!((50.0 * DEFAULT_FRAME_PERIOD_S - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mask_selects_rows_in_order() {
        let frames = Matrix::from_rows(&[[1.0, 1.5], [2.0, 2.5], [3.0, 3.5]]).unwrap();
        let mask = FrameMask {
            valid: vec![true, false, true],
        };
        let s = FeatureStream::new("v", frames, mask, 0.04).unwrap();
        let g = trace(&[0.1, 0.2, 0.3]);
        let (x, y) = apply_mask_for_training(&s, &g).unwrap();
        assert_eq!(x.rows(), 2);
        assert_eq!(x.row(1), &[3.0, 3.5]);
        assert_eq!(y, vec![0.1, 0.3]);
    }

    #[test]
    fn mask_all_invalid_is_empty_training_set() {
        let frames = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let s = FeatureStream::new(
            "v",
            frames,
            FrameMask {
                valid: vec![false, false],
            },
            0.04,
        )
        .unwrap();
        let g = trace(&[0.1, 0.2]);
        assert!(matches!(
            apply_mask_for_training(&s, &g),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn impute_hold_last() {
        let mask = FrameMask {
            valid: vec![false, true, false, true],
        };
        assert_eq!(
            impute_predictions(&[0.5, 0.7], &mask, 0.0).unwrap(),
            vec![0.0, 0.5, 0.5, 0.7]
        );
        let all = FrameMask::all_valid(3);
        assert_eq!(
            impute_predictions(&[0.1, 0.2, 0.3], &all, 9.0).unwrap(),
            vec![0.1, 0.2, 0.3]
        );
        assert!(impute_predictions(&[0.1], &all, 0.0).is_err());
    }

    #[test]
    fn scan_single_candidate_and_empty() {
        let g = trace(&[0.1, 0.5, -0.2, 0.3]);
        let s = scan_delay(&g, &[0.0, 0.1, 0.0, 0.2], &[0]).unwrap();
        assert_eq!(s.best_delay, 0);
        assert!(scan_delay(&g, &g.values, &[]).is_err());
    }

    #[test]
    fn gold_range_checked() {
        assert!(AffectTrace::gold(AffectDimension::Valence, 0.04, vec![0.0, 1.5], "s").is_err());
        assert!(AffectTrace::new(AffectDimension::Valence, 0.0, vec![0.0], "s").is_err());
    }

    #[test]
    fn split_rejects_shared_subject() {
        let rec = SubjectRecord {
            subject_id: "a".into(),
            streams: BTreeMap::new(),
            gold: BTreeMap::new(),
        };
        assert!(DatasetSplit::new(vec![rec.clone()], vec![rec]).is_err());
    }
}

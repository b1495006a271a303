//! Continuous arousal/valence regression from per-frame feature streams.
//!
//! The pipeline trains epsilon-SVRs on audio and video features, fuses
//! modalities early (feature concatenation) or late (prediction averaging),
//! compensates annotation delay, post-processes predictions with a median
//! filter, rescaling and centering, and scores them with the concordance
//! correlation coefficient.

pub mod error;
pub mod experiment;
pub mod fusion;
pub mod ingest;
pub mod matrix;
pub mod metrics;
pub mod postprocess;
pub mod svr;
pub mod timeseries;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
pub use metrics::{ccc, mae, pearson, EvaluationReport, Evaluator};
pub use timeseries::{
    AffectDimension, AffectTrace, DatasetSplit, FeatureStream, FrameMask, SubjectRecord,
};

//! Dataset manifest (TOML).
//!
//! ```toml
//! frame_period_s = 0.04
//!
//! [[subject]]
//! id = "train_00"
//! split = "train"
//! features = { video-fc50 = "features/train_00.video-fc50.csv" }
//! annotations = { arousal = "annotations/train_00.arousal.csv" }
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::format::{load_annotations, load_features};
use crate::error::{Error, Result};
use crate::timeseries::{AffectDimension, DatasetSplit, SubjectRecord, DEFAULT_FRAME_PERIOD_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub features: BTreeMap<String, PathBuf>,
    pub annotations: BTreeMap<AffectDimension, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    #[serde(default = "default_period")]
    pub frame_period_s: f64,
    #[serde(rename = "subject")]
    pub subjects: Vec<ManifestEntry>,
}

fn default_period() -> f64 {
    DEFAULT_FRAME_PERIOD_S
}

impl DatasetManifest {
    pub fn from_toml(text: &str, root: &Path) -> Result<Self> {
        let mut m: DatasetManifest =
            toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.root = root.to_path_buf();
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Checks split membership and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_period_s.is_finite() && self.frame_period_s > 0.0) {
            return Err(Error::Config("frame_period_s must be positive".into()));
        }
        for split in [Split::Train, Split::Dev] {
            if !self.subjects.iter().any(|s| s.split == split) {
                return Err(Error::Config(format!("manifest has no {split:?} subjects")));
            }
        }
        for s in &self.subjects {
            for p in s.features.values().chain(s.annotations.values()) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Config(format!(
                        "subject {}: missing file {}",
                        s.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    DatasetManifest::from_toml(&text, root)
}

/// Loads every subject, optionally restricted to some modalities and one
/// dimension. Subjects load in parallel; order follows the manifest.
pub fn load_dataset(
    manifest: &DatasetManifest,
    modalities: Option<&[String]>,
    dimension: Option<AffectDimension>,
) -> Result<DatasetSplit> {
    manifest.validate()?;
    let period = manifest.frame_period_s;
    let records: Vec<(Split, SubjectRecord)> = manifest
        .subjects
        .par_iter()
        .map(|entry| {
            let mut streams = BTreeMap::new();
            for (name, p) in &entry.features {
                if modalities.is_some_and(|m| !m.contains(name)) {
                    continue;
                }
                streams.insert(name.clone(), load_features(&manifest.resolve(p), name, period)?);
            }
            if let Some(m) = modalities {
                if let Some(missing) = m.iter().find(|m| !streams.contains_key(*m)) {
                    return Err(Error::Config(format!(
                        "subject {} has no modality {missing:?}",
                        entry.id
                    )));
                }
            }
            let mut gold = BTreeMap::new();
            for (&dim, p) in &entry.annotations {
                if dimension.is_some_and(|d| d != dim) {
                    continue;
                }
                gold.insert(dim, load_annotations(&manifest.resolve(p), dim, period, &entry.id)?);
            }
            Ok((
                entry.split,
                SubjectRecord {
                    subject_id: entry.id.clone(),
                    streams,
                    gold,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (split, rec) in records {
        match split {
            Split::Train => train.push(rec),
            Split::Dev => dev.push(rec),
        }
    }
    DatasetSplit::new(train, dev)
}

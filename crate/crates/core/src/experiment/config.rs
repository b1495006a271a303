use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionScheme};
use crate::ingest::SynthSpec;
use crate::postprocess::SearchSpace;
use crate::svr::{GridSpec, Objective, SmoOptions};
use crate::timeseries::AffectDimension;

/// Where the data comes from: a manifest on disk or a synthetic spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

/// Annotation delay compensated before training, per dimension, in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub arousal: usize,
    pub valence: usize,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig {
            arousal: 70,
            valence: 50,
        }
    }
}

impl DelayConfig {
    pub fn for_dimension(&self, d: AffectDimension) -> usize {
        match d {
            AffectDimension::Arousal => self.arousal,
            AffectDimension::Valence => self.valence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvrSettings {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
    #[serde(default = "default_cache_mb")]
    pub cache_mb: usize,
    /// Seeded row subsample of the training set; `None` trains on every valid row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_train_rows: Option<usize>,
    #[serde(default)]
    pub objective: Objective,
    /// Treat SMO non-convergence as a failure instead of a warning.
    #[serde(default)]
    pub fail_on_nonconvergence: bool,
}

fn default_tol() -> f64 {
    SmoOptions::default().tol
}
fn default_max_passes() -> usize {
    SmoOptions::default().max_passes
}
fn default_cache_mb() -> usize {
    SmoOptions::default().cache_mb
}

impl Default for SvrSettings {
    fn default() -> Self {
        SvrSettings {
            tol: default_tol(),
            max_passes: default_max_passes(),
            cache_mb: default_cache_mb(),
            max_train_rows: None,
            objective: Objective::Ccc,
            fail_on_nonconvergence: false,
        }
    }
}

impl SvrSettings {
    pub fn smo_options(&self) -> SmoOptions {
        SmoOptions {
            tol: self.tol,
            max_passes: self.max_passes,
            cache_mb: self.cache_mb,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Score only frames valid in every configured modality.
    #[serde(default)]
    pub exclude_invalid: bool,
    /// Average per-subject CCCs instead of scoring the concatenation.
    #[serde(default)]
    pub per_subject_average: bool,
    /// Prediction used for invalid frames before the first valid one.
    #[serde(default)]
    pub fill_start: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            exclude_invalid: false,
            per_subject_average: false,
            fill_start: 0.0,
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn default_grid() -> GridSpec {
    GridSpec::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dimension: AffectDimension,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for grid and chain search; `0` uses every core.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub fusion: FusionConfig,
    #[serde(default)]
    pub delay: DelayConfig,
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    #[serde(default)]
    pub svr: SvrSettings,
    #[serde(default)]
    pub postprocess: SearchSpace,
    #[serde(default)]
    pub evaluation: EvalSettings,
}

impl ExperimentConfig {
    /// A configuration with every default, over a synthetic dataset.
    pub fn synthetic(
        dimension: AffectDimension,
        synth: SynthSpec,
        scheme: FusionScheme,
        modalities: Vec<String>,
    ) -> Self {
        ExperimentConfig {
            name: default_name(),
            dimension,
            seed: synth.seed,
            jobs: 0,
            output_dir: PathBuf::new(),
            data: DataSource {
                manifest: None,
                synth: Some(synth),
            },
            fusion: FusionConfig {
                scheme,
                modalities,
                late_weights: None,
            },
            delay: DelayConfig::default(),
            grid: GridSpec::default(),
            svr: SvrSettings::default(),
            postprocess: SearchSpace::default(),
            evaluation: EvalSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file; a relative manifest path is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(m) = &cfg.data.manifest {
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.data.manifest = Some(dir.join(m));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.manifest, &self.data.synth) {
            (Some(_), None) => {}
            (None, Some(s)) => s.validate()?,
            _ => {
                return Err(Error::Config(
                    "data needs exactly one of `manifest` or `synth`".into(),
                ))
            }
        }
        self.fusion.validate()?;
        self.grid.cells()?;
        if !(self.svr.tol.is_finite() && self.svr.tol > 0.0) {
            return Err(Error::Config("svr.tol must be positive".into()));
        }
        if self.svr.max_train_rows == Some(0) {
            return Err(Error::Config("svr.max_train_rows must be positive".into()));
        }
        if !self.evaluation.fill_start.is_finite() {
            return Err(Error::Config("evaluation.fill_start must be finite".into()));
        }
        Ok(())
    }

    pub fn delay_frames(&self) -> usize {
        self.delay.for_dimension(self.dimension)
    }

    /// Content hash of the settings that determine results. Output location
    /// and thread count are excluded.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        canon.jobs = 0;
        let digest = Sha256::digest(canon.to_toml().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
name = "early-arousal"
dimension = "arousal"
seed = 3

[data.synth]
n_subjects_train = 2
n_subjects_dev = 2
frames_per_subject = 300
latent_bandwidth_hz = 0.2
annotation_lag_frames = 0
seed = 3
modalities = [
  { name = "video-fc50", dim = 50, noise_sigma = 1.0, invalid_fraction = 0.22 },
  { name = "audio-egemaps", dim = 88, noise_sigma = 1.0 },
]

[fusion]
scheme = "early"
modalities = ["video-fc50", "audio-egemaps"]

[grid]
c_values = [0.1, 1.0]
epsilon_values = [0.01]
kernels = [{ type = "linear" }]
"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.delay, DelayConfig { arousal: 70, valence: 50 });
        assert_eq!(cfg.delay_frames(), 70);
        assert_eq!(cfg.postprocess, SearchSpace::default());
        assert_eq!(cfg.svr.tol, 1e-3);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hash_ignores_output_and_jobs() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let mut other = cfg.clone();
        other.jobs = 8;
        other.output_dir = "elsewhere".into();
        assert_eq!(cfg.hash(), other.hash());
        other.seed = 4;
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash().len(), 12);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_sources() {
        let bad = EXAMPLE.replace("seed = 3\n\n[data.synth]", "seed = 3\ncolour = 1\n\n[data.synth]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let mut cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        cfg.data.manifest = Some("m.toml".into());
        assert!(cfg.validate().is_err());
    }
}

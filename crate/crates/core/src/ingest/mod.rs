//! File formats, dataset manifests and the synthetic data generator.

mod format;
mod manifest;
mod synth;

pub use format::{
    load_annotations, load_features, load_predictions, write_annotations, write_features,
    write_values,
};
pub use manifest::{load_dataset, load_manifest, DatasetManifest, ManifestEntry, Split};
pub use synth::{
    generate_synthetic, write_dataset, ModalitySpec, Projection, SynthSpec,
    SYNTH_GENERATOR_VERSION,
};

//! Dataset manifests, payload loading, and the synthetic-world generator.

pub mod loader;
pub mod manifest;
pub mod synth;

pub use loader::{input_from_bytes, load_input, PreprocessConfig};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestRecord, MANIFEST_HEADER};
pub use synth::{
    generate_dataset, synth_sample, synth_trajectory, synth_world, DatasetPaths, Landmark,
    SyntheticWorldConfig,
};

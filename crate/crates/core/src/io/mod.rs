//! Feature interchange, datasets, and the synthetic generator.

pub mod avtf;
pub mod manifest;
pub mod synth;

pub use avtf::{read_feature_file, write_feature_file};
pub use manifest::{load_dataset, ClipEntry, ClipRecord, Dataset, DatasetManifest};
pub use synth::{generate_clips, generate_synthetic, SynthConfig, SynthDataset};

//! Feature/label persistence and the seeded synthetic dataset generator.

pub mod dataset;
pub mod format;
pub mod synth;

pub use dataset::{
    load_dataset, read_category_names, write_category_names, Dataset, DatasetManifest,
    FeatureSequence, ManifestEntry,
};
pub use format::{
    decode_features, encode_features, read_features, read_gt, write_features, write_gt,
};
pub use synth::{category_names, generate_synthetic_dataset, synthesize, SynthConfig, SynthOutput};

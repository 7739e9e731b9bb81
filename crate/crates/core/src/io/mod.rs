//! Serialization: datasets, checkpoints, manifests and exports.

pub mod checkpoint;
pub mod dataset;
pub mod export;
pub mod manifest;

pub use dataset::{read_dataset, read_record, read_split, write_dataset, write_record, SequenceMeta, SPLITS};
pub use export::{export_joints, joints_to_csv, parse_joints_csv};
pub use manifest::{file_digest, write_atomic, Manifest, CODE_VERSION};
pub use checkpoint::{save_bundle, Bundle, ComponentInfo, BUNDLE_FILE};

//! Dataset containers, manifests, the synthetic generator and the evaluation harness.

pub mod eval;
pub mod experiment;
pub mod fseq;
pub mod manifest;
pub mod synth;

pub use fseq::{read_features, write_features, FeatureSequence};
pub use manifest::{load_manifest, DatasetManifest, Record};

/// Feature sequence paired with its per-frame normalized forces (`T × M`).
#[derive(Clone, Debug, PartialEq)]
pub struct ForceSequence<T> {
    pub features: FeatureSequence<T>,
    pub forces: Vec<Vec<T>>,
}

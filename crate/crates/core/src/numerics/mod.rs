//! Dense linear algebra, probability helpers, PCA, and seeded initialization.

pub mod matrix;
pub mod pca;
pub mod prob;
pub mod rng;

pub use matrix::{dot, Matrix, Vector};
pub use pca::{pca_fit, pca_transform, PcaModel};
pub use prob::{argmax, entropy, softmax, Distribution};
pub use rng::{randn_init, seeded_rng, SeededRng};

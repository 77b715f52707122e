//! Comparison methods: per-class Gaussian HMMs and a PCA sliding-window classifier.

pub mod hmm;
pub mod window;

pub use hmm::{hmm_classify, hmm_fit, GaussianHmm, HmmConfig, HmmFit};
pub use window::{majority_vote, window_classify, window_fit, WindowClassifier, WindowConfig, DEFAULT_PCA_DIM, DEFAULT_WINDOW};

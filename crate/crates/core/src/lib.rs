//! Online manipulation-action prediction and fingertip force regression.
//!
//! Per-frame feature vectors go through a learned linear projection into a
//! single-layer peephole LSTM. A softmax head turns each hidden state into a
//! belief over action labels; an affine head regresses normalized fingertip
//! forces. Around the model sit the training loop, streaming inference,
//! sensor conditioning, the HMM and sliding-window baselines, and the
//! evaluation harness.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI, the file formats and the
//! baselines use.

pub mod baselines;
pub mod binio;
pub mod container;
pub mod data;
pub mod error;
pub mod force;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod numerics;
pub mod online;
pub mod params;
pub mod recurrent;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use params::ParamSet;
pub use scalar::Scalar;

pub type Matrix = numerics::Matrix<f64>;
pub type Vector = numerics::Vector<f64>;
pub type Distribution = numerics::Distribution<f64>;
pub type PcaModel = numerics::PcaModel<f64>;
pub type CellParams = recurrent::CellParams<f64>;
pub type CellState = recurrent::CellState<f64>;
pub type ForwardTape = recurrent::ForwardTape<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type Model = model::Model<f64>;

pub type Matrix32 = numerics::Matrix<f32>;
pub type Vector32 = numerics::Vector<f32>;
pub type CellParams32 = recurrent::CellParams<f32>;
pub type Model32 = model::Model<f32>;

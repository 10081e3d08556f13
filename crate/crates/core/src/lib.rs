//! Online vertical federated learning for cooperative spectrum sensing.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision used by the command-line runner.

pub mod analysis;
pub mod environment;
pub mod error;
pub mod nn;
pub mod protocol;
pub mod quantize;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = nn::DenseMatrix<f64>;
pub type Mlp = nn::MlpParams<f64>;
pub type Model = nn::SplitModel<f64>;
pub type Dataset = environment::RoundDataset<f64>;
pub type Trainer = protocol::TrainerState<f64>;

pub type Matrix32 = nn::DenseMatrix<f32>;
pub type Mlp32 = nn::MlpParams<f32>;
pub type Model32 = nn::SplitModel<f32>;
pub type Dataset32 = environment::RoundDataset<f32>;
pub type Trainer32 = protocol::TrainerState<f32>;

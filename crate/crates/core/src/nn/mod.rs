//! Dense linear algebra, multilayer perceptrons and the split model.

mod matrix;
mod mlp;
mod split;

pub use matrix::DenseMatrix;
pub use mlp::{
    backward, forward, init_mlp, mse_grad, mse_loss, predict, sgd_step, ActivationTape, MlpGrads,
    MlpParams,
};
pub use split::{party_seed, Architecture, SplitGrads, SplitModel};

//! Small dense-network toolkit with manual backpropagation.
//!
//! Networks are batched (`(batch, features)` row layout) and use `f64`
//! throughout so that finite-difference checks are meaningful. Noisy layers
//! carry a learnable scale per weight and bias; all noise is drawn from an
//! injected generator.

mod gradcheck;
mod layer;
mod mlp;
mod optim;

pub use gradcheck::{
    compare_gradients, grad_check, mse_loss, relative_error, GradCheckReport, FD_STEP,
    REL_ERROR_FLOOR,
};
pub use layer::{DenseLayer, NoiseParams};
pub use mlp::{Cache, Gradients, LayerGrad, Mlp};
pub use optim::Adam;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("input has {got} features, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("cache does not belong to the current network parameters")]
    StaleCache,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl From<std::io::Error> for NeuralError {
    fn from(e: std::io::Error) -> Self {
        NeuralError::Checkpoint(e.to_string())
    }
}

impl From<serde_json::Error> for NeuralError {
    fn from(e: serde_json::Error) -> Self {
        NeuralError::Checkpoint(e.to_string())
    }
}

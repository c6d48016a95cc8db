//! Off-policy actor-critic learners: maximum-entropy SAC with optional noisy
//! layers, a DDPG contrast, and a categorical SAC used on small finite MDPs.

mod config;
mod critic;
mod ddpg;
mod discrete;
mod policy;
mod replay;
mod sac;
mod train;

pub use config::{NoiseResample, SacConfig};
pub use critic::{Critic, CriticSet};
pub use ddpg::DdpgAgent;
pub use discrete::DiscreteSacAgent;
pub use policy::{log_one_minus_tanh_sq, log_softmax, softplus, PolicySample, SquashedPolicy};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::{soft_target, SacAgent};
pub use train::{
    rollout, train, AgentCheckpoint, AgentKind, EpisodeMetrics, Learner, PowerMapping, Rollout, TrainError,
    TrainOutcome, TrainSpec, CHECKPOINT_FORMAT,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::neural::NeuralError;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("replay holds {have} transitions, batch needs {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    Divergence(&'static str),
    #[error(transparent)]
    Neural(NeuralError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl From<NeuralError> for AgentError {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::NonFiniteGradient => AgentError::Divergence("gradient"),
            other => AgentError::Neural(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Explore,
    Exploit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic: f64,
    pub critic2: Option<f64>,
    pub actor: f64,
    /// Mean of `-log pi` over the batch.
    pub entropy: f64,
}

impl LossReport {
    pub fn check(&self) -> Result<(), AgentError> {
        if !self.critic.is_finite() || self.critic2.is_some_and(|c| !c.is_finite()) {
            return Err(AgentError::Divergence("critic loss"));
        }
        if !self.actor.is_finite() {
            return Err(AgentError::Divergence("actor loss"));
        }
        Ok(())
    }
}

//! Experiment runner behind the command-line tool: configuration, training,
//! evaluation and report files.

mod commands;
mod config;
mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{
    checkpoint_path, cmd_compare, cmd_gradcheck, cmd_synth, cmd_trace, cmd_train, eval_agent, eval_greedy,
    eval_schedule, gradcheck_random, log_path, GradCheckSummary, TraceSource, TrainRun, TRAIN_LOG_HEADER,
};
pub use config::{EnvSection, MpcSection, RunConfig, ScenarioSection, ScenarioSource, TrainingSection};
pub use report::{MetricsReport, MetricsRow, Trace, TraceRow, REPORT_CSV_HEADER, TRACE_CSV_HEADER};

use crate::agents::{AgentError, TrainError};
use crate::baselines::BaselineError;
use crate::env::EnvError;
use crate::neural::NeuralError;
use crate::timeseries::ScenarioError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("day {day} out of range: evaluation scenario has {days} days")]
    DayOutOfRange { day: usize, days: usize },
    #[error("{agent} seed {seed} diverged in episode {episode} ({reason}); partial log at {}", log.display())]
    Divergence {
        agent: String,
        seed: u64,
        episode: usize,
        log: PathBuf,
        reason: String,
    },
    #[error("missing checkpoint {}; run `train` first", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("gradient check failed: max relative error {0:.3e}")]
    GradCheckFailed(f64),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 for divergence,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::DayOutOfRange { .. } => 2,
            HarnessError::Divergence { .. } => 3,
            _ => 1,
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => HarnessError::Config(m),
            TrainError::Divergence { episode, source, .. } => HarnessError::Divergence {
                agent: String::new(),
                seed: 0,
                episode,
                log: PathBuf::new(),
                reason: source.to_string(),
            },
            TrainError::Agent(a) => HarnessError::Agent(a),
            TrainError::Env(e) => HarnessError::Env(e),
        }
    }
}

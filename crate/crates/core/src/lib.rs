pub mod agents;
pub mod baselines;
pub mod battery;
pub mod dispatch;
pub mod env;
pub mod harness;
pub mod neural;
pub mod timeseries;

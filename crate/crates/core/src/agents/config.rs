use serde::{Deserialize, Serialize};

use super::AgentError;

/// When noisy layers draw fresh noise during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseResample {
    PerUpdate,
    PerEpisode,
}

/// Hyperparameters shared by the SAC and DDPG learners. Every learning rate,
/// temperature and schedule constant used by the update code lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    /// Entropy temperature.
    pub alpha: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Target smoothing coefficient.
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Noisy layers in the actor.
    pub noisy_net: bool,
    /// Noisy layers in the critics as well (only with `noisy_net`).
    pub noisy_critics: bool,
    pub noise_resample: NoiseResample,
    /// Noise scale initialization, divided by `sqrt(fan_in)`.
    pub sigma0: f64,
    pub twin_critics: bool,
    pub hidden: Vec<usize>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Multiplier applied to environment rewards inside the learner.
    pub reward_scale: f64,
    /// Uniform-random steps before the policy takes over.
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    /// DDPG Gaussian exploration noise as a fraction of the action range.
    pub ddpg_noise: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.2,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 100_000,
            noisy_net: true,
            noisy_critics: false,
            noise_resample: NoiseResample::PerUpdate,
            sigma0: 0.5,
            twin_critics: true,
            hidden: vec![128, 128],
            log_std_min: -5.0,
            log_std_max: 2.0,
            reward_scale: 1.0,
            warmup_steps: 1000,
            updates_per_step: 1,
            ddpg_noise: 0.1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma={} not in [0,1)", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha={} must be >= 0", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau={} not in (0,1]", self.tau));
        }
        for (name, lr) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name}={lr} must be > 0"));
            }
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be > 0".into());
        }
        if self.log_std_min >= self.log_std_max {
            return bad("log_std_min must be < log_std_max".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be > 0".into());
        }
        if !(self.ddpg_noise >= 0.0 && self.ddpg_noise.is_finite()) {
            return bad("ddpg_noise must be >= 0".into());
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return bad("sigma0 must be >= 0".into());
        }
        Ok(())
    }

    /// Layer widths for a network from `input` to `output` through `hidden`.
    pub fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(output);
        s
    }
}

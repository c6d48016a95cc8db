use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{NoiseResample, SacConfig};
use super::critic::Critic;
use super::replay::{Batch, ReplayBuffer};
use super::sac::join;
use super::{AgentError, LossReport, Mode};
use crate::neural::{Adam, Mlp};

/// Deterministic `tanh`-squashed actor with a single critic, both tracked by
/// target copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgAgent {
    pub cfg: SacConfig,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Critic,
    actor_opt: Adam,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        let actor = Mlp::new(&cfg.sizes(obs_dim, act_dim), cfg.noisy_net, cfg.sigma0, rng);
        let critic = Critic::new(
            &cfg.sizes(obs_dim + act_dim, 1),
            cfg.noisy_net && cfg.noisy_critics,
            cfg.sigma0,
            cfg.lr_critic,
            rng,
        );
        Ok(Self {
            actor_target: actor.clone(),
            actor,
            critic,
            actor_opt: Adam::new(cfg.lr_actor),
            cfg,
        })
    }

    fn squash(mlp: &Mlp, obs: ArrayView2<f64>, noise_on: bool) -> Result<Array2<f64>, AgentError> {
        Ok(mlp.predict(obs, noise_on)?.mapv(f64::tanh))
    }

    /// Exploration adds zero-mean Gaussian noise with standard deviation
    /// `ddpg_noise` times the action range, clipped back into `[-1, 1]`.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: Mode, rng: &mut R) -> Result<Vec<f64>, AgentError> {
        match mode {
            Mode::Exploit => Ok(self.actor.predict_one(obs, false)?.into_iter().map(f64::tanh).collect()),
            Mode::Explore => {
                let mean = self.actor.predict_one(obs, self.cfg.noisy_net)?;
                let sd = self.cfg.ddpg_noise * 2.0;
                let noise = Normal::new(0.0, sd).map_err(|e| AgentError::Config(e.to_string()))?;
                Ok(mean
                    .into_iter()
                    .map(|m| (m.tanh() + noise.sample(rng)).clamp(-1.0, 1.0))
                    .collect())
            }
        }
    }

    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.cfg.noisy_net {
            self.actor.resample_noise(rng);
            if self.cfg.noisy_critics {
                self.critic.online.resample_noise(rng);
            }
        }
    }

    pub fn update_from<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<LossReport, AgentError> {
        if buffer.len() < self.cfg.batch_size {
            return Err(AgentError::InsufficientData {
                have: buffer.len(),
                need: self.cfg.batch_size,
            });
        }
        let batch = buffer.sample(self.cfg.batch_size, rng);
        self.update(&batch, rng)
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<LossReport, AgentError> {
        if self.cfg.noise_resample == NoiseResample::PerUpdate {
            self.resample_noise(rng);
        }
        let n = batch.len();
        let noisy = self.cfg.noisy_net;
        let cn = noisy && self.cfg.noisy_critics;

        let a_next = Self::squash(&self.actor_target, batch.next_obs.view(), false)?;
        let q_next = self
            .critic
            .target
            .predict(join(&batch.next_obs, &a_next).view(), false)?;
        let y = Array1::from_shape_fn(n, |i| {
            let r = self.cfg.reward_scale * batch.rew[i];
            if batch.done[i] > 0.5 {
                r
            } else {
                r + self.cfg.gamma * q_next[[i, 0]]
            }
        });
        let critic_loss = self
            .critic
            .regress(join(&batch.obs, &batch.act).view(), &y, None, cn)?;

        let (pre, cache) = self.actor.forward(batch.obs.view(), noisy)?;
        let a = pre.mapv(f64::tanh);
        let x = join(&batch.obs, &a);
        let (q, qc) = self.critic.online.forward(x.view(), cn)?;
        let (_, dx) = self.critic.online.backward(&qc, Array2::ones((n, 1)).view())?;
        let od = batch.obs.ncols();
        let inv = 1.0 / n as f64;
        let mut dpre = dx.slice(s![.., od..]).mapv(|g| -g * inv);
        dpre.zip_mut_with(&a, |d, &ai| *d *= 1.0 - ai * ai);
        let (g, _) = self.actor.backward(&cache, dpre.view())?;
        self.actor.apply_gradients(&g, &mut self.actor_opt)?;

        self.critic.soft_update(self.cfg.tau);
        self.actor_target.soft_update_from(&self.actor, self.cfg.tau);

        let report = LossReport {
            critic: critic_loss,
            critic2: None,
            actor: -q.mean().unwrap_or(0.0),
            entropy: 0.0,
        };
        report.check()?;
        Ok(report)
    }
}

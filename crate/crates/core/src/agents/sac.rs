use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{NoiseResample, SacConfig};
use super::critic::CriticSet;
use super::policy::SquashedPolicy;
use super::replay::{Batch, ReplayBuffer};
use super::{AgentError, LossReport, Mode};
use crate::neural::Adam;

/// Entropy-regularized bootstrap target
/// `r + gamma * (1 - done) * (min_q_next - alpha * log_prob_next)`.
pub fn soft_target(
    reward: f64,
    done: bool,
    min_q_next: f64,
    log_prob_next: f64,
    gamma: f64,
    alpha: f64,
) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (min_q_next - alpha * log_prob_next)
    }
}

pub(crate) fn join(obs: &Array2<f64>, act: &Array2<f64>) -> Array2<f64> {
    concatenate![Axis(1), obs.view(), act.view()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub policy: SquashedPolicy,
    pub critics: CriticSet,
    actor_opt: Adam,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        let policy = SquashedPolicy::new(
            &cfg.hidden,
            obs_dim,
            act_dim,
            cfg.noisy_net,
            cfg.sigma0,
            (cfg.log_std_min, cfg.log_std_max),
            rng,
        );
        let critics = CriticSet::new(
            &cfg.sizes(obs_dim + act_dim, 1),
            cfg.twin_critics,
            cfg.noisy_net && cfg.noisy_critics,
            cfg.sigma0,
            cfg.lr_critic,
            rng,
        );
        Ok(Self {
            actor_opt: Adam::new(cfg.lr_actor),
            cfg,
            policy,
            critics,
        })
    }

    fn critic_noise(&self) -> bool {
        self.cfg.noisy_net && self.cfg.noisy_critics
    }

    /// Explore samples the stochastic policy with the current noise draw;
    /// exploit returns `tanh(mean)` with noise off.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: Mode, rng: &mut R) -> Result<Vec<f64>, AgentError> {
        match mode {
            Mode::Exploit => Ok(self.policy.mean_action(obs, false)?),
            Mode::Explore => {
                let view = ndarray::ArrayView2::from_shape((1, obs.len()), obs)
                    .map_err(|e| AgentError::Shape(e.to_string()))?;
                let smp = self.policy.sample(view, self.cfg.noisy_net, rng)?;
                Ok(smp.actions.row(0).to_vec())
            }
        }
    }

    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.cfg.noisy_net {
            self.policy.trunk.resample_noise(rng);
            if self.cfg.noisy_critics {
                self.critics.resample_noise(rng);
            }
        }
    }

    /// Samples a minibatch and runs one update.
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

    /// Critic regression, reparameterized actor step, then target tracking.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<LossReport, AgentError> {
        if self.cfg.noise_resample == NoiseResample::PerUpdate {
            self.resample_noise(rng);
        }
        let n = batch.len();
        let noisy = self.cfg.noisy_net;
        let (gamma, alpha) = (self.cfg.gamma, self.cfg.alpha);

        let next = self.policy.sample(batch.next_obs.view(), noisy, rng)?;
        let q_next = self.critics.min_target(join(&batch.next_obs, &next.actions).view())?;
        let y = Array1::from_shape_fn(n, |i| {
            soft_target(
                self.cfg.reward_scale * batch.rew[i],
                batch.done[i] > 0.5,
                q_next[[i, 0]],
                next.log_prob[i],
                gamma,
                alpha,
            )
        });
        let cn = self.critic_noise();
        let (c1, c2) = self
            .critics
            .regress(join(&batch.obs, &batch.act).view(), &y, None, cn)?;

        let cur = self.policy.sample(batch.obs.view(), noisy, rng)?;
        let x = join(&batch.obs, &cur.actions);
        let (qmin, dq_dx) = self.critics.min_online_input_grad(x.view(), cn)?;
        let od = batch.obs.ncols();
        let inv = 1.0 / n as f64;
        let dl_da = dq_dx.slice(s![.., od..]).mapv(|g| -g * inv);
        let dl_dlogp = Array1::from_elem(n, alpha * inv);
        let actor_loss = (alpha * &cur.log_prob - &qmin).mean().unwrap_or(0.0);
        let grads = self.policy.backward(&cur, dl_da.view(), dl_dlogp.view())?;
        self.policy.trunk.apply_gradients(&grads, &mut self.actor_opt)?;

        self.critics.soft_update(self.cfg.tau);

        let report = LossReport {
            critic: c1,
            critic2: c2,
            actor: actor_loss,
            entropy: -cur.log_prob.mean().unwrap_or(0.0),
        };
        report.check()?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::replay::Transition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_target_examples() {
        assert!((soft_target(1.0, false, 2.0, -0.5, 0.9, 0.2) - 2.89).abs() < 1e-12);
        assert_eq!(soft_target(1.0, true, 2.0, -0.5, 0.9, 0.2), 1.0);
        let plain = 1.0 + 0.9 * 2.0;
        assert!((soft_target(1.0, false, 2.0, -0.5, 0.9, 0.0) - plain).abs() < 1e-12);
    }

    fn small_cfg(noisy: bool, twin: bool) -> SacConfig {
        SacConfig {
            hidden: vec![16, 16],
            batch_size: 8,
            buffer_capacity: 64,
            noisy_net: noisy,
            twin_critics: twin,
            ..SacConfig::default()
        }
    }

    fn filled_buffer(rng: &mut ChaCha8Rng) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(64);
        for i in 0..40 {
            b.push(Transition {
                s: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.1],
                a: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                r: rng.gen_range(-1.0..0.0),
                s_next: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.1],
                done: i % 10 == 9,
            });
        }
        b
    }

    #[test]
    fn insufficient_buffer_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = SacAgent::new(3, 2, small_cfg(true, true), &mut rng).unwrap();
        let b = ReplayBuffer::new(64);
        assert!(matches!(
            agent.update_from(&b, &mut rng),
            Err(AgentError::InsufficientData { have: 0, need: 8 })
        ));
    }

    #[test]
    fn targets_drift_by_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = SacAgent::new(3, 2, small_cfg(false, true), &mut rng).unwrap();
        let buf = filled_buffer(&mut rng);
        let before = agent.critics.q1.target.clone();
        agent.update_from(&buf, &mut rng).unwrap();
        let tau = agent.cfg.tau;
        let online = agent.critics.q1.online.param_slices();
        for ((after, old), on) in agent
            .critics
            .q1
            .target
            .param_slices()
            .iter()
            .zip(before.param_slices())
            .zip(online)
        {
            for i in 0..after.len() {
                let want = tau * on[i] + (1.0 - tau) * old[i];
                assert!((after[i] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut agent = SacAgent::new(3, 2, small_cfg(true, true), &mut rng).unwrap();
            let buf = filled_buffer(&mut rng);
            let mut losses = Vec::new();
            for _ in 0..5 {
                losses.push(agent.update_from(&buf, &mut rng).unwrap());
            }
            (agent, losses)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn single_critic_form_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = SacAgent::new(3, 2, small_cfg(false, false), &mut rng).unwrap();
        let buf = filled_buffer(&mut rng);
        let rep = agent.update_from(&buf, &mut rng).unwrap();
        assert!(rep.critic2.is_none());
        assert!(!agent.critics.is_twin());
    }

    #[test]
    fn exploit_ignores_rng_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = SacAgent::new(3, 2, small_cfg(true, true), &mut rng).unwrap();
        let o = [0.2, -0.4, 0.1];
        let a1 = agent.act(&o, Mode::Exploit, &mut rng).unwrap();
        agent.resample_noise(&mut rng);
        let a2 = agent.act(&o, Mode::Exploit, &mut rng).unwrap();
        assert_eq!(a1, a2);
        assert!(a1.iter().all(|v| v.abs() <= 1.0));
    }
}

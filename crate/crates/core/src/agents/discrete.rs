use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::SacConfig;
use super::critic::CriticSet;
use super::policy::log_softmax;
use super::replay::{Batch, ReplayBuffer};
use super::sac::soft_target;
use super::{AgentError, LossReport, Mode};
use crate::neural::{Adam, Mlp};

/// Soft actor-critic over a finite action set. The policy is categorical and
/// all expectations over actions are computed exactly. Replay actions hold
/// the chosen index as a single float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSacAgent {
    pub cfg: SacConfig,
    pub policy: Mlp,
    pub critics: CriticSet,
    actor_opt: Adam,
}

impl DiscreteSacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        n_actions: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        let policy = Mlp::new(&cfg.sizes(obs_dim, n_actions), false, cfg.sigma0, rng);
        let critics = CriticSet::new(
            &cfg.sizes(obs_dim, n_actions),
            cfg.twin_critics,
            false,
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

    pub fn n_actions(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn log_probs(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>, AgentError> {
        Ok(log_softmax(self.policy.predict(obs, false)?.view()))
    }

    /// Minimum over the online critics, one column per action.
    pub fn q_values(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>, AgentError> {
        Ok(self.critics.min_online(obs, false)?)
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: Mode, rng: &mut R) -> Result<usize, AgentError> {
        let view = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| AgentError::Shape(e.to_string()))?;
        let lp = self.log_probs(view)?;
        let row = lp.row(0);
        match mode {
            Mode::Exploit => Ok(row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0),
            Mode::Explore => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, &v) in row.iter().enumerate() {
                    acc += v.exp();
                    if u < acc {
                        return Ok(i);
                    }
                }
                Ok(row.len() - 1)
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
        self.update(&batch)
    }

    pub fn update(&mut self, batch: &Batch) -> Result<LossReport, AgentError> {
        let n = batch.len();
        let k = self.n_actions();
        let (gamma, alpha) = (self.cfg.gamma, self.cfg.alpha);

        let lp_next = self.log_probs(batch.next_obs.view())?;
        let q_next = self.critics.min_target(batch.next_obs.view())?;
        let y = Array1::from_shape_fn(n, |i| {
            let (mut eq, mut elp) = (0.0, 0.0);
            for j in 0..k {
                let p = lp_next[[i, j]].exp();
                eq += p * q_next[[i, j]];
                elp += p * lp_next[[i, j]];
            }
            soft_target(
                self.cfg.reward_scale * batch.rew[i],
                batch.done[i] > 0.5,
                eq,
                elp,
                gamma,
                alpha,
            )
        });
        let cols: Vec<usize> = batch.act.column(0).iter().map(|&a| a as usize).collect();
        if cols.iter().any(|&c| c >= k) {
            return Err(AgentError::Shape("action index out of range".into()));
        }
        let (c1, c2) = self.critics.regress(batch.obs.view(), &y, Some(&cols), false)?;

        let (z, cache) = self.policy.forward(batch.obs.view(), false)?;
        let lp = log_softmax(z.view());
        let q = self.critics.min_online(batch.obs.view(), false)?;
        let inv = 1.0 / n as f64;
        let mut dz = Array2::zeros((n, k));
        let (mut loss, mut entropy) = (0.0, 0.0);
        for i in 0..n {
            let f: Vec<f64> = (0..k).map(|j| alpha * lp[[i, j]] - q[[i, j]]).collect();
            let fbar: f64 = (0..k).map(|j| lp[[i, j]].exp() * f[j]).sum();
            for j in 0..k {
                dz[[i, j]] = lp[[i, j]].exp() * (f[j] - fbar) * inv;
            }
            loss += fbar * inv;
            entropy -= (0..k).map(|j| lp[[i, j]].exp() * lp[[i, j]]).sum::<f64>() * inv;
        }
        let (g, _) = self.policy.backward(&cache, dz.view())?;
        self.policy.apply_gradients(&g, &mut self.actor_opt)?;
        self.critics.soft_update(self.cfg.tau);

        let report = LossReport {
            critic: c1,
            critic2: c2,
            actor: loss,
            entropy,
        };
        report.check()?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SacConfig {
            hidden: vec![5],
            ..SacConfig::default()
        };
        let agent = DiscreteSacAgent::new(2, 3, cfg, &mut rng).unwrap();
        let obs = Array2::from_shape_simple_fn((4, 2), || rng.gen_range(-1.0..1.0));
        let q = Array2::from_shape_simple_fn((4, 3), || rng.gen_range(-2.0..2.0));
        let alpha = 0.3;
        let loss = |net: &Mlp| {
            let lp = log_softmax(net.predict(obs.view(), false).unwrap().view());
            let mut l = 0.0;
            for i in 0..4 {
                for j in 0..3 {
                    l += lp[[i, j]].exp() * (alpha * lp[[i, j]] - q[[i, j]]) / 4.0;
                }
            }
            l
        };
        let (z, cache) = agent.policy.forward(obs.view(), false).unwrap();
        let lp = log_softmax(z.view());
        let mut dz = Array2::zeros((4, 3));
        for i in 0..4 {
            let f: Vec<f64> = (0..3).map(|j| alpha * lp[[i, j]] - q[[i, j]]).collect();
            let fbar: f64 = (0..3).map(|j| lp[[i, j]].exp() * f[j]).sum();
            for j in 0..3 {
                dz[[i, j]] = lp[[i, j]].exp() * (f[j] - fbar) / 4.0;
            }
        }
        let (g, _) = agent.policy.backward(&cache, dz.view()).unwrap();
        let mut probe = agent.policy.clone();
        let h = 1e-6;
        for (b, block) in g.slices().iter().enumerate() {
            for (i, &ga) in block.iter().enumerate() {
                let orig = probe.param_slices()[b][i];
                probe.param_slices_mut()[b][i] = orig + h;
                let up = loss(&probe);
                probe.param_slices_mut()[b][i] = orig - h;
                let down = loss(&probe);
                probe.param_slices_mut()[b][i] = orig;
                let num = (up - down) / (2.0 * h);
                assert!(crate::neural::relative_error(ga, num) < 1e-5, "{ga} vs {num}");
            }
        }
    }
}

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{NoiseResample, SacConfig};
use super::ddpg::DdpgAgent;
use super::replay::{ReplayBuffer, Transition};
use super::sac::SacAgent;
use super::{AgentError, LossReport, Mode};
use crate::battery::{feasible_power_bounds, BatteryParams, BatteryState};
use crate::env::{normalize_observation, ActionVec, BatteryEnv, EnvError, EnvSpec, ObsStats, Observation, StepInfo};

pub const CHECKPOINT_FORMAT: &str = "cbatt-agent";
const CHECKPOINT_VERSION: u32 = 1;

/// How a learner's first output becomes the environment's `u_power`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMapping {
    /// Passed through; the environment clamps to what the battery can do.
    Rated,
    /// `[-1, 1]` spans the power range feasible at the current energy,
    /// from its largest discharge to its largest charge.
    #[default]
    Feasible,
}

impl PowerMapping {
    pub fn apply(self, y: &[f64], energy: f64, battery: &BatteryParams, dt_hours: f64) -> ActionVec {
        let mut a = ActionVec::from_squashed(y);
        if self == PowerMapping::Feasible {
            let (max_ch, max_dis) = feasible_power_bounds(BatteryState { energy }, battery, dt_hours);
            let lo = -max_dis / battery.p_disch_max;
            let hi = max_ch / battery.p_ch_max;
            a.u_power = (lo + 0.5 * (a.u_power + 1.0) * (hi - lo)).clamp(-1.0, 1.0);
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Sac,
    Ddpg,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Sac => "sac",
            AgentKind::Ddpg => "ddpg",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sac" => Ok(AgentKind::Sac),
            "ddpg" => Ok(AgentKind::Ddpg),
            other => Err(format!("unknown agent '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Learner {
    Sac(SacAgent),
    Ddpg(DdpgAgent),
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(
        kind: AgentKind,
        obs_dim: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        Ok(match kind {
            AgentKind::Sac => Learner::Sac(SacAgent::new(obs_dim, ActionVec::DIM, cfg, rng)?),
            AgentKind::Ddpg => Learner::Ddpg(DdpgAgent::new(obs_dim, ActionVec::DIM, cfg, rng)?),
        })
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            Learner::Sac(_) => AgentKind::Sac,
            Learner::Ddpg(_) => AgentKind::Ddpg,
        }
    }

    pub fn config(&self) -> &SacConfig {
        match self {
            Learner::Sac(a) => &a.cfg,
            Learner::Ddpg(a) => &a.cfg,
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: Mode, rng: &mut R) -> Result<Vec<f64>, AgentError> {
        let a = match self {
            Learner::Sac(a) => a.act(obs, mode, rng)?,
            Learner::Ddpg(a) => a.act(obs, mode, rng)?,
        };
        if a.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::Divergence("policy output"));
        }
        Ok(a)
    }

    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self {
            Learner::Sac(a) => a.resample_noise(rng),
            Learner::Ddpg(a) => a.resample_noise(rng),
        }
    }

    pub fn update_from<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<LossReport, AgentError> {
        match self {
            Learner::Sac(a) => a.update_from(buffer, rng),
            Learner::Ddpg(a) => a.update_from(buffer, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub kind: AgentKind,
    pub agent: SacConfig,
    pub episodes: usize,
    /// Steps per episode; `None` means one day.
    pub episode_steps: Option<usize>,
    /// Initial stored energy; `None` means the middle of the usable range.
    pub e0: Option<f64>,
    /// Draw each episode's initial energy uniformly from the usable range
    /// instead of using `e0`.
    pub random_e0: bool,
    /// Start episodes at any step rather than only at midnight.
    pub any_start_hour: bool,
    pub power_mapping: PowerMapping,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            kind: AgentKind::Sac,
            agent: SacConfig::default(),
            episodes: 150,
            episode_steps: None,
            e0: None,
            random_e0: false,
            any_start_hour: false,
            power_mapping: PowerMapping::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub start: usize,
    pub cum_reward: f64,
    pub energy_cost: f64,
    pub degradation_cost: f64,
    pub violation_count: usize,
}

/// Frozen policy plus everything needed to evaluate it on fresh data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub episodes: usize,
    pub time_features: bool,
    pub obs_stats: ObsStats,
    pub config_hash: String,
    pub power_mapping: PowerMapping,
    pub battery: BatteryParams,
    pub dt_hours: f64,
    pub learner: Learner,
}

impl AgentCheckpoint {
    pub fn kind(&self) -> AgentKind {
        self.learner.kind()
    }

    /// Exploit-mode action for a raw observation.
    pub fn act(&self, obs: &Observation) -> Result<ActionVec, AgentError> {
        let x = normalize_observation(obs, &self.obs_stats, self.time_features);
        // exploit mode never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = self.learner.act(&x, Mode::Exploit, &mut rng)?;
        Ok(self.power_mapping.apply(&a, obs.energy, &self.battery, self.dt_hours))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AgentError> {
        let text = serde_json::to_string(self).map_err(|e| AgentError::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AgentError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::Config(e.to_string()))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| AgentError::Config(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(AgentError::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub curve: Vec<EpisodeMetrics>,
    pub checkpoint: AgentCheckpoint,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training spec: {0}")]
    Config(String),
    #[error("training diverged in episode {episode}: {source}")]
    Divergence {
        episode: usize,
        source: AgentError,
        curve: Vec<EpisodeMetrics>,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn episode_starts(spec: &EnvSpec, steps: usize, any_hour: bool) -> Result<Vec<usize>, TrainError> {
    let n = spec.scenario.len();
    if steps == 0 || steps > n {
        return Err(TrainError::Config(format!(
            "episode length {steps} does not fit a {n}-step scenario"
        )));
    }
    let stride = if any_hour {
        1
    } else {
        spec.scenario.steps_per_day().unwrap_or(steps).max(1)
    };
    Ok((0..=n - steps).step_by(stride).collect())
}

/// Seeded training loop: random episode starts (day-aligned by default), uniform random
/// actions during warmup, one or more updates per environment step once the
/// buffer holds a batch. Day boundaries truncate episodes without marking
/// them terminal; only the end of the scenario is terminal.
pub fn train(env_spec: &EnvSpec, spec: &TrainSpec, seed: u64, config_hash: &str) -> Result<TrainOutcome, TrainError> {
    spec.agent.validate()?;
    let steps = spec
        .episode_steps
        .or(env_spec.scenario.steps_per_day())
        .unwrap_or(24);
    let starts = episode_starts(env_spec, steps, spec.any_start_hour)?;
    let tf = env_spec.time_features;
    let dt = env_spec.scenario.dt_hours();
    let stats = ObsStats::from_scenario(&env_spec.scenario, &env_spec.battery, tf);
    let e0 = spec.e0.unwrap_or_else(|| env_spec.battery.mid_energy());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut learner = Learner::new(spec.kind, env_spec.obs_dim(), spec.agent.clone(), &mut rng)?;
    let cfg = spec.agent.clone();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut env = env_spec.build();
    let mut curve = Vec::with_capacity(spec.episodes);
    let mut total_steps = 0usize;

    for episode in 0..spec.episodes {
        let start = starts[rng.gen_range(0..starts.len())];
        let diverged = |source: AgentError, curve: &Vec<EpisodeMetrics>| TrainError::Divergence {
            episode,
            source,
            curve: curve.clone(),
        };
        if cfg.noise_resample == NoiseResample::PerEpisode {
            learner.resample_noise(&mut rng);
        }
        let e_start = if spec.random_e0 {
            rng.gen_range(env_spec.battery.e_min..=env_spec.battery.e_max)
        } else {
            e0
        };
        let obs = env.reset(start, e_start)?;
        let mut x = normalize_observation(&obs, &stats, tf);
        let mut m = EpisodeMetrics {
            episode,
            start,
            cum_reward: 0.0,
            energy_cost: 0.0,
            degradation_cost: 0.0,
            violation_count: 0,
        };
        for _ in 0..steps {
            let a = if total_steps < cfg.warmup_steps {
                vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]
            } else {
                learner
                    .act(&x, Mode::Explore, &mut rng)
                    .map_err(|e| diverged(e, &curve))?
            };
            let energy = env.energy().expect("reset");
            let out = env.step(spec.power_mapping.apply(&a, energy, &env_spec.battery, dt))?;
            let x_next = normalize_observation(&out.observation, &stats, tf);
            m.cum_reward += out.reward;
            m.energy_cost += out.info.energy_cost;
            m.degradation_cost += out.info.degradation_cost;
            m.violation_count += usize::from(out.info.violation_kw > 0.0);
            buffer.push(Transition {
                s: x,
                a,
                r: out.reward,
                s_next: x_next.clone(),
                done: out.done,
            });
            total_steps += 1;
            if total_steps >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                for _ in 0..cfg.updates_per_step {
                    learner
                        .update_from(&buffer, &mut rng)
                        .map_err(|e| diverged(e, &curve))?;
                }
            }
            x = x_next;
            if out.done {
                break;
            }
        }
        curve.push(m);
    }

    Ok(TrainOutcome {
        curve,
        checkpoint: AgentCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            episodes: spec.episodes,
            time_features: tf,
            obs_stats: stats,
            config_hash: config_hash.into(),
            power_mapping: spec.power_mapping,
            battery: env_spec.battery,
            dt_hours: dt,
            learner,
        },
    })
}

/// Per-step record of a policy run.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<StepInfo>,
    pub rewards: Vec<f64>,
}

impl Rollout {
    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.energy_cost + s.degradation_cost).sum()
    }

    pub fn energy_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.energy_cost).sum()
    }

    pub fn violation_count(&self) -> usize {
        self.steps.iter().filter(|s| s.violation_kw > 0.0).count()
    }

    pub fn cum_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Runs `policy` from `start` for up to `steps` steps (or to the end of the
/// scenario).
pub fn rollout<F>(env: &mut BatteryEnv, start: usize, steps: usize, e0: f64, mut policy: F) -> Result<Rollout, AgentError>
where
    F: FnMut(&Observation) -> Result<ActionVec, AgentError>,
{
    let mut obs = env.reset(start, e0)?;
    let mut out = Rollout {
        steps: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let a = policy(&obs)?;
        let s = env.step(a)?;
        out.rewards.push(s.reward);
        out.steps.push(s.info);
        obs = s.observation;
        if s.done {
            break;
        }
    }
    Ok(out)
}

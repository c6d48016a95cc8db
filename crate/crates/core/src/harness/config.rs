use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::agents::{AgentKind, PowerMapping, SacConfig, TrainSpec};
use crate::baselines::{DpConfig, Forecast};
use crate::battery::BatteryParams;
use crate::dispatch::GridParams;
use crate::env::{EnvSpec, RewardConfig};
use crate::timeseries::{load_scenario, synth_scenario, Scenario, SynthParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    Synth,
    File,
}

/// Where the training and held-out evaluation data come from. Synthetic
/// data is generated as one contiguous series; the last `eval_days` are
/// held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub source: ScenarioSource,
    pub seed: u64,
    pub train_days: usize,
    pub eval_days: usize,
    pub n_homes: usize,
    pub pv_kwp_per_home: f64,
    pub dt_hours: f64,
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            source: ScenarioSource::Synth,
            seed: 1,
            train_days: 30,
            eval_days: 7,
            n_homes: 60,
            pv_kwp_per_home: 2.0,
            dt_hours: 1.0,
            train_path: None,
            eval_path: None,
        }
    }
}

impl ScenarioSection {
    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            seed: self.seed,
            days: self.train_days + self.eval_days,
            n_homes: self.n_homes,
            pv_kwp_per_home: self.pv_kwp_per_home,
            dt_hours: self.dt_hours,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub time_features: bool,
    /// Initial stored energy for evaluation runs; `None` is mid-range.
    pub e0: Option<f64>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            time_features: true,
            e0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub episodes: usize,
    pub agents: Vec<AgentKind>,
    pub random_e0: bool,
    pub any_start_hour: bool,
    pub power_mapping: PowerMapping,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            episodes: 150,
            agents: vec![AgentKind::Sac, AgentKind::Ddpg],
            random_e0: true,
            any_start_hour: true,
            power_mapping: PowerMapping::Feasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    pub forecast: Forecast,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self {
            horizon: 24,
            forecast: Forecast::Perfect,
        }
    }
}

/// Complete experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub scenario: ScenarioSection,
    pub battery: BatteryParams,
    pub grid: GridParams,
    pub reward: RewardConfig,
    pub env: EnvSection,
    pub agent: SacConfig,
    pub training: TrainingSection,
    pub dp: DpConfig,
    pub mpc: MpcSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            seeds: vec![1, 2, 3, 4, 5],
            scenario: ScenarioSection::default(),
            battery: BatteryParams::default(),
            grid: GridParams::default(),
            reward: RewardConfig::default(),
            env: EnvSection::default(),
            agent: SacConfig::default(),
            training: TrainingSection::default(),
            dp: DpConfig::default(),
            mpc: MpcSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative scenario paths resolve
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.scenario.train_path, &mut cfg.scenario.eval_path].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(config_err)
    }

    /// Checks every section before any run starts.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.battery.validate().map_err(config_err)?;
        self.grid.validate().map_err(config_err)?;
        self.reward.validate().map_err(config_err)?;
        self.agent.validate().map_err(config_err)?;
        self.dp.validate().map_err(config_err)?;
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        if self.mpc.horizon == 0 {
            return Err(config_err("mpc.horizon must be >= 1"));
        }
        if let Some(e0) = self.env.e0 {
            if !self.battery.contains(e0) {
                return Err(config_err(format!("env.e0={e0} outside the battery window")));
            }
        }
        let s = &self.scenario;
        match s.source {
            ScenarioSource::Synth => {
                if s.train_days == 0 || s.eval_days == 0 {
                    return Err(config_err("train_days and eval_days must be >= 1"));
                }
                if s.n_homes == 0 || !(s.pv_kwp_per_home >= 0.0) {
                    return Err(config_err("n_homes must be >= 1 and pv_kwp_per_home >= 0"));
                }
                if !(s.dt_hours > 0.0) || (24.0 / s.dt_hours).fract() != 0.0 {
                    return Err(config_err("dt_hours must divide 24"));
                }
            }
            ScenarioSource::File => {
                if s.train_path.is_none() || s.eval_path.is_none() {
                    return Err(config_err("file scenarios need train_path and eval_path"));
                }
            }
        }
        Ok(())
    }

    /// Short digest of everything that affects results except the output
    /// directory and the seed list.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.seeds.clear();
        let text = serde_json::to_string(&c).unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Training and evaluation scenarios.
    pub fn scenarios(&self) -> Result<(Scenario, Scenario), HarnessError> {
        let s = &self.scenario;
        match s.source {
            ScenarioSource::Synth => {
                let full = synth_scenario(&s.synth_params())?;
                let per_day = full.steps_per_day().ok_or_else(|| config_err("dt_hours must divide 24"))?;
                let n_train = s.train_days * per_day;
                let train = full.window(0, n_train)?;
                let eval = full.window(n_train, s.eval_days * per_day)?;
                Ok((train, eval))
            }
            ScenarioSource::File => {
                let train = load_scenario(s.train_path.as_ref().expect("validated"), s.dt_hours)?;
                let eval = load_scenario(s.eval_path.as_ref().expect("validated"), s.dt_hours)?;
                Ok((train, eval))
            }
        }
    }

    pub fn env_spec(&self, scenario: Arc<Scenario>) -> EnvSpec {
        EnvSpec {
            scenario,
            battery: self.battery,
            grid: self.grid,
            reward: self.reward,
            time_features: self.env.time_features,
        }
    }

    pub fn eval_e0(&self) -> f64 {
        self.env.e0.unwrap_or_else(|| self.battery.mid_energy())
    }

    pub fn train_spec(&self, kind: AgentKind) -> TrainSpec {
        TrainSpec {
            kind,
            agent: self.agent.clone(),
            episodes: self.training.episodes,
            episode_steps: None,
            e0: self.env.e0,
            random_e0: self.training.random_e0,
            any_start_hour: self.training.any_start_hour,
            power_mapping: self.training.power_mapping,
        }
    }
}

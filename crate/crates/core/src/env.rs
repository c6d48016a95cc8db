//! Episodic battery-scheduling environment.
//!
//! The observation is the stored energy plus the exogenous prices, PV and
//! load of the current step, optionally extended with a time-of-day clock.
//! Actions are a normalized signed battery power and a grid fraction. Battery
//! energy limits are enforced by clamping; grid caps only by reward penalty.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{
    degradation_cost, feasible_power_bounds, step_energy, BatteryError, BatteryParams,
    BatteryState,
};
use crate::dispatch::{
    decompose, energy_cost, grid_violation, DispatchError, FlowSet, GridParams,
};
use crate::timeseries::{net_load, Scenario};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("start index {start} outside scenario of length {len}")]
    StartOutOfRange { start: usize, len: usize },
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("action out of range: u_power={u_power}, u_grid={u_grid}")]
    BadAction { u_power: f64, u_grid: f64 },
    #[error("invalid reward config: {0}")]
    BadReward(String),
}

/// Weighting between cost and grid-cap penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight on the cost term; `1 - xi` goes to the penalty.
    pub xi: f64,
    /// Penalty per kW of grid-cap violation, reward units.
    pub lambda_v: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            xi: 0.5,
            lambda_v: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(EnvError::BadReward(format!("xi={} not in [0,1]", self.xi)));
        }
        if !(self.lambda_v.is_finite() && self.lambda_v >= 0.0) {
            return Err(EnvError::BadReward(format!(
                "lambda_v={} must be >= 0",
                self.lambda_v
            )));
        }
        Ok(())
    }

    /// Combined reward from the per-step cost components.
    pub fn reward(&self, energy_cost: f64, degradation_cost: f64, violation_kw: f64) -> f64 {
        let cost = -(energy_cost + degradation_cost);
        let penalty = -self.lambda_v * violation_kw;
        self.xi * cost + (1.0 - self.xi) * penalty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub energy: f64,
    pub price_buy: f64,
    pub price_sell: f64,
    pub p_pvgen: f64,
    pub p_home: f64,
    pub tod_sin: f64,
    pub tod_cos: f64,
}

impl Observation {
    pub const BASE_DIM: usize = 5;

    pub fn dim(time_features: bool) -> usize {
        Self::BASE_DIM + if time_features { 2 } else { 0 }
    }

    /// Raw feature vector; the clock pair is appended when `time_features`.
    pub fn features(&self, time_features: bool) -> Vec<f64> {
        let mut v = vec![
            self.energy,
            self.price_buy,
            self.price_sell,
            self.p_pvgen,
            self.p_home,
        ];
        if time_features {
            v.push(self.tod_sin);
            v.push(self.tod_cos);
        }
        v
    }
}

/// Agent decision in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionVec {
    /// Signed battery power as a fraction of the rating, `+` charges.
    pub u_power: f64,
    /// Fraction of battery power exchanged with the grid.
    pub u_grid: f64,
}

impl ActionVec {
    pub const DIM: usize = 2;

    pub fn idle() -> Self {
        Self {
            u_power: 0.0,
            u_grid: 0.0,
        }
    }

    /// Maps a squashed vector in `[-1, 1]^2` onto the action ranges.
    pub fn from_squashed(y: &[f64]) -> Self {
        Self {
            u_power: y[0].clamp(-1.0, 1.0),
            u_grid: ((y[1] + 1.0) * 0.5).clamp(0.0, 1.0),
        }
    }

    pub fn to_squashed(self) -> [f64; 2] {
        [self.u_power, 2.0 * self.u_grid - 1.0]
    }

    fn is_valid(&self) -> bool {
        (-1.0..=1.0).contains(&self.u_power) && (0.0..=1.0).contains(&self.u_grid)
    }
}

/// Per-step accounting returned alongside the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub index: usize,
    pub flows: FlowSet,
    pub p_ch: f64,
    pub p_disch: f64,
    pub a_grid: f64,
    pub net_load: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    pub energy_cost: f64,
    pub degradation_cost: f64,
    pub violation_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Everything needed to build an environment.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub scenario: Arc<Scenario>,
    pub battery: BatteryParams,
    pub grid: GridParams,
    pub reward: RewardConfig,
    pub time_features: bool,
}

impl EnvSpec {
    pub fn build(&self) -> BatteryEnv {
        BatteryEnv::new(
            self.scenario.clone(),
            self.battery,
            self.grid,
            self.reward,
            self.time_features,
        )
    }

    pub fn obs_dim(&self) -> usize {
        Observation::dim(self.time_features)
    }
}

#[derive(Debug, Clone)]
pub struct BatteryEnv {
    scenario: Arc<Scenario>,
    battery: BatteryParams,
    grid: GridParams,
    reward: RewardConfig,
    time_features: bool,
    t: usize,
    state: Option<BatteryState>,
}

impl BatteryEnv {
    pub fn new(
        scenario: Arc<Scenario>,
        battery: BatteryParams,
        grid: GridParams,
        reward: RewardConfig,
        time_features: bool,
    ) -> Self {
        Self {
            scenario,
            battery,
            grid,
            reward,
            time_features,
            t: 0,
            state: None,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn battery(&self) -> &BatteryParams {
        &self.battery
    }

    pub fn grid(&self) -> &GridParams {
        &self.grid
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn time_features(&self) -> bool {
        self.time_features
    }

    /// Index of the record the next step will consume.
    pub fn cursor(&self) -> usize {
        self.t
    }

    pub fn energy(&self) -> Option<f64> {
        self.state.map(|s| s.energy)
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.scenario.len()
    }

    pub fn reset(&mut self, start_index: usize, e0: f64) -> Result<Observation, EnvError> {
        if start_index >= self.scenario.len() {
            return Err(EnvError::StartOutOfRange {
                start: start_index,
                len: self.scenario.len(),
            });
        }
        let state = BatteryState::new(e0, &self.battery)?;
        self.state = Some(state);
        self.t = start_index;
        Ok(self.observe(start_index, state))
    }

    pub fn observation(&self) -> Option<Observation> {
        let state = self.state?;
        (!self.is_done()).then(|| self.observe(self.t, state))
    }

    fn observe(&self, i: usize, state: BatteryState) -> Observation {
        let r = self.scenario.record(i);
        let phase = TAU * self.scenario.hour_of_day(i) / 24.0;
        Observation {
            energy: state.energy,
            price_buy: r.price_buy,
            price_sell: r.price_sell,
            p_pvgen: r.p_pvgen,
            p_home: r.p_home,
            tod_sin: phase.sin(),
            tod_cos: phase.cos(),
        }
    }

    /// Applies a normalized action.
    pub fn step(&mut self, action: ActionVec) -> Result<StepOutcome, EnvError> {
        if !action.is_valid() {
            return Err(EnvError::BadAction {
                u_power: action.u_power,
                u_grid: action.u_grid,
            });
        }
        let p_net = if action.u_power >= 0.0 {
            action.u_power * self.battery.p_ch_max
        } else {
            action.u_power * self.battery.p_disch_max
        };
        self.step_power(p_net, action.u_grid)
    }

    /// Applies a physical action: signed battery power in kW and grid fraction.
    pub fn step_power(&mut self, p_net_batt: f64, a_grid: f64) -> Result<StepOutcome, EnvError> {
        let state = self.state.ok_or(EnvError::NotReset)?;
        if self.is_done() {
            return Err(EnvError::StepAfterDone);
        }
        let dt = self.scenario.dt_hours();
        let record = *self.scenario.record(self.t);
        let net = net_load(&record);
        let bounds = feasible_power_bounds(state, &self.battery, dt);
        let d = decompose(p_net_batt, a_grid, net, bounds, &self.grid)?;

        let ec = energy_cost(&d.flows, record.price_buy, record.price_sell, dt);
        let dc = degradation_cost(d.p_ch, d.p_disch, &self.battery, dt);
        let violation = grid_violation(&d.flows, &self.grid);
        let reward = self.reward.reward(ec, dc, violation);

        let next = step_energy(state, d.p_ch, d.p_disch, &self.battery, dt)?;
        self.state = Some(next);
        self.t += 1;
        let done = self.is_done();
        // After the final record the observation repeats the last exogenous
        // values with the updated energy; it is never acted upon.
        let observation = self.observe(if done { self.t - 1 } else { self.t }, next);

        Ok(StepOutcome {
            observation,
            reward,
            done,
            info: StepInfo {
                index: record.index,
                flows: d.flows,
                p_ch: d.p_ch,
                p_disch: d.p_disch,
                a_grid,
                net_load: net,
                energy_before: state.energy,
                energy_after: next.energy,
                energy_cost: ec,
                degradation_cost: dc,
                violation_kw: violation,
            },
        })
    }
}

/// Per-feature min/max used to scale observations into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsStats {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ObsStats {
    pub fn empty(dim: usize) -> Self {
        Self {
            lo: vec![f64::INFINITY; dim],
            hi: vec![f64::NEG_INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        for ((lo, hi), &v) in self.lo.iter_mut().zip(self.hi.iter_mut()).zip(x) {
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
    }

    /// Ranges covering the battery window and every record of `scenario`.
    pub fn from_scenario(scenario: &Scenario, battery: &BatteryParams, time_features: bool) -> Self {
        let mut s = Self::empty(Observation::dim(time_features));
        for r in scenario.records() {
            s.update(&[battery.e_min, r.price_buy, r.price_sell, r.p_pvgen, r.p_home]);
        }
        s.lo[0] = battery.e_min;
        s.hi[0] = battery.e_max;
        if time_features {
            let n = s.lo.len();
            s.lo[n - 2..].fill(-1.0);
            s.hi[n - 2..].fill(1.0);
        }
        s
    }

    /// Affine map to `[-1, 1]`; features with a zero-width range map to 0.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&lo, &hi))| {
                let w = hi - lo;
                if w > 0.0 && w.is_finite() {
                    2.0 * (v - lo) / w - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&lo, &hi))| {
                let w = hi - lo;
                if w > 0.0 && w.is_finite() {
                    lo + (v + 1.0) * 0.5 * w
                } else {
                    lo
                }
            })
            .collect()
    }
}

pub fn normalize_observation(obs: &Observation, stats: &ObsStats, time_features: bool) -> Vec<f64> {
    stats.normalize(&obs.features(time_features))
}

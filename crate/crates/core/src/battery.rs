//! Community battery physics: energy dynamics, power limits and
//! equivalent-full-cycle degradation cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on the energy bounds before a step is rejected, kWh.
pub const ENERGY_TOL_KWH: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum BatteryError {
    #[error("invalid battery parameters: {0}")]
    InvalidParams(String),
    #[error("{which} power {value} kW is negative or not finite")]
    BadPower { which: &'static str, value: f64 },
    #[error("{which} power {value} kW exceeds limit {limit} kW")]
    ExceedsLimit {
        which: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("simultaneous charge ({p_ch} kW) and discharge ({p_disch} kW)")]
    Simultaneous { p_ch: f64, p_disch: f64 },
    #[error("energy {energy} kWh outside [{min}, {max}]")]
    EnergyOutOfBounds { energy: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    /// Nameplate capacity, kWh.
    pub e_cap: f64,
    pub e_min: f64,
    pub e_max: f64,
    /// Maximum charge power, kW.
    pub p_ch_max: f64,
    /// Maximum discharge power, kW.
    pub p_disch_max: f64,
    pub eta_ch: f64,
    pub eta_disch: f64,
    /// Rated life in equivalent full cycles.
    pub l_cyc: f64,
    /// Replacement cost charged over `l_cyc` full cycles, $.
    pub kappa_batt: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        let e_cap = 500.0;
        Self {
            e_cap,
            e_min: 0.05 * e_cap,
            e_max: 0.95 * e_cap,
            p_ch_max: 250.0,
            p_disch_max: 250.0,
            eta_ch: 0.95,
            eta_disch: 0.95,
            l_cyc: 5000.0,
            kappa_batt: 400.0 * e_cap,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), BatteryError> {
        let bad = |m: &str| Err(BatteryError::InvalidParams(m.to_string()));
        let all = [
            self.e_cap,
            self.e_min,
            self.e_max,
            self.p_ch_max,
            self.p_disch_max,
            self.eta_ch,
            self.eta_disch,
            self.l_cyc,
            self.kappa_batt,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.e_cap <= 0.0 {
            return bad("e_cap must be > 0");
        }
        if !(0.0 <= self.e_min && self.e_min < self.e_max && self.e_max <= self.e_cap) {
            return bad("need 0 <= e_min < e_max <= e_cap");
        }
        if !(self.eta_ch > 0.0 && self.eta_ch <= 1.0 && self.eta_disch > 0.0 && self.eta_disch <= 1.0)
        {
            return bad("efficiencies must lie in (0, 1]");
        }
        if self.p_ch_max <= 0.0 || self.p_disch_max <= 0.0 {
            return bad("power limits must be > 0");
        }
        if self.l_cyc <= 0.0 {
            return bad("l_cyc must be > 0");
        }
        if self.kappa_batt < 0.0 {
            return bad("kappa_batt must be >= 0");
        }
        Ok(())
    }

    /// Midpoint of the usable energy window.
    pub fn mid_energy(&self) -> f64 {
        self.e_min + 0.5 * (self.e_max - self.e_min)
    }

    pub fn contains(&self, energy: f64) -> bool {
        energy >= self.e_min && energy <= self.e_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    /// Stored energy, kWh.
    pub energy: f64,
}

impl BatteryState {
    pub fn new(energy: f64, params: &BatteryParams) -> Result<Self, BatteryError> {
        if !energy.is_finite() || !params.contains(energy) {
            return Err(BatteryError::EnergyOutOfBounds {
                energy,
                min: params.e_min,
                max: params.e_max,
            });
        }
        Ok(Self { energy })
    }
}

/// Signed change in stored energy for one step, kWh.
pub fn energy_delta(p_ch: f64, p_disch: f64, params: &BatteryParams, dt_hours: f64) -> f64 {
    p_ch * params.eta_ch * dt_hours - p_disch * dt_hours / params.eta_disch
}

/// Advances the stored energy by one step.
///
/// The caller is expected to respect [`feasible_power_bounds`]; results within
/// [`ENERGY_TOL_KWH`] of a bound are snapped onto it.
pub fn step_energy(
    state: BatteryState,
    p_ch: f64,
    p_disch: f64,
    params: &BatteryParams,
    dt_hours: f64,
) -> Result<BatteryState, BatteryError> {
    for (which, value) in [("charge", p_ch), ("discharge", p_disch)] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(BatteryError::BadPower { which, value });
        }
    }
    if p_ch > params.p_ch_max {
        return Err(BatteryError::ExceedsLimit {
            which: "charge",
            value: p_ch,
            limit: params.p_ch_max,
        });
    }
    if p_disch > params.p_disch_max {
        return Err(BatteryError::ExceedsLimit {
            which: "discharge",
            value: p_disch,
            limit: params.p_disch_max,
        });
    }
    if p_ch > 0.0 && p_disch > 0.0 {
        return Err(BatteryError::Simultaneous { p_ch, p_disch });
    }
    let energy = state.energy + energy_delta(p_ch, p_disch, params, dt_hours);
    if energy < params.e_min - ENERGY_TOL_KWH || energy > params.e_max + ENERGY_TOL_KWH {
        return Err(BatteryError::EnergyOutOfBounds {
            energy,
            min: params.e_min,
            max: params.e_max,
        });
    }
    Ok(BatteryState {
        energy: energy.clamp(params.e_min, params.e_max),
    })
}

/// Largest charge and discharge powers that respect both the converter
/// ratings and the energy window over one step.
pub fn feasible_power_bounds(
    state: BatteryState,
    params: &BatteryParams,
    dt_hours: f64,
) -> (f64, f64) {
    let headroom = (params.e_max - state.energy) / (params.eta_ch * dt_hours);
    let available = (state.energy - params.e_min) * params.eta_disch / dt_hours;
    (
        params.p_ch_max.min(headroom).max(0.0),
        params.p_disch_max.min(available).max(0.0),
    )
}

/// Equivalent full cycles consumed by one step.
pub fn efc(p_ch: f64, p_disch: f64, params: &BatteryParams, dt_hours: f64) -> f64 {
    0.5 * energy_delta(p_ch, p_disch, params, dt_hours).abs() / params.e_cap
}

/// Cycle-aging cost of one step, $.
pub fn degradation_cost(p_ch: f64, p_disch: f64, params: &BatteryParams, dt_hours: f64) -> f64 {
    efc(p_ch, p_disch, params, dt_hours) / params.l_cyc * params.kappa_batt
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schedule::{Schedule, ScheduleStep};
use super::BaselineError;
use crate::battery::{degradation_cost, feasible_power_bounds, BatteryParams, BatteryState};
use crate::dispatch::{decompose, energy_cost, grid_violation, GridParams};
use crate::timeseries::{net_load, ExogenousRecord, Scenario};

/// Violations above this are treated as infeasible.
const VIOLATION_TOL_KW: f64 = 1e-9;
/// Energies this close to a level count as already there.
const ON_GRID_TOL_KWH: f64 = 1e-9;
/// Upper bound on the number of action sequences `enumerate_optimal` visits.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    /// Uniform energy levels from `e_min` to `e_max`.
    pub soc_levels: usize,
    /// Candidate powers per direction, idle included.
    pub power_levels: usize,
    pub grid_fractions: Vec<f64>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            soc_levels: 101,
            power_levels: 21,
            grid_fractions: vec![0.0, 0.5, 1.0],
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.soc_levels < 2 || self.power_levels < 2 {
            return Err(BaselineError::Config("soc_levels and power_levels must be >= 2".into()));
        }
        if self.grid_fractions.is_empty() || self.grid_fractions.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(BaselineError::Config("grid_fractions must be non-empty and in [0,1]".into()));
        }
        Ok(())
    }

    /// Doubles both resolutions so every old level and candidate power is
    /// kept.
    pub fn refined(&self) -> Self {
        Self {
            soc_levels: 2 * self.soc_levels - 1,
            power_levels: 2 * self.power_levels - 1,
            grid_fractions: self.grid_fractions.clone(),
        }
    }
}

/// One admissible move: target level, powers and the routing fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Move {
    target: usize,
    p_ch: f64,
    p_disch: f64,
    a_grid: f64,
}

struct Lattice<'a> {
    levels: Vec<f64>,
    battery: &'a BatteryParams,
    grid: &'a GridParams,
    cfg: &'a DpConfig,
    dt: f64,
}

impl<'a> Lattice<'a> {
    fn new(battery: &'a BatteryParams, grid: &'a GridParams, cfg: &'a DpConfig, dt: f64) -> Self {
        let n = cfg.soc_levels;
        let step = (battery.e_max - battery.e_min) / (n - 1) as f64;
        let mut levels: Vec<f64> = (0..n).map(|k| battery.e_min + k as f64 * step).collect();
        levels[n - 1] = battery.e_max;
        Self {
            levels,
            battery,
            grid,
            cfg,
            dt,
        }
    }

    fn nearest(&self, e: f64) -> usize {
        let n = self.levels.len();
        let h = (self.battery.e_max - self.battery.e_min) / (n - 1) as f64;
        let k = ((e - self.battery.e_min) / h).round();
        k.clamp(0.0, (n - 1) as f64) as usize
    }

    /// Powers that move from `e` exactly onto level `k`, if within bounds.
    fn powers_to(&self, e: f64, k: usize, bounds: (f64, f64)) -> Option<(f64, f64)> {
        let target = self.levels[k];
        let slack = |b: f64| b * 1e-12 + 1e-12;
        if (target - e).abs() <= ON_GRID_TOL_KWH {
            Some((0.0, 0.0))
        } else if target > e {
            let p = (target - e) / (self.battery.eta_ch * self.dt);
            (p <= bounds.0 + slack(bounds.0)).then_some((p.min(bounds.0), 0.0))
        } else {
            let p = (e - target) * self.battery.eta_disch / self.dt;
            (p <= bounds.1 + slack(bounds.1)).then_some((0.0, p.min(bounds.1)))
        }
    }

    /// Target levels reachable from `e`: each candidate power is snapped to
    /// the nearest level, stepping one level back toward `e` when the
    /// snapped move would exceed the rate bound.
    fn targets(&self, e: f64) -> BTreeMap<usize, (f64, f64)> {
        let bounds = feasible_power_bounds(BatteryState { energy: e }, self.battery, self.dt);
        let p = self.cfg.power_levels;
        let mut out = BTreeMap::new();
        for j in 0..p {
            let frac = j as f64 / (p - 1) as f64;
            let up = e + frac * bounds.0 * self.battery.eta_ch * self.dt;
            let down = e - frac * bounds.1 * self.dt / self.battery.eta_disch;
            for (x, toward) in [(up, -1i64), (down, 1i64)] {
                let mut k = self.nearest(x);
                let mut pw = self.powers_to(e, k, bounds);
                if pw.is_none() {
                    let back = k as i64 + toward;
                    if back >= 0 && (back as usize) < self.levels.len() {
                        k = back as usize;
                        pw = self.powers_to(e, k, bounds);
                    }
                }
                if let Some(pw) = pw {
                    out.entry(k).or_insert(pw);
                }
            }
        }
        out
    }

    fn moves(&self, e: f64) -> Vec<Move> {
        let mut v = Vec::new();
        for (target, (p_ch, p_disch)) in self.targets(e) {
            if p_ch == 0.0 && p_disch == 0.0 {
                v.push(Move {
                    target,
                    p_ch,
                    p_disch,
                    a_grid: 0.0,
                });
            } else {
                for &a_grid in &self.cfg.grid_fractions {
                    v.push(Move {
                        target,
                        p_ch,
                        p_disch,
                        a_grid,
                    });
                }
            }
        }
        v
    }

    /// Stage outcome, or `None` when the move breaches a grid limit.
    fn stage(&self, index: usize, e: f64, mv: &Move, rec: &ExogenousRecord) -> Option<ScheduleStep> {
        let bounds = feasible_power_bounds(BatteryState { energy: e }, self.battery, self.dt);
        let d = decompose(mv.p_ch - mv.p_disch, mv.a_grid, net_load(rec), bounds, self.grid).ok()?;
        let viol = grid_violation(&d.flows, self.grid);
        if viol > VIOLATION_TOL_KW {
            return None;
        }
        Some(ScheduleStep {
            index,
            p_ch: d.p_ch,
            p_disch: d.p_disch,
            a_grid: mv.a_grid,
            flows: d.flows,
            energy_before: e,
            energy_after: self.levels[mv.target],
            energy_cost: energy_cost(&d.flows, rec.price_buy, rec.price_sell, self.dt),
            degradation_cost: degradation_cost(d.p_ch, d.p_disch, self.battery, self.dt),
            violation_kw: viol,
        })
    }
}

fn check_inputs(
    scenario: &Scenario,
    battery: &BatteryParams,
    grid: &GridParams,
    cfg: &DpConfig,
    e0: f64,
) -> Result<(), BaselineError> {
    if scenario.is_empty() {
        return Err(BaselineError::EmptyScenario);
    }
    battery.validate()?;
    grid.validate()?;
    cfg.validate()?;
    if !battery.contains(e0) {
        return Err(BaselineError::Config(format!("initial energy {e0} outside battery window")));
    }
    Ok(())
}

/// Perfect-foresight minimum of energy plus degradation cost over the
/// lattice, with every grid-limit breach excluded. Stage 0 starts from the
/// exact `e0`; later stages live on the lattice.
pub fn dp_optimal(
    scenario: &Scenario,
    battery: &BatteryParams,
    grid: &GridParams,
    cfg: &DpConfig,
    e0: f64,
) -> Result<Schedule, BaselineError> {
    check_inputs(scenario, battery, grid, cfg, e0)?;
    let lat = Lattice::new(battery, grid, cfg, scenario.dt_hours());
    let t_len = scenario.len();
    let n = lat.levels.len();

    // value[t][k]: optimal cost-to-go from level k at stage t
    let mut value = vec![vec![f64::INFINITY; n]; t_len + 1];
    value[t_len].fill(0.0);
    let mut choice: Vec<Vec<Option<Move>>> = vec![vec![None; n]; t_len];
    let moves: Vec<Vec<Move>> = lat.levels.iter().map(|&e| lat.moves(e)).collect();

    for t in (1..t_len).rev() {
        let rec = scenario.record(t);
        for k in 0..n {
            let e = lat.levels[k];
            let mut best = (f64::INFINITY, None);
            for mv in &moves[k] {
                let next = value[t + 1][mv.target];
                if !next.is_finite() {
                    continue;
                }
                if let Some(st) = lat.stage(t, e, mv, rec) {
                    let v = st.cost() + next;
                    if v < best.0 {
                        best = (v, Some(*mv));
                    }
                }
            }
            value[t][k] = best.0;
            choice[t][k] = best.1;
        }
    }

    let mut steps = Vec::with_capacity(t_len);
    let first_moves = lat.moves(e0);
    let mut best: (f64, Option<ScheduleStep>, usize) = (f64::INFINITY, None, 0);
    for mv in &first_moves {
        let next = value[1][mv.target];
        if !next.is_finite() {
            continue;
        }
        if let Some(st) = lat.stage(0, e0, mv, scenario.record(0)) {
            let v = st.cost() + next;
            if v < best.0 {
                best = (v, Some(st), mv.target);
            }
        }
    }
    let (_, first, mut k) = best;
    steps.push(first.ok_or(BaselineError::NoFeasibleAction { step: 0 })?);
    for (t, row) in choice.iter().enumerate().skip(1) {
        let mv = row[k].ok_or(BaselineError::NoFeasibleAction { step: t })?;
        let st = lat
            .stage(t, lat.levels[k], &mv, scenario.record(t))
            .ok_or(BaselineError::NoFeasibleAction { step: t })?;
        steps.push(st);
        k = mv.target;
    }
    Ok(Schedule::from_steps(steps))
}

/// Exhaustive search over every action sequence of the lattice; the
/// verification oracle for [`dp_optimal`] on tiny instances.
pub fn enumerate_optimal(
    scenario: &Scenario,
    battery: &BatteryParams,
    grid: &GridParams,
    cfg: &DpConfig,
    e0: f64,
) -> Result<Schedule, BaselineError> {
    check_inputs(scenario, battery, grid, cfg, e0)?;
    let per_step = ((2 * cfg.power_levels - 1) * cfg.grid_fractions.len()) as u64;
    let t_len = scenario.len() as u32;
    let total = per_step.checked_pow(t_len).filter(|&c| c <= ENUMERATION_LIMIT);
    if total.is_none() {
        return Err(BaselineError::TooLarge {
            per_step,
            steps: scenario.len(),
        });
    }
    let lat = Lattice::new(battery, grid, cfg, scenario.dt_hours());
    let mut path = Vec::with_capacity(scenario.len());
    let mut best: Option<(f64, Vec<ScheduleStep>)> = None;
    search(&lat, scenario, e0, &mut path, &mut best);
    let (_, steps) = best.ok_or(BaselineError::NoFeasibleAction { step: 0 })?;
    Ok(Schedule::from_steps(steps))
}

fn search(
    lat: &Lattice,
    scenario: &Scenario,
    e: f64,
    path: &mut Vec<ScheduleStep>,
    best: &mut Option<(f64, Vec<ScheduleStep>)>,
) {
    let t = path.len();
    if t == scenario.len() {
        // accumulate from the last stage backward, as the recursion does
        let total = path.iter().rev().fold(0.0, |acc, s| s.cost() + acc);
        if best.as_ref().map_or(true, |(b, _)| total < *b) {
            *best = Some((total, path.clone()));
        }
        return;
    }
    for mv in lat.moves(e) {
        if let Some(st) = lat.stage(t, e, &mv, scenario.record(t)) {
            path.push(st);
            search(lat, scenario, lat.levels[mv.target], path, best);
            path.pop();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forecast {
    /// The actual future records.
    Perfect,
    /// The current record repeated over the horizon.
    Persistence,
}

/// Re-solves an `horizon`-step lookahead at every step from the forecast
/// and applies only the first action.
pub fn receding_horizon(
    scenario: &Scenario,
    battery: &BatteryParams,
    grid: &GridParams,
    cfg: &DpConfig,
    e0: f64,
    horizon: usize,
    forecast: Forecast,
) -> Result<Schedule, BaselineError> {
    if horizon == 0 {
        return Err(BaselineError::Config("horizon must be >= 1".into()));
    }
    check_inputs(scenario, battery, grid, cfg, e0)?;
    let mut e = e0;
    let mut steps = Vec::with_capacity(scenario.len());
    for t in 0..scenario.len() {
        let h = horizon.min(scenario.len() - t);
        let sub = match forecast {
            Forecast::Perfect => scenario.window(t, h)?,
            Forecast::Persistence => {
                let rec = *scenario.record(t);
                let recs = (0..h).map(|i| ExogenousRecord { index: i, ..rec }).collect();
                Scenario::new(recs, scenario.dt_hours(), scenario.label())?
            }
        };
        let plan = dp_optimal(&sub, battery, grid, cfg, e)?;
        let mut first = plan.steps[0];
        first.index = t;
        e = first.energy_after;
        steps.push(first);
    }
    Ok(Schedule::from_steps(steps))
}

//! Routing of a battery decision into directed power flows, per-step energy
//! cost, and grid-capacity violation.
//!
//! The no-simultaneous-charge/discharge and no-simultaneous-buy/sell binaries
//! of the mixed-integer model are not represented as variables: every
//! [`FlowSet`] produced by [`decompose`] satisfies both complementarity
//! conditions structurally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{feasible_power_bounds, BatteryParams, BatteryState};
use crate::timeseries::{net_load, ExogenousRecord};

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("grid fraction {0} is not in [0, 1]")]
    BadGridFraction(f64),
    #[error("non-finite input to decompose: {0}")]
    NonFinite(&'static str),
    #[error("invalid grid parameters: {0}")]
    InvalidGrid(String),
}

/// Import and export capacity at the point of connection, kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    pub g_max_import: f64,
    pub g_max_export: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            g_max_import: 300.0,
            g_max_export: 300.0,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<(), DispatchError> {
        if !(self.g_max_import.is_finite() && self.g_max_import > 0.0)
            || !(self.g_max_export.is_finite() && self.g_max_export > 0.0)
        {
            return Err(DispatchError::InvalidGrid(
                "import and export caps must be finite and > 0".into(),
            ));
        }
        Ok(())
    }
}

/// The directed flows of one step, all in kW and all nonnegative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSet {
    pub p_g2h: f64,
    pub p_b2h: f64,
    pub p_pv2g: f64,
    pub p_pv2b: f64,
    pub p_b2g: f64,
    pub p_g2b: f64,
    pub p_curtail: f64,
}

impl FlowSet {
    pub fn import(&self) -> f64 {
        self.p_g2h + self.p_g2b
    }

    pub fn export(&self) -> f64 {
        self.p_b2g + self.p_pv2g
    }

    pub fn charge(&self) -> f64 {
        self.p_pv2b + self.p_g2b
    }

    pub fn discharge(&self) -> f64 {
        self.p_b2h + self.p_b2g
    }

    /// Zero whenever the battery is not charging and discharging at once.
    pub fn charge_complementarity(&self) -> f64 {
        self.charge() * self.discharge()
    }

    /// Zero whenever the home bus is not buying and selling at once.
    pub fn bus_complementarity(&self) -> f64 {
        (self.p_g2h + self.p_b2h) * (self.p_pv2g + self.p_pv2b + self.p_curtail)
    }
}

/// Result of routing one battery decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub flows: FlowSet,
    /// Realized charge power after clamping, kW.
    pub p_ch: f64,
    /// Realized discharge power after clamping, kW.
    pub p_disch: f64,
}

/// Routes a signed battery power (`+` charge, `-` discharge) and a grid
/// fraction into the seven directed flows.
///
/// `bounds` is `(max_charge, max_discharge)` from
/// [`feasible_power_bounds`]. The share `a_grid` of the battery power is
/// exchanged with the grid and the rest with the home bus; whatever the bus
/// cannot absorb is rerouted to the grid so that the realized charge and
/// discharge still equal the sum of their flows. Battery exports claim the
/// export headroom before PV does; PV beyond the headroom is curtailed.
pub fn decompose(
    p_net_batt: f64,
    a_grid: f64,
    net_load: f64,
    bounds: (f64, f64),
    grid: &GridParams,
) -> Result<Decomposition, DispatchError> {
    if !(0.0..=1.0).contains(&a_grid) {
        return Err(DispatchError::BadGridFraction(a_grid));
    }
    if !p_net_batt.is_finite() {
        return Err(DispatchError::NonFinite("p_net_batt"));
    }
    if !net_load.is_finite() {
        return Err(DispatchError::NonFinite("net_load"));
    }
    let (max_charge, max_discharge) = (bounds.0.max(0.0), bounds.1.max(0.0));

    let surplus = (-net_load).max(0.0);
    let deficit = net_load.max(0.0);
    let mut f = FlowSet::default();
    let (mut p_ch, mut p_disch) = (0.0, 0.0);

    if p_net_batt > 0.0 {
        p_ch = p_net_batt.min(max_charge);
        let from_bus = (1.0 - a_grid) * p_ch;
        f.p_pv2b = from_bus.min(surplus);
        f.p_g2b = p_ch - f.p_pv2b;
    } else if p_net_batt < 0.0 {
        p_disch = (-p_net_batt).min(max_discharge);
        let to_bus = (1.0 - a_grid) * p_disch;
        f.p_b2h = to_bus.min(deficit);
        f.p_b2g = p_disch - f.p_b2h;
    }

    f.p_g2h = deficit - f.p_b2h;
    let pv_left = surplus - f.p_pv2b;
    let headroom = (grid.g_max_export - f.p_b2g).max(0.0);
    f.p_pv2g = pv_left.min(headroom);
    f.p_curtail = pv_left - f.p_pv2g;

    Ok(Decomposition {
        flows: f,
        p_ch,
        p_disch,
    })
}

/// Purchases minus export revenue for one step, $.
pub fn energy_cost(flows: &FlowSet, price_buy: f64, price_sell: f64, dt_hours: f64) -> f64 {
    flows.import() * price_buy * dt_hours - flows.export() * price_sell * dt_hours
}

/// Total kW by which import and export exceed their caps; zero when feasible.
pub fn grid_violation(flows: &FlowSet, grid: &GridParams) -> f64 {
    (flows.import() - grid.g_max_import).max(0.0) + (flows.export() - grid.g_max_export).max(0.0)
}

/// Self-consumption rule: store PV surplus, cover home deficit, never trade
/// with the grid. Returns `(p_net_batt, a_grid)`.
pub fn greedy_dispatch(
    state: BatteryState,
    record: &ExogenousRecord,
    params: &BatteryParams,
    dt_hours: f64,
) -> (f64, f64) {
    let (max_charge, max_discharge) = feasible_power_bounds(state, params, dt_hours);
    let net = net_load(record);
    if net < 0.0 {
        ((-net).min(max_charge), 0.0)
    } else if net > 0.0 {
        (-net.min(max_discharge), 0.0)
    } else {
        (0.0, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const AMPLE: (f64, f64) = (1e6, 1e6);

    fn grid() -> GridParams {
        GridParams::default()
    }

    #[test]
    fn charge_example() {
        let d = decompose(125.0, 0.2, -100.0, AMPLE, &grid()).unwrap();
        assert_eq!(d.p_ch, 125.0);
        assert!((d.flows.p_g2b - 25.0).abs() < 1e-12);
        assert!((d.flows.p_pv2b - 100.0).abs() < 1e-12);
        assert!(d.flows.p_pv2g.abs() < 1e-12);
        assert!(d.flows.p_curtail.abs() < 1e-12);
    }

    #[test]
    fn discharge_example() {
        let d = decompose(-100.0, 0.3, 80.0, AMPLE, &grid()).unwrap();
        assert_eq!(d.p_disch, 100.0);
        assert!((d.flows.p_b2g - 30.0).abs() < 1e-12);
        assert!((d.flows.p_b2h - 70.0).abs() < 1e-12);
        assert!((d.flows.p_g2h - 10.0).abs() < 1e-12);
    }

    #[test]
    fn null_action_balanced_bus() {
        let d = decompose(0.0, 0.0, 0.0, AMPLE, &grid()).unwrap();
        assert_eq!(d.flows, FlowSet::default());
        assert_eq!((d.p_ch, d.p_disch), (0.0, 0.0));
    }

    #[test]
    fn shortfall_reroutes_and_clamps() {
        // no surplus: the PV share of the charge comes from the grid
        let d = decompose(100.0, 0.0, 20.0, (60.0, 0.0), &grid()).unwrap();
        assert_eq!(d.p_ch, 60.0);
        assert_eq!(d.flows.p_g2b, 60.0);
        assert_eq!(d.flows.p_g2h, 20.0);
        // export cap shared: battery first, then PV, rest curtailed
        let g = GridParams {
            g_max_import: 300.0,
            g_max_export: 50.0,
        };
        let d = decompose(-40.0, 1.0, -30.0, AMPLE, &g).unwrap();
        assert_eq!(d.flows.p_b2g, 40.0);
        assert_eq!(d.flows.p_pv2g, 10.0);
        assert_eq!(d.flows.p_curtail, 20.0);
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(decompose(1.0, f64::NAN, 0.0, AMPLE, &grid()).is_err());
        assert!(decompose(1.0, 1.5, 0.0, AMPLE, &grid()).is_err());
        assert!(decompose(1.0, -0.1, 0.0, AMPLE, &grid()).is_err());
    }

    #[test]
    fn cost_examples() {
        let f = FlowSet {
            p_g2h: 10.0,
            p_g2b: 25.0,
            p_b2g: 30.0,
            ..FlowSet::default()
        };
        assert!((energy_cost(&f, 0.30, 0.10, 1.0) - 7.5).abs() < 1e-12);
        assert_eq!(energy_cost(&FlowSet::default(), 0.3, 0.1, 1.0), 0.0);
        let exp = FlowSet {
            p_pv2g: 100.0,
            ..FlowSet::default()
        };
        assert!((energy_cost(&exp, 0.3, 0.10, 1.0) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn violation_examples() {
        let g = GridParams {
            g_max_import: 300.0,
            g_max_export: 300.0,
        };
        let ok = FlowSet {
            p_g2h: 10.0,
            p_g2b: 25.0,
            ..FlowSet::default()
        };
        assert_eq!(grid_violation(&ok, &g), 0.0);
        let over = FlowSet {
            p_g2h: 50.0,
            p_g2b: 400.0,
            ..FlowSet::default()
        };
        assert_eq!(grid_violation(&over, &g), 150.0);
        let one_sided = FlowSet {
            p_g2h: 350.0,
            ..FlowSet::default()
        };
        assert_eq!(grid_violation(&one_sided, &g), 50.0);
    }

    fn record(p_home: f64, p_pvgen: f64) -> ExogenousRecord {
        ExogenousRecord {
            index: 0,
            p_home,
            p_pvgen,
            price_buy: 0.2,
            price_sell: 0.05,
        }
    }

    #[test]
    fn greedy_examples() {
        let p = BatteryParams::default();
        let s = BatteryState { energy: 250.0 };
        assert_eq!(greedy_dispatch(s, &record(0.0, 100.0), &p, 1.0), (100.0, 0.0));
        // max discharge of 30 kW: energy just above e_min
        let low = BatteryState {
            energy: p.e_min + 30.0 / p.eta_disch,
        };
        let (pn, ag) = greedy_dispatch(low, &record(80.0, 0.0), &p, 1.0);
        assert!((pn + 30.0).abs() < 1e-9);
        assert_eq!(ag, 0.0);
        assert_eq!(greedy_dispatch(s, &record(10.0, 10.0), &p, 1.0), (0.0, 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn decompose_invariants(
            p_net in -400.0f64..400.0, a in 0.0f64..=1.0, net in -300.0f64..300.0,
            mc in 0.0f64..300.0, md in 0.0f64..300.0,
            gi in 1.0f64..400.0, ge in 1.0f64..400.0,
        ) {
            let g = GridParams { g_max_import: gi, g_max_export: ge };
            let d = decompose(p_net, a, net, (mc, md), &g).unwrap();
            let f = d.flows;
            for v in [f.p_g2h, f.p_b2h, f.p_pv2g, f.p_pv2b, f.p_b2g, f.p_g2b, f.p_curtail] {
                prop_assert!(v >= 0.0);
            }
            prop_assert!((d.p_ch - f.charge()).abs() <= 1e-9);
            prop_assert!((d.p_disch - f.discharge()).abs() <= 1e-9);
            prop_assert!((f.p_g2h + f.p_b2h - net.max(0.0)).abs() <= 1e-9);
            prop_assert!((f.p_pv2b + f.p_pv2g + f.p_curtail - (-net).max(0.0)).abs() <= 1e-9);
            prop_assert_eq!(f.charge_complementarity(), 0.0);
            prop_assert_eq!(f.bus_complementarity(), 0.0);
            prop_assert!(d.p_ch <= p_net.max(0.0) && d.p_disch <= (-p_net).max(0.0));
        }

        #[test]
        fn cost_monotone(base in 0.0f64..100.0, extra in 0.0f64..100.0, buy in 0.0f64..1.0, sell in 0.0f64..1.0) {
            let f = FlowSet { p_g2h: base, p_pv2g: base, ..FlowSet::default() };
            let more_import = FlowSet { p_g2h: base + extra, ..f };
            let more_export = FlowSet { p_pv2g: base + extra, ..f };
            prop_assert!(energy_cost(&more_import, buy, sell, 1.0) >= energy_cost(&f, buy, sell, 1.0));
            prop_assert!(energy_cost(&more_export, buy, sell, 1.0) <= energy_cost(&f, buy, sell, 1.0));
        }

        #[test]
        fn greedy_never_violates_with_ample_grid(seed in 0u64..50) {
            use crate::battery::step_energy;
            use crate::timeseries::{synth_scenario, SynthParams};
            let s = synth_scenario(&SynthParams { seed, days: 3, ..SynthParams::default() }).unwrap();
            let cap = s.max_abs_net_load();
            let g = GridParams { g_max_import: cap, g_max_export: cap };
            let p = BatteryParams::default();
            let mut st = BatteryState { energy: p.mid_energy() };
            for r in s.records() {
                let (pn, a) = greedy_dispatch(st, r, &p, 1.0);
                let b = feasible_power_bounds(st, &p, 1.0);
                let d = decompose(pn, a, net_load(r), b, &g).unwrap();
                prop_assert_eq!(grid_violation(&d.flows, &g), 0.0);
                st = step_energy(st, d.p_ch, d.p_disch, &p, 1.0).unwrap();
            }
        }
    }
}

//! Model-based comparators: perfect-foresight dynamic programming over a
//! discretized energy lattice, a receding-horizon controller built on it,
//! and an exhaustive oracle for tiny instances.

mod dp;
mod schedule;

pub use dp::{dp_optimal, enumerate_optimal, receding_horizon, DpConfig, Forecast, ENUMERATION_LIMIT};
pub use schedule::{Schedule, ScheduleStep, SCHEDULE_CSV_HEADER};

use thiserror::Error;

use crate::battery::BatteryError;
use crate::dispatch::DispatchError;
use crate::timeseries::ScenarioError;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario is empty")]
    EmptyScenario,
    #[error("no feasible action at step {step}")]
    NoFeasibleAction { step: usize },
    #[error("instance too large to enumerate: {per_step} actions per step over {steps} steps")]
    TooLarge { per_step: u64, steps: usize },
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::{BatteryParams, BatteryState};
    use crate::dispatch::{greedy_dispatch, GridParams};
    use crate::env::{EnvSpec, RewardConfig};
    use crate::timeseries::{synth_scenario, ExogenousRecord, Scenario, SynthParams};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn scenario(load: &[f64], pv: &[f64], buy: &[f64], sell: &[f64]) -> Scenario {
        let recs = (0..load.len())
            .map(|i| ExogenousRecord {
                index: i,
                p_home: load[i],
                p_pvgen: pv[i],
                price_buy: buy[i],
                price_sell: sell[i],
            })
            .collect();
        Scenario::new(recs, 1.0, "t").unwrap()
    }

    fn small_battery() -> BatteryParams {
        BatteryParams {
            e_cap: 10.0,
            e_min: 0.0,
            e_max: 10.0,
            p_ch_max: 10.0,
            p_disch_max: 10.0,
            eta_ch: 1.0,
            eta_disch: 1.0,
            l_cyc: 5000.0,
            kappa_batt: 0.0,
        }
    }

    fn arbitrage() -> Scenario {
        scenario(&[0.0, 10.0], &[0.0, 0.0], &[0.1, 0.5], &[0.0, 0.0])
    }

    fn three_levels() -> DpConfig {
        DpConfig {
            soc_levels: 3,
            power_levels: 3,
            ..DpConfig::default()
        }
    }

    fn check_schedule(s: &Schedule, sc: &Scenario, b: &BatteryParams) {
        let mut e_prev: Option<f64> = None;
        for st in &s.steps {
            let f = &st.flows;
            let rec = sc.record(st.index);
            let net = rec.p_home - rec.p_pvgen;
            assert!((f.p_g2h + f.p_b2h - net.max(0.0)).abs() < 1e-9);
            assert!((f.p_pv2g + f.p_pv2b + f.p_curtail - (-net).max(0.0)).abs() < 1e-9);
            assert!((f.p_pv2b + f.p_g2b - st.p_ch).abs() < 1e-9);
            assert!((f.p_b2h + f.p_b2g - st.p_disch).abs() < 1e-9);
            assert!(st.p_ch * st.p_disch == 0.0);
            assert_eq!(st.violation_kw, 0.0);
            assert!(b.contains(st.energy_after));
            let de = st.p_ch * b.eta_ch - st.p_disch / b.eta_disch;
            assert!((st.energy_before + de * sc.dt_hours() - st.energy_after).abs() < 1e-6);
            if let Some(p) = e_prev {
                assert_eq!(p, st.energy_before);
            }
            e_prev = Some(st.energy_after);
        }
        let sum: f64 = s.steps.iter().map(|x| x.cost()).sum();
        assert!((sum - s.total_cost).abs() <= 1e-6 * sum.abs().max(1.0));
        assert_eq!(s.total_violation, 0.0);
    }

    #[test]
    fn arbitrage_instance_costs_one_dollar() {
        let sc = arbitrage();
        let b = small_battery();
        let g = GridParams::default();
        for cfg in [three_levels(), DpConfig::default()] {
            let dp = dp_optimal(&sc, &b, &g, &cfg, 0.0).unwrap();
            assert!((dp.total_cost - 1.0).abs() < 1e-12, "{}", dp.total_cost);
            assert_eq!(dp.steps[0].p_ch, 10.0);
            assert_eq!(dp.steps[1].p_disch, 10.0);
            check_schedule(&dp, &sc, &b);
        }
        let en = enumerate_optimal(&sc, &b, &g, &three_levels(), 0.0).unwrap();
        assert!((en.total_cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_prices_cost_nothing() {
        let sc = scenario(&[5.0, 3.0, 8.0], &[0.0, 6.0, 1.0], &[0.0; 3], &[0.0; 3]);
        let dp = dp_optimal(&sc, &small_battery(), &GridParams::default(), &DpConfig::default(), 5.0).unwrap();
        assert_eq!(dp.total_cost, 0.0);
    }

    #[test]
    fn single_step_empty_battery_buys_load() {
        let sc = scenario(&[7.0], &[0.0], &[0.3], &[0.05]);
        let b = small_battery();
        let dp = dp_optimal(&sc, &b, &GridParams::default(), &DpConfig::default(), 0.0).unwrap();
        assert!((dp.total_cost - 7.0 * 0.3).abs() < 1e-12);
        let en = enumerate_optimal(&sc, &b, &GridParams::default(), &three_levels(), 0.0).unwrap();
        assert!((en.total_cost - 7.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn enumeration_refuses_large_instances() {
        let sc = scenario(&[1.0; 12], &[0.0; 12], &[0.1; 12], &[0.0; 12]);
        let r = enumerate_optimal(&sc, &small_battery(), &GridParams::default(), &DpConfig::default(), 0.0);
        assert!(matches!(r, Err(BaselineError::TooLarge { .. })));
    }

    #[test]
    fn infeasible_config_rejected() {
        let cfg = DpConfig {
            soc_levels: 1,
            ..DpConfig::default()
        };
        let r = dp_optimal(&arbitrage(), &small_battery(), &GridParams::default(), &cfg, 0.0);
        assert!(matches!(r, Err(BaselineError::Config(_))));
    }

    fn synth(days: usize, seed: u64) -> Scenario {
        synth_scenario(&SynthParams {
            days,
            seed,
            ..SynthParams::default()
        })
        .unwrap()
    }

    #[test]
    fn full_horizon_perfect_matches_dp() {
        let sc = synth(1, 3);
        let b = BatteryParams::default();
        let g = GridParams::default();
        let cfg = DpConfig {
            soc_levels: 41,
            power_levels: 11,
            ..DpConfig::default()
        };
        let dp = dp_optimal(&sc, &b, &g, &cfg, b.mid_energy()).unwrap();
        let rh = receding_horizon(&sc, &b, &g, &cfg, b.mid_energy(), sc.len(), Forecast::Perfect).unwrap();
        assert!((dp.total_cost - rh.total_cost).abs() <= 1e-9 * dp.total_cost.abs().max(1.0));
        check_schedule(&rh, &sc, &b);
    }

    #[test]
    fn one_step_horizon_flat_prices_stays_idle() {
        let n = 6;
        let sc = scenario(&[40.0; 6], &[0.0, 10.0, 60.0, 80.0, 20.0, 0.0], &[0.25; 6], &[0.1; 6]);
        let b = BatteryParams::default();
        let rh = receding_horizon(&sc, &b, &GridParams::default(), &DpConfig::default(), b.e_min, 1, Forecast::Perfect)
            .unwrap();
        assert_eq!(rh.len(), n);
        assert!(rh.steps.iter().all(|s| s.p_ch == 0.0 && s.p_disch == 0.0));
    }

    #[test]
    fn forecast_information_helps() {
        let b = BatteryParams::default();
        let g = GridParams::default();
        let cfg = DpConfig {
            soc_levels: 51,
            power_levels: 11,
            ..DpConfig::default()
        };
        for seed in [1, 2] {
            let sc = synth(2, seed);
            let perfect = receding_horizon(&sc, &b, &g, &cfg, b.mid_energy(), 24, Forecast::Perfect).unwrap();
            let persist = receding_horizon(&sc, &b, &g, &cfg, b.mid_energy(), 24, Forecast::Persistence).unwrap();
            assert!(persist.total_cost >= perfect.total_cost, "seed {seed}");
            check_schedule(&persist, &sc, &b);
        }
    }

    #[test]
    fn refinement_does_not_increase_cost() {
        let sc = synth(2, 5);
        let b = BatteryParams::default();
        let g = GridParams::default();
        let base = DpConfig::default();
        let coarse = dp_optimal(&sc, &b, &g, &base, b.mid_energy()).unwrap();
        let fine = dp_optimal(&sc, &b, &g, &base.refined(), b.mid_energy()).unwrap();
        assert!(fine.total_cost <= coarse.total_cost + 1e-9, "{} > {}", fine.total_cost, coarse.total_cost);
        check_schedule(&coarse, &sc, &b);
    }

    #[test]
    fn dp_beats_greedy_and_replays_in_env() {
        let sc = Arc::new(synth(3, 8));
        let b = BatteryParams::default();
        let g = GridParams::default();
        let dp = dp_optimal(&sc, &b, &g, &DpConfig::default(), b.mid_energy()).unwrap();

        let spec = EnvSpec {
            scenario: sc.clone(),
            battery: b,
            grid: g,
            reward: RewardConfig::default(),
            time_features: true,
        };
        let mut env = spec.build();
        env.reset(0, b.mid_energy()).unwrap();
        let mut replay = 0.0;
        for st in &dp.steps {
            let o = env.step_power(st.p_net(), st.a_grid).unwrap();
            replay += o.info.energy_cost + o.info.degradation_cost;
            assert_eq!(o.info.violation_kw, 0.0);
        }
        assert!((replay - dp.total_cost).abs() < 1e-6 * dp.total_cost.abs().max(1.0));

        env.reset(0, b.mid_energy()).unwrap();
        let mut greedy = 0.0;
        for t in 0..sc.len() {
            let state = BatteryState { energy: env.energy().unwrap() };
            let (p, a) = greedy_dispatch(state, sc.record(t), &b, sc.dt_hours());
            let o = env.step_power(p, a).unwrap();
            greedy += o.info.energy_cost + o.info.degradation_cost;
        }
        assert!(dp.total_cost <= greedy, "dp {} greedy {}", dp.total_cost, greedy);
    }

    #[test]
    fn schedule_csv_shape() {
        let dp = dp_optimal(&arbitrage(), &small_battery(), &GridParams::default(), &three_levels(), 0.0).unwrap();
        let mut buf = Vec::new();
        dp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SCHEDULE_CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(',').count() == 11));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dp_equals_enumeration(
            t_len in 1usize..=4,
            loads in prop::collection::vec(0.0f64..12.0, 4),
            pvs in prop::collection::vec(0.0f64..12.0, 4),
            buys in prop::collection::vec(0.05f64..0.6, 4),
            sells in prop::collection::vec(0.0f64..0.05, 4),
            e0_level in 0usize..3,
            kappa in 0.0f64..2000.0,
        ) {
            let sc = scenario(&loads[..t_len], &pvs[..t_len], &buys[..t_len], &sells[..t_len]);
            let b = BatteryParams { eta_ch: 0.9, eta_disch: 0.9, kappa_batt: kappa, ..small_battery() };
            let g = GridParams { g_max_import: 15.0, g_max_export: 8.0 };
            let cfg = three_levels();
            let e0 = [0.0, 5.0, 10.0][e0_level];
            let dp = dp_optimal(&sc, &b, &g, &cfg, e0).unwrap();
            let en = enumerate_optimal(&sc, &b, &g, &cfg, e0).unwrap();
            prop_assert_eq!(dp.total_cost, en.total_cost);
        }
    }
}

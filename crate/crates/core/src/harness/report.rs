use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::StepInfo;
use crate::timeseries::Scenario;

pub const TRACE_CSV_HEADER: &str = "index,hour,energy_before,energy_after,soc,p_ch,p_disch,a_grid,\
p_g2h,p_b2h,p_pv2g,p_pv2b,p_b2g,p_g2b,p_curtail,net_load,p_home,p_pvgen,price_buy,price_sell,\
energy_cost,degradation_cost,violation_kw,reward";

/// One evaluated step with its exogenous inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub info: StepInfo,
    pub hour: f64,
    pub soc: f64,
    pub p_home: f64,
    pub p_pvgen: f64,
    pub price_buy: f64,
    pub price_sell: f64,
    pub reward: f64,
}

/// Per-step record of one method on one scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn from_steps(scenario: &Scenario, e_cap: f64, steps: &[StepInfo], rewards: &[f64]) -> Self {
        let rows = steps
            .iter()
            .zip(rewards)
            .map(|(info, &reward)| {
                let rec = scenario.record(info.index);
                TraceRow {
                    info: *info,
                    hour: scenario.hour_of_day(info.index),
                    soc: info.energy_after / e_cap,
                    p_home: rec.p_home,
                    p_pvgen: rec.p_pvgen,
                    price_buy: rec.price_buy,
                    price_sell: rec.price_sell,
                    reward,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn total_cost(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.info.energy_cost + r.info.degradation_cost)
            .sum()
    }

    pub fn energy_cost(&self) -> f64 {
        self.rows.iter().map(|r| r.info.energy_cost).sum()
    }

    pub fn degradation_cost(&self) -> f64 {
        self.rows.iter().map(|r| r.info.degradation_cost).sum()
    }

    /// Steps with any limit breach; a double breach counts once.
    pub fn violation_count(&self) -> usize {
        self.rows.iter().filter(|r| r.info.violation_kw > 0.0).count()
    }

    pub fn total_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.reward).sum()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{TRACE_CSV_HEADER}")?;
        for r in &self.rows {
            let i = &r.info;
            let f = &i.flows;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                i.index,
                r.hour,
                i.energy_before,
                i.energy_after,
                r.soc,
                i.p_ch,
                i.p_disch,
                i.a_grid,
                f.p_g2h,
                f.p_b2h,
                f.p_pv2g,
                f.p_pv2b,
                f.p_b2g,
                f.p_g2b,
                f.p_curtail,
                i.net_load,
                r.p_home,
                r.p_pvgen,
                r.price_buy,
                r.price_sell,
                i.energy_cost,
                i.degradation_cost,
                i.violation_kw,
                r.reward
            )?;
        }
        Ok(())
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub total_cost: f64,
    pub energy_cost: f64,
    pub degradation_cost: f64,
    pub violation_count: f64,
    /// Mean reward per evaluation day.
    pub mean_episode_reward: f64,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    pub fn from_trace(method: &str, trace: &Trace, steps_per_day: usize, wall_clock_s: f64) -> Self {
        let days = (trace.rows.len() as f64 / steps_per_day.max(1) as f64).max(1.0);
        Self {
            method: method.to_string(),
            total_cost: trace.total_cost(),
            energy_cost: trace.energy_cost(),
            degradation_cost: trace.degradation_cost(),
            violation_count: trace.violation_count() as f64,
            mean_episode_reward: trace.total_reward() / days,
            wall_clock_s,
        }
    }

    /// Field-wise median over seeds (mean of the middle pair for even
    /// counts); wall-clock is summed.
    pub fn median(method: &str, rows: &[MetricsRow]) -> Self {
        let med = |f: fn(&MetricsRow) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n == 0 {
                f64::NAN
            } else if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        };
        Self {
            method: method.to_string(),
            total_cost: med(|r| r.total_cost),
            energy_cost: med(|r| r.energy_cost),
            degradation_cost: med(|r| r.degradation_cost),
            violation_count: med(|r| r.violation_count),
            mean_episode_reward: med(|r| r.mean_episode_reward),
            wall_clock_s: rows.iter().map(|r| r.wall_clock_s).sum(),
        }
    }
}

pub const REPORT_CSV_HEADER: &str =
    "method,total_cost,energy_cost,degradation_cost,violation_count,mean_episode_reward";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<MetricsRow>,
    /// Learned-agent rows per seed, named `<agent>_seed<seed>`.
    pub per_seed: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn row(&self, method: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// CSV without wall-clock so identical runs give identical bytes.
    pub fn write_csv(rows: &[MetricsRow], mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{REPORT_CSV_HEADER}")?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method, r.total_cost, r.energy_cost, r.degradation_cost, r.violation_count, r.mean_episode_reward
            )?;
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>12} {:>10} {:>14} {:>10}\n",
            "method", "cost ($)", "violations", "reward/day", "time (s)"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10} {:>12.2} {:>10} {:>14.3} {:>10.2}\n",
                r.method, r.total_cost, r.violation_count, r.mean_episode_reward, r.wall_clock_s
            ));
        }
        s
    }
}

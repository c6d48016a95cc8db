use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dispatch::FlowSet;

pub const SCHEDULE_CSV_HEADER: &str =
    "index,p_ch_kw,p_disch_kw,a_grid,p_g2h,p_b2h,p_pv2g,p_pv2b,p_b2g,p_g2b,cost_step";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub index: usize,
    pub p_ch: f64,
    pub p_disch: f64,
    pub a_grid: f64,
    pub flows: FlowSet,
    pub energy_before: f64,
    pub energy_after: f64,
    pub energy_cost: f64,
    pub degradation_cost: f64,
    pub violation_kw: f64,
}

impl ScheduleStep {
    pub fn cost(&self) -> f64 {
        self.energy_cost + self.degradation_cost
    }

    /// Signed battery set-point, positive when charging.
    pub fn p_net(&self) -> f64 {
        self.p_ch - self.p_disch
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: Vec<ScheduleStep>,
    pub total_cost: f64,
    pub total_violation: f64,
}

impl Schedule {
    pub fn from_steps(steps: Vec<ScheduleStep>) -> Self {
        // accumulated from the last step backward, matching the recursion
        let total_cost = steps.iter().rev().fold(0.0, |acc, s| s.cost() + acc);
        let total_violation = steps.iter().map(|s| s.violation_kw).sum();
        Self {
            steps,
            total_cost,
            total_violation,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{SCHEDULE_CSV_HEADER}")?;
        for s in &self.steps {
            let f = &s.flows;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.index,
                s.p_ch,
                s.p_disch,
                s.a_grid,
                f.p_g2h,
                f.p_b2h,
                f.p_pv2g,
                f.p_pv2b,
                f.p_b2g,
                f.p_g2b,
                s.cost()
            )?;
        }
        Ok(())
    }
}

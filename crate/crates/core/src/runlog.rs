//! Per-step progress log shared by every planner and baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::Evaluator;
use crate::fpfs::Plan;
use crate::traffic::Scenario;

/// A committed plan with the log of how it was built.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanRun {
    pub plan: Plan,
    pub log: RunLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLogRow {
    pub step: usize,
    pub delta_j: f64,
    pub cum_delta_j: f64,
    pub j_cap: u64,
    pub j_delay: u64,
    /// Regulation descriptor, or a short move description for flight-centric runs.
    pub regulation: String,
    /// Objective evaluations performed so far; a deterministic progress clock.
    pub evals: u64,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub algorithm: String,
    pub rows: Vec<RunLogRow>,
}

impl RunLog {
    pub fn new(algorithm: impl Into<String>) -> Self {
        RunLog { algorithm: algorithm.into(), rows: Vec::new() }
    }

    /// Appends a row; `step` and the cumulative column are filled in here.
    pub fn push(&mut self, delta_j: f64, j_cap: u64, j_delay: u64, regulation: impl Into<String>, evals: u64, elapsed_ms: u64) {
        let cum = self.total_delta_j() + delta_j;
        self.rows.push(RunLogRow {
            step: self.rows.len() + 1,
            delta_j,
            cum_delta_j: cum,
            j_cap,
            j_delay,
            regulation: regulation.into(),
            evals,
            elapsed_ms,
        });
    }

    pub fn total_delta_j(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_delta_j)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// One row per plan step, all stamped with the same clock readings.
    pub fn from_plan(algorithm: &str, scenario: &Scenario, plan: &Plan, evals: u64, elapsed_ms: u64) -> Self {
        let mut log = RunLog::new(algorithm);
        for (reg, step) in plan.regulations.iter().zip(&plan.steps) {
            log.push(step.delta_j, step.j_cap, step.j_delay, reg.describe(scenario), evals, elapsed_ms);
        }
        log
    }

    /// CSV text. Wall-clock times are left blank unless `timing` is set, so
    /// that seeded runs produce byte-identical logs.
    pub fn to_csv(&self, timing: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "delta_j", "cum_delta_j", "j_cap", "j_delay", "regulation", "evals", "elapsed_ms"])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.delta_j.to_string(),
                r.cum_delta_j.to_string(),
                r.j_cap.to_string(),
                r.j_delay.to_string(),
                r.regulation.clone(),
                r.evals.to_string(),
                if timing { r.elapsed_ms.to_string() } else { String::new() },
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path, timing: bool) -> Result<()> {
        std::fs::write(path, self.to_csv(timing)?)?;
        Ok(())
    }
}

/// Rebuilds the plan log by replaying its regulations from the baseline.
pub fn log_for_plan(ev: &Evaluator, algorithm: &str, plan: &Plan, elapsed_ms: u64) -> RunLog {
    RunLog::from_plan(algorithm, ev.scenario(), plan, ev.evaluations(), elapsed_ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_column_and_csv() {
        let mut log = RunLog::new("x");
        log.push(10.0, 5, 3, "A:1-2@3/h#4", 7, 120);
        log.push(-2.5, 5, 6, "B:1-2@3/h#4", 9, 130);
        assert_eq!(log.rows[1].cum_delta_j, 7.5);
        assert_eq!(log.total_delta_j(), 7.5);
        let csv = log.to_csv(false).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,delta_j,cum_delta_j,j_cap,j_delay,regulation,evals,elapsed_ms");
        assert_eq!(lines[1], "1,10,10,5,3,A:1-2@3/h#4,7,");
        assert_eq!(lines[2], "2,-2.5,7.5,5,6,B:1-2@3/h#4,9,");
        assert!(log.to_csv(true).unwrap().contains(",9,130"));
    }
}

//! Heuristic study: NomRel and InLoad of extracted flows against the excess
//! relief a regulation on the flow achieves at its best rate, found by brute
//! force over a rate grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{Evaluator, State};
use crate::flows::{extract_flows, ExtractionParams, Flow};
use crate::fpfs::Regulation;
use crate::heuristics::{hot_cells, score_flow};
use crate::traffic::Hotspot;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub hotspot: Hotspot,
    pub flow_id: usize,
    pub size: usize,
    pub nomrel: u64,
    pub inload: i64,
    pub priority: f64,
    pub best_rate: u32,
    pub delta_j: f64,
    /// Excess removed over the flow's hot cells at the best rate.
    pub scoped_relief: i64,
    /// Excess removed over the whole network at the best rate.
    pub network_relief: i64,
}

/// Rates tried per flow: every integer rate from 1 to `max_rate`.
pub fn rate_grid(max_rate: u32) -> Vec<u32> {
    (1..=max_rate.max(1)).collect()
}

/// Scores one flow and regulates it at the hotspot over every rate in
/// `rates`, keeping the rate with the largest ΔJ (lowest rate on ties).
pub fn study_flow(ev: &Evaluator, state: &State, flow: &Flow, rates: &[u32]) -> Result<StudyRow> {
    let s = ev.scenario();
    let caps = s.capacities();
    let score = score_flow(s, &state.delays, &state.demand, flow);
    let cells = hot_cells(flow, &state.demand, caps);
    let h = flow.hotspot;
    let mut best: Option<(f64, u32, State)> = None;
    for &rate in rates {
        let reg = Regulation::new(h.tv, h.t_start, h.t_end, rate, flow.members.iter().copied());
        let a = ev.apply(state, &reg)?;
        if best.as_ref().is_none_or(|b| a.delta.delta_j > b.0) {
            best = Some((a.delta.delta_j, rate, a.state));
        }
    }
    let (delta_j, best_rate, after) = best.ok_or_else(|| crate::Error::domain("empty rate grid"))?;
    let scoped_relief = cells
        .iter()
        .map(|&(tv, t)| state.demand.excess(tv, t) as i64 - after.demand.excess(tv, t) as i64)
        .sum();
    Ok(StudyRow {
        hotspot: h,
        flow_id: flow.id,
        size: flow.members.len(),
        nomrel: score.nomrel,
        inload: score.inload,
        priority: score.priority,
        best_rate,
        delta_j,
        scoped_relief,
        network_relief: state.objective.j_cap as i64 - after.objective.j_cap as i64,
    })
}

/// Study rows for every flow of every hotspot in `state`.
pub fn study_state(ev: &Evaluator, state: &State, extraction: &ExtractionParams, rates: &[u32], parallel: bool) -> Result<Vec<StudyRow>> {
    let s = ev.scenario();
    let flows: Vec<Flow> = state
        .hotspots()
        .iter()
        .flat_map(|h| extract_flows(s, &state.delays, h, extraction).flows)
        .collect();
    if parallel {
        flows.par_iter().map(|f| study_flow(ev, state, f, rates)).collect()
    } else {
        flows.iter().map(|f| study_flow(ev, state, f, rates)).collect()
    }
}

pub const STUDY_CSV_HEADER: [&str; 12] = [
    "scenario",
    "tv",
    "t_start",
    "t_end",
    "flow_id",
    "size",
    "nomrel",
    "inload",
    "priority",
    "best_rate",
    "scoped_relief",
    "network_relief",
];

impl StudyRow {
    pub fn csv_row(&self, scenario: &str, tv_name: &str) -> Vec<String> {
        vec![
            scenario.to_string(),
            tv_name.to_string(),
            self.hotspot.t_start.to_string(),
            self.hotspot.t_end.to_string(),
            self.flow_id.to_string(),
            self.size.to_string(),
            self.nomrel.to_string(),
            self.inload.to_string(),
            format!("{:.4}", self.priority),
            self.best_rate.to_string(),
            self.scoped_relief.to_string(),
            self.network_relief.to_string(),
        ]
    }
}

//! Request and response bodies. Times appear both as bins and as minutes
//! after midnight so clients never convert.

use std::collections::BTreeSet;

use dcbplan_core::eval::{DeltaJ, State};
use dcbplan_core::fpfs::{Regulation, StepRecord};
use dcbplan_core::heuristics::FlowScore;
use dcbplan_core::io::{PlanDoc, RegulationDoc};
use dcbplan_core::metrics::Report;
use dcbplan_core::traffic::{Hotspot, ObjectiveBreakdown, Scenario, VolumeId, Weights};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioView {
    pub session: String,
    pub num_flights: usize,
    pub volumes: Vec<String>,
    pub bin_width_min: u32,
    pub num_bins: usize,
    pub weights: Weights,
    pub version: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotspotView {
    pub id: String,
    pub tv: String,
    pub t_start: usize,
    pub t_end: usize,
    pub start_min: u32,
    pub end_min: u32,
    pub window: String,
    pub severity: u64,
}

pub fn hotspot_id(h: &Hotspot) -> String {
    format!("{}-{}-{}", h.tv.0, h.t_start, h.t_end)
}

pub fn parse_hotspot_id(id: &str) -> Option<Hotspot> {
    let mut it = id.split('-').map(|p| p.parse::<usize>().ok());
    let (tv, t_start, t_end) = (it.next()??, it.next()??, it.next()??);
    if it.next().is_some() {
        return None;
    }
    Some(Hotspot { tv: VolumeId(u32::try_from(tv).ok()?), t_start, t_end })
}

pub fn hotspot_view(scenario: &Scenario, state: &State, h: &Hotspot) -> HotspotView {
    let g = scenario.grid();
    let (start_min, end_min) = (g.bin_start_min(h.t_start), g.bin_start_min(h.t_end) + g.bin_width_min);
    HotspotView {
        id: hotspot_id(h),
        tv: scenario.volume_name(h.tv).to_string(),
        t_start: h.t_start,
        t_end: h.t_end,
        start_min,
        end_min,
        window: format!("{:02}:{:02}-{:02}:{:02}", start_min / 60, start_min % 60, end_min / 60, end_min % 60),
        severity: state.severity(h),
    }
}

/// Current hotspots, most severe first.
pub fn hotspot_board(scenario: &Scenario, state: &State) -> Vec<HotspotView> {
    let mut hs: Vec<HotspotView> = state.hotspots().iter().map(|h| hotspot_view(scenario, state, h)).collect();
    hs.sort_by(|a, b| b.severity.cmp(&a.severity).then_with(|| a.id.cmp(&b.id)));
    hs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyView {
    pub tv: String,
    pub bin_start_min: Vec<u32>,
    pub capacity: Vec<u32>,
    pub demand_before: Vec<u32>,
    pub excess_before: Vec<u32>,
    pub demand_after: Vec<u32>,
    pub excess_after: Vec<u32>,
}

pub fn occupancy(scenario: &Scenario, before: &State, after: &State, tv: VolumeId) -> OccupancyView {
    let g = scenario.grid();
    OccupancyView {
        tv: scenario.volume_name(tv).to_string(),
        bin_start_min: (0..g.num_bins).map(|b| g.bin_start_min(b)).collect(),
        capacity: scenario.capacities().row(tv).to_vec(),
        demand_before: before.demand.demand_row(tv).to_vec(),
        excess_before: before.demand.excess_row(tv).to_vec(),
        demand_after: after.demand.demand_row(tv).to_vec(),
        excess_after: after.demand.excess_row(tv).to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowView {
    pub flow_id: usize,
    pub rank: usize,
    pub members: Vec<String>,
    pub footprint: Vec<String>,
    pub nomrel: u64,
    pub inload: i64,
    pub priority: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowsView {
    pub hotspot: HotspotView,
    pub contributing: usize,
    pub flows: Vec<FlowView>,
}

pub fn flow_view(scenario: &Scenario, flow: &dcbplan_core::flows::Flow, score: &FlowScore, rank: usize) -> FlowView {
    FlowView {
        flow_id: flow.id,
        rank,
        members: flow.members.iter().map(|&f| scenario.flight(f).id.clone()).collect(),
        footprint: flow.footprint.iter().map(|&v| scenario.volume_name(v).to_string()).collect(),
        nomrel: score.nomrel,
        inload: score.inload,
        priority: score.priority,
    }
}

/// A regulation as submitted by a client; the window label is derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationInput {
    pub tv: String,
    pub t_start: usize,
    pub t_end: usize,
    pub rate_per_hour: u32,
    pub members: Vec<String>,
    #[serde(default)]
    pub anchor_margin_bins: u32,
}

impl RegulationInput {
    pub fn to_regulation(&self, scenario: &Scenario) -> ApiResult<Regulation> {
        let doc = RegulationDoc {
            tv: self.tv.clone(),
            t_start: self.t_start,
            t_end: self.t_end,
            window: String::new(),
            rate_per_hour: self.rate_per_hour,
            anchor_margin_bins: self.anchor_margin_bins,
            members: self.members.clone(),
        };
        doc.to_regulation(scenario).map_err(|e| ApiError::bad_request(e.to_string()))
    }

    pub fn from_regulation(scenario: &Scenario, reg: &Regulation) -> Self {
        let d = RegulationDoc::from_regulation(scenario, reg);
        RegulationInput {
            tv: d.tv,
            t_start: d.t_start,
            t_end: d.t_end,
            rate_per_hour: d.rate_per_hour,
            members: d.members,
            anchor_margin_bins: d.anchor_margin_bins,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub regulation: RegulationInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightDelay {
    pub flight: String,
    pub before_min: u32,
    pub after_min: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub version: u64,
    pub regulation: RegulationDoc,
    pub delta: DeltaJ,
    pub before: ObjectiveBreakdown,
    pub after: ObjectiveBreakdown,
    pub hotspots_added: Vec<HotspotView>,
    pub hotspots_removed: Vec<HotspotView>,
    /// Flights whose delay the regulation changes.
    pub delays: Vec<FlightDelay>,
}

pub fn evaluate_response(scenario: &Scenario, version: u64, reg: &Regulation, before: &State, after: &State) -> EvaluateResponse {
    let hb: BTreeSet<Hotspot> = before.hotspots().into_iter().collect();
    let ha: BTreeSet<Hotspot> = after.hotspots().into_iter().collect();
    EvaluateResponse {
        version,
        regulation: RegulationDoc::from_regulation(scenario, reg),
        delta: DeltaJ::between(&before.objective, &after.objective),
        before: before.objective,
        after: after.objective,
        hotspots_added: ha.difference(&hb).map(|h| hotspot_view(scenario, after, h)).collect(),
        hotspots_removed: hb.difference(&ha).map(|h| hotspot_view(scenario, before, h)).collect(),
        delays: before
            .delays
            .diff(&after.delays)
            .map(|(f, b, a)| FlightDelay { flight: scenario.flight(f).id.clone(), before_min: b, after_min: a })
            .collect(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommitRequest {
    pub regulation: RegulationInput,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UndoRequest {
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub version: u64,
    pub state_hash: String,
    pub regulations: usize,
    pub total_delta_j: f64,
    pub objective: ObjectiveBreakdown,
    pub hotspots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitResponse {
    pub step: StepRecord,
    pub summary: PlanSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UndoResponse {
    pub removed: RegulationDoc,
    pub summary: PlanSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SuggestRequest {
    pub sims: usize,
    pub depth: usize,
    pub k: usize,
    pub seed: u64,
    pub time_budget_ms: u64,
}

impl Default for SuggestRequest {
    fn default() -> Self {
        SuggestRequest { sims: 32, depth: 8, k: 5, seed: 0, time_budget_ms: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub hotspot: HotspotView,
    pub regulation: RegulationDoc,
    pub predicted_delta_j: f64,
    pub hotspot_prior: f64,
    pub prior: f64,
    pub visits: u64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub version: u64,
    pub simulations: usize,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanView {
    pub summary: PlanSummary,
    pub plan: PlanDoc,
    pub report: Report,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NewSessionRequest {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub flights_csv: Option<String>,
    #[serde(default)]
    pub capacities_csv: Option<String>,
    #[serde(default)]
    pub weights: Option<Weights>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session: String,
    pub num_flights: usize,
    pub num_volumes: usize,
}

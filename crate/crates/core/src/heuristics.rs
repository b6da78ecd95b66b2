//! NomRel / InLoad flow scoring and the ranking used to shortlist flows.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::flows::Flow;
use crate::traffic::{CapacityProfile, DelayVector, DemandGrid, Scenario, VolumeId};

/// Lower and upper edge of the NomRel plateau.
pub const NOMREL_BAND: (f64, f64) = (25.0, 60.0);
/// Weight on negative InLoad in the priority.
pub const INLOAD_WEIGHT: f64 = 0.5;

/// Rolling-hour demand attributed to a member set, per footprint volume.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowDemand {
    rows: BTreeMap<VolumeId, Vec<u32>>,
}

impl FlowDemand {
    pub fn compute(scenario: &Scenario, delays: &DelayVector, members: &[usize]) -> Self {
        let grid = scenario.grid();
        let nb = grid.num_bins;
        let mut entries: BTreeMap<VolumeId, Vec<u32>> = BTreeMap::new();
        for &f in members {
            let d = delays.get(f);
            for c in &scenario.flight(f).crossings {
                let row = entries.entry(c.tv).or_insert_with(|| vec![0; nb]);
                if let Some(b) = grid.bin_of_time(c.entry.shifted(d)) {
                    row[b] += 1;
                }
            }
        }
        let w = grid.rolling_window_bins;
        let rows = entries
            .into_iter()
            .map(|(tv, e)| {
                let rolling = (0..nb).map(|t| e[t..(t + w).min(nb)].iter().sum()).collect();
                (tv, rolling)
            })
            .collect();
        FlowDemand { rows }
    }

    pub fn get(&self, tv: VolumeId, bin: usize) -> u32 {
        self.rows.get(&tv).map_or(0, |r| r[bin])
    }

    pub fn row(&self, tv: VolumeId) -> Option<&[u32]> {
        self.rows.get(&tv).map(Vec::as_slice)
    }
}

/// Touched-window cells of the footprint where demand meets or exceeds capacity.
pub fn hot_cells(flow: &Flow, demand: &DemandGrid, capacities: &CapacityProfile) -> Vec<(VolumeId, usize)> {
    let mut out = Vec::new();
    for (&tv, &(lo, hi)) in &flow.touched_windows {
        for t in lo..=hi {
            if demand.demand(tv, t) >= capacities.get(tv, t) {
                out.push((tv, t));
            }
        }
    }
    out
}

/// Flow-attributed demand summed over the flow's hot cells.
pub fn nomrel(flow: &Flow, flow_demand: &FlowDemand, demand: &DemandGrid, capacities: &CapacityProfile) -> u64 {
    hot_cells(flow, demand, capacities)
        .into_iter()
        .map(|(tv, t)| flow_demand.get(tv, t) as u64)
        .sum()
}

/// Overflow-window load before and after pushing the flow's touched-window
/// contribution into the four bins that follow it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InLoad {
    pub before: u64,
    pub after: u64,
}

impl InLoad {
    /// `before - after`; never positive.
    pub fn value(&self) -> i64 {
        self.before as i64 - self.after as i64
    }
}

pub fn inload(flow: &Flow, flow_demand: &FlowDemand, demand: &DemandGrid, capacities: &CapacityProfile) -> InLoad {
    let nb = demand.num_bins();
    let mut out = InLoad::default();
    for (&tv, &(lo, hi)) in &flow.touched_windows {
        let over = (hi + 1)..(hi + 5).min(nb);
        if over.is_empty() {
            // nothing after the last bin of the day
            continue;
        }
        let d: i64 = over.clone().map(|t| demand.demand(tv, t) as i64).sum();
        let c: i64 = over.map(|t| capacities.get(tv, t) as i64).sum();
        let contrib: i64 = (lo..=hi).map(|t| flow_demand.get(tv, t) as i64).sum();
        out.before += (d - c).max(0) as u64;
        out.after += (d + contrib - c).max(0) as u64;
    }
    out
}

/// Plateau on the preferred NomRel band with linear tapers outside it.
pub fn nomrel_band(nomrel: u64) -> f64 {
    let (lo, hi) = NOMREL_BAND;
    let n = nomrel as f64;
    if n < lo {
        n
    } else if n <= hi {
        lo
    } else {
        (lo - 0.25 * (n - hi)).max(1.0)
    }
}

/// Ranking score of a flow. Member count enters only through NomRel, which
/// grows with flow size.
pub fn priority(nomrel: u64, inload: i64) -> f64 {
    nomrel_band(nomrel) + INLOAD_WEIGHT * inload.min(0) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowScore {
    pub nomrel: u64,
    pub inload: i64,
    pub priority: f64,
}

pub fn score_flow(scenario: &Scenario, delays: &DelayVector, demand: &DemandGrid, flow: &Flow) -> FlowScore {
    let caps = scenario.capacities();
    let fd = FlowDemand::compute(scenario, delays, &flow.members);
    let n = nomrel(flow, &fd, demand, caps);
    let il = inload(flow, &fd, demand, caps).value();
    FlowScore {
        nomrel: n,
        inload: il,
        priority: priority(n, il),
    }
}

/// Total order used to shortlist flows: positive NomRel first, then higher
/// priority, then lower flow id.
pub fn rank_cmp(a: (&FlowScore, usize), b: (&FlowScore, usize)) -> Ordering {
    (b.0.nomrel > 0)
        .cmp(&(a.0.nomrel > 0))
        .then_with(|| b.0.priority.total_cmp(&a.0.priority))
        .then_with(|| a.1.cmp(&b.1))
}

/// Indices of `flows` in ranking order.
pub fn rank_flows(flows: &[Flow], scores: &[FlowScore]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..flows.len()).collect();
    idx.sort_by(|&i, &j| rank_cmp((&scores[i], flows[i].id), (&scores[j], flows[j].id)));
    idx
}

//! Flow extraction: footprint-similarity graph over the flights feeding a
//! hotspot, clustered into communities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::community::{detect_communities, SimilarityGraph};
use crate::fpfs::{regulated_flights, Regulation};
use crate::traffic::{DelayVector, Hotspot, Scenario, VolumeId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub similarity_threshold: f64,
    pub resolution: f64,
    pub min_flights_per_flow: usize,
    pub seed: u64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            similarity_threshold: 0.72,
            resolution: 1.0,
            min_flights_per_flow: 2,
            seed: 0,
        }
    }
}

/// A community of flights feeding one hotspot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flow {
    pub id: usize,
    pub hotspot: Hotspot,
    pub members: Vec<usize>,
    pub footprint: Vec<VolumeId>,
    /// Per volume, the bins of the earliest and latest member entry.
    pub touched_windows: BTreeMap<VolumeId, (usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowExtraction {
    /// Flights entering the hotspot volume inside its effective window.
    pub contributing: Vec<usize>,
    /// Communities meeting the minimum size, as flows.
    pub flows: Vec<Flow>,
    /// Communities below the minimum size, kept for diagnostics.
    pub discarded: Vec<Vec<usize>>,
}

/// Jaccard similarity of two sorted volume sets; 0 when both are empty.
pub fn jaccard(a: &[VolumeId], b: &[VolumeId]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Binary graph over `flights` with an edge wherever footprint Jaccard
/// similarity reaches `threshold`. Vertex `i` is `flights[i]`.
pub fn build_graph(scenario: &Scenario, flights: &[usize], threshold: f64) -> SimilarityGraph {
    let mut g = SimilarityGraph::new(flights.len());
    for (i, &f) in flights.iter().enumerate() {
        for (j, &h) in flights.iter().enumerate().skip(i + 1) {
            if jaccard(scenario.footprint(f), scenario.footprint(h)) >= threshold {
                g.add_edge(i, j);
            }
        }
    }
    g
}

/// Union footprint and touched windows of a member set under `delays`.
pub fn footprint_and_windows(
    scenario: &Scenario,
    delays: &DelayVector,
    members: &[usize],
) -> (Vec<VolumeId>, BTreeMap<VolumeId, (usize, usize)>) {
    let grid = scenario.grid();
    let mut foot = BTreeSet::new();
    let mut windows: BTreeMap<VolumeId, (usize, usize)> = BTreeMap::new();
    for &f in members {
        foot.extend(scenario.footprint(f).iter().copied());
        let d = delays.get(f);
        for c in &scenario.flight(f).crossings {
            if let Some(b) = grid.bin_of_time(c.entry.shifted(d)) {
                windows
                    .entry(c.tv)
                    .and_modify(|w| {
                        w.0 = w.0.min(b);
                        w.1 = w.1.max(b);
                    })
                    .or_insert((b, b));
            }
        }
    }
    (foot.into_iter().collect(), windows)
}

/// Flights entering the hotspot volume inside its effective window under the
/// current delays, in queue order.
pub fn contributing_flights(scenario: &Scenario, delays: &DelayVector, hotspot: &Hotspot) -> Vec<usize> {
    let blanket = Regulation::new(
        hotspot.tv,
        hotspot.t_start,
        hotspot.t_end,
        1,
        scenario.entries_at(hotspot.tv).iter().map(|e| e.flight),
    );
    regulated_flights(scenario, delays, &blanket)
        .map(|q| q.into_iter().map(|m| m.flight).collect())
        .unwrap_or_default()
}

pub fn extract_flows(
    scenario: &Scenario,
    delays: &DelayVector,
    hotspot: &Hotspot,
    params: &ExtractionParams,
) -> FlowExtraction {
    let mut contributing = contributing_flights(scenario, delays, hotspot);
    contributing.sort_unstable();
    if contributing.is_empty() {
        return FlowExtraction::default();
    }
    let graph = build_graph(scenario, &contributing, params.similarity_threshold);
    let communities = detect_communities(&graph, params.resolution, params.seed);
    let mut flows = Vec::new();
    let mut discarded = Vec::new();
    for comm in communities {
        let members: Vec<usize> = comm.into_iter().map(|i| contributing[i]).collect();
        if members.len() < params.min_flights_per_flow.max(1) {
            discarded.push(members);
            continue;
        }
        let (footprint, touched_windows) = footprint_and_windows(scenario, delays, &members);
        flows.push(Flow {
            id: 0,
            hotspot: *hotspot,
            members,
            footprint,
            touched_windows,
        });
    }
    flows.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.members[0].cmp(&b.members[0])));
    for (i, f) in flows.iter_mut().enumerate() {
        f.id = i;
    }
    FlowExtraction { contributing, flows, discarded }
}

//! Regulation proposal engine: turns a hotspot into a handful of rate-tuned
//! regulations, each scored by exact objective improvement.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{DeltaJ, Evaluator, State};
use crate::flows::{extract_flows, ExtractionParams, Flow};
use crate::fpfs::{Regulation, EFFECTIVE_MARGIN_BINS};
use crate::heuristics::{rank_flows, score_flow, FlowDemand, FlowScore};
use crate::traffic::{Hotspot, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    pub k_top: usize,
    pub max_flows_in_regulation: usize,
    /// Multipliers applied to the initial rate.
    pub rate_factors: Vec<f64>,
    pub epsilon: f64,
    /// Largest number of top-ranked flows merged into one regulation.
    pub r_max: usize,
    pub extraction: ExtractionParams,
    /// Evaluate rate candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for ProposalParams {
    fn default() -> Self {
        ProposalParams {
            k_top: 6,
            max_flows_in_regulation: 5,
            rate_factors: vec![0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2],
            epsilon: 1e-6,
            r_max: 1,
            extraction: ExtractionParams::default(),
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub regulation: Regulation,
    pub predicted_delta_j: f64,
    pub delta: DeltaJ,
    /// Total plan delay after applying the regulation.
    pub total_delay: u64,
    pub flow_ids: Vec<usize>,
}

fn effective_window(scenario: &Scenario, h: &Hotspot) -> (usize, usize) {
    (h.t_start, scenario.grid().clip_end(h.t_end, EFFECTIVE_MARGIN_BINS))
}

/// Overload-weighted share of hotspot-volume demand carried by `members`.
pub fn demand_share(scenario: &Scenario, state: &State, h: &Hotspot, members: &[usize], epsilon: f64) -> f64 {
    let (lo, hi) = effective_window(scenario, h);
    let fd = FlowDemand::compute(scenario, &state.delays, members);
    let (mut num, mut den) = (0.0, 0.0);
    for t in lo..=hi {
        let w = state.demand.excess(h.tv, t) as f64 + epsilon;
        num += w * fd.get(h.tv, t) as f64;
        den += w * state.demand.demand(h.tv, t) as f64;
    }
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Members entering the hotspot volume inside the effective window, per hour.
pub fn hourly_flow_demand(scenario: &Scenario, state: &State, h: &Hotspot, members: &[usize]) -> f64 {
    let grid = scenario.grid();
    let (lo, hi) = effective_window(scenario, h);
    let count = members
        .iter()
        .filter_map(|&f| {
            let c = scenario.flight(f).crossing_at(h.tv)?;
            grid.bin_of_time(c.entry.shifted(state.delays.get(f)))
        })
        .filter(|b| (lo..=hi).contains(b))
        .count();
    let hours = (hi - lo + 1) as f64 * grid.bin_width_min as f64 / 60.0;
    count as f64 / hours
}

/// `round(min(C_min * share, hourly flow demand))`, at least 1.
pub fn init_rate(c_min: u32, share: f64, hourly_demand: f64) -> u32 {
    let tau = (c_min as f64 * share).min(hourly_demand).round();
    if tau < 1.0 {
        1
    } else {
        tau as u32
    }
}

/// Distinct candidate rates `round(tau0 * factor)`, each at least 1, ascending.
pub fn rate_grid(tau0: u32, factors: &[f64]) -> Vec<u32> {
    let mut rates: Vec<u32> = factors
        .iter()
        .map(|&g| ((tau0 as f64 * g).round() as u32).max(1))
        .collect();
    rates.sort_unstable();
    rates.dedup();
    rates
}

/// Eligible flows of a hotspot with their scores, in ranking order.
pub fn ranked_flows(ev: &Evaluator, state: &State, h: &Hotspot, params: &ProposalParams) -> Vec<(Flow, FlowScore)> {
    let scenario = ev.scenario();
    let extraction = extract_flows(scenario, &state.delays, h, &params.extraction);
    let scores: Vec<FlowScore> = extraction
        .flows
        .iter()
        .map(|f| score_flow(scenario, &state.delays, &state.demand, f))
        .collect();
    rank_flows(&extraction.flows, &scores)
        .into_iter()
        .map(|i| (extraction.flows[i].clone(), scores[i]))
        .collect()
}

fn proposal_cmp(a: &Proposal, b: &Proposal) -> Ordering {
    b.predicted_delta_j
        .total_cmp(&a.predicted_delta_j)
        .then(a.total_delay.cmp(&b.total_delay))
        .then_with(|| a.flow_ids.cmp(&b.flow_ids))
        .then(a.regulation.rate_per_hour.cmp(&b.regulation.rate_per_hour))
        .then_with(|| a.regulation.cmp(&b.regulation))
}

/// Candidate regulations for `h` from the current `state`, best first.
pub fn propose(ev: &Evaluator, state: &State, h: &Hotspot, params: &ProposalParams) -> Vec<Proposal> {
    let ranked = ranked_flows(ev, state, h, params);
    propose_from_flows(ev, state, h, &ranked, params)
}

pub fn propose_from_flows(
    ev: &Evaluator,
    state: &State,
    h: &Hotspot,
    ranked: &[(Flow, FlowScore)],
    params: &ProposalParams,
) -> Vec<Proposal> {
    let scenario = ev.scenario();
    let shortlist = &ranked[..ranked.len().min(params.max_flows_in_regulation)];
    if shortlist.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = effective_window(scenario, h);
    let c_min = scenario.capacities().window_min(h.tv, lo, hi);

    let mut candidates: Vec<(Regulation, Vec<usize>)> = Vec::new();
    for r in 1..=params.r_max.max(1).min(shortlist.len()) {
        let mut members: Vec<usize> = shortlist[..r].iter().flat_map(|(f, _)| f.members.iter().copied()).collect();
        members.sort_unstable();
        members.dedup();
        let flow_ids: Vec<usize> = shortlist[..r].iter().map(|(f, _)| f.id).collect();
        let share = demand_share(scenario, state, h, &members, params.epsilon);
        let tau0 = init_rate(c_min, share, hourly_flow_demand(scenario, state, h, &members));
        for rate in rate_grid(tau0, &params.rate_factors) {
            let reg = Regulation::new(h.tv, h.t_start, h.t_end, rate, members.iter().copied());
            candidates.push((reg, flow_ids.clone()));
        }
    }

    let evaluate = |(reg, flow_ids): &(Regulation, Vec<usize>)| -> Option<Proposal> {
        let applied = ev.apply(state, reg).ok()?;
        Some(Proposal {
            predicted_delta_j: applied.delta.delta_j,
            delta: applied.delta,
            total_delay: applied.state.delays.total(),
            regulation: reg.clone(),
            flow_ids: flow_ids.clone(),
        })
    };
    let mut proposals: Vec<Proposal> = if params.parallel {
        candidates.par_iter().filter_map(evaluate).collect()
    } else {
        candidates.iter().filter_map(evaluate).collect()
    };
    proposals.sort_by(proposal_cmp);
    proposals.truncate(params.k_top);
    proposals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{objective, CapacityProfile, Crossing, Flight, TimeGrid, TimeOfDay, VolumeId};

    #[test]
    fn init_rate_examples() {
        assert_eq!(init_rate(30, 1.0, 45.0), 30);
        assert_eq!(init_rate(30, 0.5, 20.0), 15);
        assert_eq!(init_rate(30, 0.0, 20.0), 1);
    }

    #[test]
    fn rate_grid_examples() {
        assert_eq!(rate_grid(20, &[0.9, 1.0, 1.1]), vec![18, 20, 22]);
        assert_eq!(rate_grid(1, &[0.6, 0.7, 1.0, 1.2]), vec![1]);
        assert_eq!(rate_grid(10, &ProposalParams::default().rate_factors), vec![6, 7, 8, 9, 10, 11, 12]);
    }

    /// Two bins of traffic at one volume with hand-set overloads.
    #[test]
    fn demand_share_weighted_ratio() {
        // effective window [0, 3]; overload only in bin 0 once capacities are set
        let mut flights = Vec::new();
        // flow members: 10 entries in bin 0.. spread so that D_0 = 20 (10 flow), D_1 = 20 (10 flow)
        for i in 0..10 {
            flights.push((format!("M{i:02}"), 16.0 + i as f64 * 0.5)); // bin 1
        }
        for i in 0..10 {
            flights.push((format!("O{i:02}"), 17.0 + i as f64 * 0.5)); // bin 1
        }
        let fl: Vec<Flight> = flights
            .iter()
            .map(|(id, t)| Flight {
                id: id.clone(),
                crossings: vec![Crossing { tv: VolumeId(0), entry: TimeOfDay::from_minutes(*t), exit: None }],
            })
            .collect();
        let mut caps = CapacityProfile::uniform(1, 96, 100);
        caps.set(VolumeId(0), 0, 15);
        let s = Scenario::new(TimeGrid::default(), vec!["A".into()], fl, caps).unwrap();
        let ev = Evaluator::with_defaults(&s);
        let st = ev.baseline();
        assert_eq!(st.demand.demand(VolumeId(0), 0), 20);
        assert_eq!(st.demand.demand(VolumeId(0), 1), 20);
        assert_eq!(st.demand.excess(VolumeId(0), 0), 5);
        let h = Hotspot { tv: VolumeId(0), t_start: 0, t_end: 0 };
        let p = demand_share(&s, &st, &h, &(0..10).collect::<Vec<_>>(), 1e-12);
        assert!((p - 0.5).abs() < 1e-9);
        assert_eq!(demand_share(&s, &st, &h, &(0..20).collect::<Vec<_>>(), 1e-6), 1.0);
        assert_eq!(demand_share(&s, &st, &h, &[], 1e-6), 0.0);
    }

    fn congested() -> Scenario {
        // two route families through volume H (index 0) around 10:00
        let mut flights = Vec::new();
        for i in 0..24 {
            let (route, off): (&[u32], f64) = if i % 2 == 0 { (&[1, 0, 2], 0.0) } else { (&[3, 0, 4], 1.0) };
            let t0 = 580.0 + i as f64 * 2.0 + off;
            flights.push(Flight {
                id: format!("F{i:02}"),
                crossings: route
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| Crossing { tv: VolumeId(v), entry: TimeOfDay::from_minutes(t0 + 20.0 * k as f64), exit: None })
                    .collect(),
            });
        }
        let mut caps = CapacityProfile::uniform(5, 96, 40);
        for t in 0..96 {
            caps.set(VolumeId(0), t, 12);
        }
        Scenario::new(TimeGrid::default(), (0..5).map(|i| format!("V{i}")).collect(), flights, caps).unwrap()
    }

    #[test]
    fn proposals_are_sorted_truncated_and_exact() {
        let s = congested();
        let ev = Evaluator::with_defaults(&s);
        let st = ev.baseline();
        let hs = st.hotspots();
        assert!(!hs.is_empty());
        let h = hs.iter().find(|h| h.tv == VolumeId(0)).unwrap();
        let params = ProposalParams { max_flows_in_regulation: 2, r_max: 2, k_top: 6, ..Default::default() };
        let props = propose(&ev, &st, h, &params);
        assert!(!props.is_empty() && props.len() <= 6);
        for w in props.windows(2) {
            assert!(w[0].predicted_delta_j >= w[1].predicted_delta_j);
        }
        let before = objective(&s, &st.delays, ev.weights());
        for p in &props {
            assert_eq!((p.regulation.t_start, p.regulation.t_end), (h.t_start, h.t_end));
            assert!(p.regulation.rate_per_hour >= 1);
            let delays = crate::fpfs::compose_sequential(&s, std::slice::from_ref(&p.regulation), ev.alloc()).unwrap();
            let after = objective(&s, &delays, ev.weights());
            assert_eq!(p.predicted_delta_j, before.j_total - after.j_total);
        }
        // state untouched
        assert_eq!(st, ev.baseline());
        let k1 = propose(&ev, &st, h, &ProposalParams { k_top: 1, ..params.clone() });
        assert_eq!(k1.len(), 1);
        assert_eq!(k1[0], props[0]);
    }

    #[test]
    fn no_flows_no_proposals() {
        let s = congested();
        let ev = Evaluator::with_defaults(&s);
        let st = ev.baseline();
        let quiet = Hotspot { tv: VolumeId(4), t_start: 90, t_end: 91 };
        assert!(propose(&ev, &st, &quiet, &ProposalParams::default()).is_empty());
    }

    #[test]
    fn parallel_matches_sequential() {
        let s = congested();
        let ev = Evaluator::with_defaults(&s);
        let st = ev.baseline();
        let h = st.hotspots()[0];
        let seq = propose(&ev, &st, &h, &ProposalParams::default());
        let par = propose(&ev, &st, &h, &ProposalParams { parallel: true, ..Default::default() });
        assert_eq!(seq, par);
    }
}

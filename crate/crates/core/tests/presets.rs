use dcbplan_core::baselines::{run_greedy_capping, GreedyParams};
use dcbplan_core::eval::Evaluator;
use dcbplan_core::flows::{extract_flows, ExtractionParams};
use dcbplan_core::generator::{generate, preset, shipped_seed, PRESETS};
use dcbplan_core::mcts::{brpp, run_search, SearchParams};
use dcbplan_core::proposal::{propose, ProposalParams};
use dcbplan_core::traffic::Scenario;

fn shipped(name: &str) -> Scenario {
    generate(&preset(name, shipped_seed(name)).unwrap()).unwrap()
}

#[test]
fn every_preset_generates() {
    for name in PRESETS {
        let s = shipped(name);
        assert!(s.num_flights() > 0, "{name}");
    }
}

#[test]
fn two_flow_top_hotspot_has_two_flows() {
    let s = shipped("two-flow");
    let ev = Evaluator::with_defaults(&s);
    let st = ev.baseline();
    let top = st.hotspots().into_iter().max_by_key(|h| st.severity(h)).unwrap();
    let fx = extract_flows(&s, &st.delays, &top, &ExtractionParams::default());
    assert_eq!(fx.flows.len(), 2);
    let best = propose(&ev, &st, &top, &ProposalParams::default());
    assert!(best[0].predicted_delta_j > 0.0);
}

#[test]
fn bandit_has_one_hotspot_with_proposals() {
    let s = shipped("bandit");
    let ev = Evaluator::with_defaults(&s);
    let st = ev.baseline();
    let hs = st.hotspots();
    assert_eq!(hs.len(), 1);
    assert!(propose(&ev, &st, &hs[0], &ProposalParams::default()).len() >= 2);
}

#[test]
fn greedy_capping_loses_on_cascade() {
    let s = shipped("cascade");
    let ev = Evaluator::with_defaults(&s);
    let greedy = run_greedy_capping(&ev, &GreedyParams::default()).unwrap();
    assert!(greedy.plan.total_delta_j() < 0.0);
    let search = run_search(&ev, &SearchParams { sims: 128, depth: 8, ..Default::default() }).unwrap();
    assert!(search.plan.total_delta_j() > 0.0);
}

#[test]
fn cascade_ordering_greedy_is_not_optimal() {
    let s = shipped("cascade-ordering");
    let ev = Evaluator::with_defaults(&s);
    let pp = ProposalParams::default();
    let st = ev.baseline();
    // exhaustive two-step enumeration over every hotspot's proposals
    let mut best = f64::NEG_INFINITY;
    for h in st.hotspots() {
        for p in propose(&ev, &st, &h, &pp) {
            let next = ev.apply(&st, &p.regulation).unwrap();
            let second = next
                .state
                .hotspots()
                .iter()
                .flat_map(|h2| propose(&ev, &next.state, h2, &pp))
                .map(|q| q.predicted_delta_j)
                .fold(0.0, f64::max);
            best = best.max(next.delta.delta_j + second);
        }
    }
    assert!(best > brpp(&ev, 2, &pp).unwrap().plan.total_delta_j());
}

use dcbplan_core::eval::Evaluator;
use dcbplan_core::flows::jaccard;
use dcbplan_core::fpfs::{allocate, compose_mpr, compose_sequential, AllocatorConfig, MeteredFlight, Regulation};
use dcbplan_core::io::{capacities_csv, flights_csv, parse_plan, parse_scenario, plan_json};
use dcbplan_core::metrics::{cell_diff, gini, summarize};
use dcbplan_core::proposal::{propose, ProposalParams};
use dcbplan_core::regpolicy::{inner_objective, inner_policy, outer_objective, outer_policy};
use dcbplan_core::traffic::{
    build_demand, detect_hotspots, objective, CapacityProfile, Crossing, DelayVector, Flight, Scenario, TimeGrid,
    TimeOfDay, VolumeId, Weights,
};
use proptest::prelude::*;

const NV: usize = 4;

fn scenario_strategy() -> impl Strategy<Value = Scenario> {
    let flight = (0u32..NV as u32, 1usize..=3, 0i64..13000, prop::collection::vec(10i64..120, 2));
    (prop::collection::vec(flight, 0..40), prop::collection::vec(1u32..8, NV)).prop_map(|(fs, caps)| {
        let flights = fs
            .into_iter()
            .enumerate()
            .map(|(i, (first, len, t0, legs))| {
                let mut t = t0;
                let crossings = (0..len)
                    .map(|k| {
                        if k > 0 {
                            t += legs[k - 1];
                        }
                        Crossing { tv: VolumeId((first + k as u32) % NV as u32), entry: TimeOfDay::from_ticks(t), exit: None }
                    })
                    .collect();
                Flight { id: format!("F{i:03}"), crossings }
            })
            .collect();
        let rows = caps.iter().map(|&c| vec![c; 96]).collect();
        Scenario::new(
            TimeGrid::default(),
            (0..NV).map(|v| format!("V{v}")).collect(),
            flights,
            CapacityProfile::from_rows(rows).unwrap(),
        )
        .unwrap()
    })
}

fn regulation_strategy(num_flights: usize) -> impl Strategy<Value = Regulation> {
    (0u32..NV as u32, 0usize..90, 0usize..6, 1u32..30, prop::collection::vec(any::<bool>(), num_flights)).prop_map(
        |(cv, t0, len, rate, pick)| {
            Regulation::new(VolumeId(cv), t0, (t0 + len).min(95), rate, pick.iter().enumerate().filter(|p| *p.1).map(|p| p.0))
        },
    )
}

fn with_regulations() -> impl Strategy<Value = (Scenario, Vec<Regulation>)> {
    scenario_strategy().prop_flat_map(|s| {
        let n = s.num_flights();
        (Just(s), prop::collection::vec(regulation_strategy(n), 0..4))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fpfs_slots_keep_order_and_spacing(
        mut entries in prop::collection::vec(0i64..14000, 1..40),
        rate in 1u32..60,
        t_start in 0usize..60,
    ) {
        entries.sort_unstable();
        let grid = TimeGrid::default();
        let reg = Regulation::new(VolumeId(0), t_start, t_start + 3, rate, []);
        let queue: Vec<MeteredFlight> = entries.iter().enumerate().map(|(i, &e)| MeteredFlight { flight: i, entry: TimeOfDay::from_ticks(e) }).collect();
        let slots = allocate(&reg, &queue, &grid, u32::MAX).unwrap();
        for w in slots.windows(2) {
            prop_assert!(w[1].slot_index > w[0].slot_index);
            prop_assert!(w[1].slot_min - w[0].slot_min >= 60.0 / rate as f64 - 1e-9);
        }
        for s in &slots {
            prop_assert!(s.slot_min + 1e-9 >= s.entry.minutes());
            // delay is the slot offset rounded up to a whole minute
            prop_assert!((s.delay_min as f64) < s.slot_min - s.entry.minutes() + 1.0 + 1e-9);
            prop_assert!(s.delay_min as f64 + 1e-9 >= s.slot_min - s.entry.minutes());
        }
        for (i, a) in slots.iter().enumerate() {
            let in_hour = slots[i..].iter().take_while(|b| b.slot_min < a.slot_min + 60.0 - 1e-9).count();
            prop_assert!(in_hour <= rate as usize);
        }
    }

    #[test]
    fn incremental_demand_matches_rebuild(s in scenario_strategy(), shifts in prop::collection::vec((0usize..40, 0u32..120), 0..20)) {
        let mut delays = DelayVector::zeros(s.num_flights());
        let mut grid = build_demand(&s, &delays);
        for (f, d) in shifts {
            if s.num_flights() == 0 { break; }
            let f = f % s.num_flights();
            grid.shift_flight(&s, f, delays.get(f), d);
            delays.set(f, d);
        }
        prop_assert_eq!(grid, build_demand(&s, &delays));
    }

    #[test]
    fn hotspots_are_maximal_runs((s, regs) in with_regulations()) {
        let delays = compose_sequential(&s, &regs, &AllocatorConfig::default()).unwrap();
        let d = build_demand(&s, &delays);
        let hs = detect_hotspots(&d);
        let mut covered = 0u64;
        for h in &hs {
            prop_assert!((h.t_start..=h.t_end).all(|t| d.excess(h.tv, t) > 0));
            prop_assert!(h.t_start == 0 || d.excess(h.tv, h.t_start - 1) == 0);
            prop_assert!(h.t_end == 95 || d.excess(h.tv, h.t_end + 1) == 0);
            covered += d.segment_excess(h.tv, h.t_start, h.t_end);
        }
        prop_assert_eq!(covered, d.total_excess());
    }

    #[test]
    fn applied_delta_matches_recomputation((s, regs) in with_regulations()) {
        let ev = Evaluator::with_defaults(&s);
        let mut state = ev.baseline();
        for reg in &regs {
            let a = ev.apply(&state, reg).unwrap();
            let before = objective(&s, &state.delays, Weights::default());
            let after = objective(&s, &a.state.delays, Weights::default());
            prop_assert_eq!(a.delta.delta_j, before.j_total - after.j_total);
            prop_assert_eq!(a.state.objective, after);
            prop_assert!(a.state.delays.as_slice().iter().all(|&x| x <= 120));
            state = a.state;
        }
        let (plan, end) = ev.replay(&regs).unwrap();
        prop_assert_eq!(&end.delays, &compose_sequential(&s, &regs, &AllocatorConfig::default()).unwrap());
        prop_assert_eq!(plan.total_delta_j(), ev.baseline().objective.j_total - end.objective.j_total);
    }

    #[test]
    fn mpr_takes_the_largest_single_delay((s, regs) in with_regulations()) {
        let cfg = AllocatorConfig::default();
        let mpr = compose_mpr(&s, &regs, &cfg).unwrap();
        for f in 0..s.num_flights() {
            let single = regs.iter().map(|r| compose_sequential(&s, std::slice::from_ref(r), &cfg).unwrap().get(f)).max().unwrap_or(0);
            prop_assert_eq!(mpr.get(f), single);
        }
    }

    #[test]
    fn proposals_predict_exactly(s in scenario_strategy()) {
        let ev = Evaluator::with_defaults(&s);
        let st = ev.baseline();
        for h in st.hotspots().into_iter().take(2) {
            let props = propose(&ev, &st, &h, &ProposalParams::default());
            for w in props.windows(2) {
                prop_assert!(w[0].predicted_delta_j >= w[1].predicted_delta_j);
            }
            for p in props {
                let after = objective(&s, &compose_sequential(&s, std::slice::from_ref(&p.regulation), ev.alloc()).unwrap(), ev.weights());
                prop_assert_eq!(p.predicted_delta_j, st.objective.j_total - after.j_total);
            }
        }
    }

    #[test]
    fn jaccard_is_a_similarity(a in prop::collection::btree_set(0u32..12, 0..8), b in prop::collection::btree_set(0u32..12, 0..8)) {
        let a: Vec<VolumeId> = a.into_iter().map(VolumeId).collect();
        let b: Vec<VolumeId> = b.into_iter().map(VolumeId).collect();
        let j = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard(&b, &a));
        if !a.is_empty() {
            prop_assert_eq!(jaccard(&a, &a), 1.0);
        }
    }

    #[test]
    fn scenario_and_plan_round_trip((s, regs) in with_regulations()) {
        let (f, c) = (flights_csv(&s).unwrap(), capacities_csv(&s).unwrap());
        let back = parse_scenario(&f, &c).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(flights_csv(&back).unwrap(), f);
        let ev = Evaluator::with_defaults(&s);
        let (plan, end) = ev.replay(&regs).unwrap();
        let text = plan_json(&s, &plan).unwrap();
        let loaded = parse_plan(&s, &text).unwrap();
        prop_assert_eq!(&loaded, &plan);
        prop_assert_eq!(plan_json(&s, &loaded).unwrap(), text);
        let (_, again) = ev.replay(&loaded.regulations).unwrap();
        prop_assert_eq!(again.objective, end.objective);
    }

    #[test]
    fn cell_categories_are_disjoint((s, regs) in with_regulations()) {
        let delays = compose_sequential(&s, &regs, &AllocatorConfig::default()).unwrap();
        let (b, a) = (build_demand(&s, &DelayVector::zeros(s.num_flights())), build_demand(&s, &delays));
        let d = cell_diff(&b, &a, s.capacities());
        prop_assert!(d.overcap_reductions + d.undercap_increases <= d.changed_cells);
        prop_assert_eq!(d.beneficial_pairs, d.overcap_reductions + d.undercap_increases);
        prop_assert!(d.changed_tvs <= NV as u64);
        let same = summarize(&s, Weights::default(), "x", &delays, &delays, None);
        prop_assert_eq!(same.delta_j, 0.0);
        prop_assert_eq!((same.exceedance_reduced, same.total_delay_min, same.flights_delayed), (0, 0, 0));
        prop_assert_eq!(same.cells.changed_cells, 0);
    }

    #[test]
    fn gini_bounds_and_invariances(xs in prop::collection::vec(0.0f64..100.0, 1..12), k in 0.1f64..50.0, rot in 0usize..12) {
        let g = gini(&xs);
        let n = xs.len() as f64;
        prop_assert!(g >= 0.0 && g <= 1.0 - 1.0 / n + 1e-12);
        let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
        prop_assert!((gini(&scaled) - g).abs() < 1e-9);
        let mut rotated = xs.clone();
        rotated.rotate_left(rot % xs.len());
        prop_assert!((gini(&rotated) - g).abs() < 1e-12);
    }

    #[test]
    fn inner_policy_is_optimal(
        q in prop::collection::vec(-50.0f64..50.0, 1..7),
        w in prop::collection::vec(0.05f64..1.0, 7),
        lambda in 0.05f64..40.0,
        probes in prop::collection::vec(prop::collection::vec(0.001f64..1.0, 7), 20),
    ) {
        let k = q.len();
        let s: f64 = w[..k].iter().sum();
        let p: Vec<f64> = w[..k].iter().map(|x| x / s).collect();
        let sol = inner_policy(&q, &p, lambda).unwrap();
        prop_assert!((sol.policy.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for y in probes {
            let t: f64 = y[..k].iter().sum();
            let y: Vec<f64> = y[..k].iter().map(|v| v / t).collect();
            prop_assert!(sol.value >= inner_objective(&q, &p, lambda, &y) - 1e-8);
        }
        let out = outer_policy(&q, &p, lambda).unwrap();
        prop_assert!((out.policy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((outer_objective(&q, &p, lambda, &out.policy) - out.value).abs() < 1e-7 * (1.0 + out.value.abs()));
    }
}

//! Flight-centric baselines (simulated annealing, NSGA-II) over per-flight
//! delay vectors, and greedy blanket capping at the capacity limit.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{step_record, Evaluator, State};
use crate::flows::contributing_flights;
use crate::fpfs::{Plan, Regulation};
use crate::mcts::candidate_hotspots;
use crate::runlog::{PlanRun, RunLog};
use crate::traffic::{DelayVector, DemandGrid, ObjectiveBreakdown, Scenario};

/// Per-flight pick weight: one plus the number of overloaded rolling windows
/// the flight's entries are counted in.
pub fn hot_cell_weights(scenario: &Scenario, delays: &DelayVector, demand: &DemandGrid) -> Vec<f64> {
    let grid = scenario.grid();
    let w = grid.rolling_window_bins;
    (0..scenario.num_flights())
        .map(|f| {
            let d = delays.get(f);
            let mut hot = 0u32;
            for c in &scenario.flight(f).crossings {
                if let Some(b) = grid.bin_of_time(c.entry.shifted(d)) {
                    hot += (b.saturating_sub(w - 1)..=b).filter(|&t| demand.excess(c.tv, t) > 0).count() as u32;
                }
            }
            1.0 + hot as f64
        })
        .collect()
}

pub fn hot_cell_weighted_flight_pick(scenario: &Scenario, state: &State, rng: &mut ChaCha8Rng) -> usize {
    let weights = hot_cell_weights(scenario, &state.delays, &state.demand);
    WeightedIndex::new(&weights).expect("weights are at least 1").sample(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    pub iters: usize,
    pub t0: f64,
    pub cooling: f64,
    pub t_min: f64,
    pub max_delay: u32,
    pub step_choices: Vec<u32>,
    pub seed: u64,
    pub time_budget_ms: Option<u64>,
}

impl Default for SaParams {
    fn default() -> Self {
        SaParams {
            iters: 10000,
            t0: 15.0,
            cooling: 0.999,
            t_min: 1e-9,
            max_delay: 120,
            step_choices: vec![2, 3, 4, 5],
            seed: 0,
            time_budget_ms: None,
        }
    }
}

impl SaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(Error::validation("cooling must be in (0, 1)"));
        }
        if !(self.t_min > 0.0) || !(self.t0 > 0.0) {
            return Err(Error::validation("temperatures must be positive"));
        }
        if self.step_choices.is_empty() || self.step_choices.contains(&0) {
            return Err(Error::validation("step choices must be positive integers"));
        }
        Ok(())
    }
}

/// Metropolis acceptance probability for a move worsening J by `worse`.
pub fn acceptance_probability(worse: f64, temperature: f64) -> f64 {
    if worse <= 0.0 {
        1.0
    } else {
        (-worse / temperature).exp()
    }
}

#[derive(Clone, Debug)]
pub struct FlightSearchOutcome {
    pub delays: DelayVector,
    pub objective: ObjectiveBreakdown,
    pub log: RunLog,
}

fn deadline(budget: Option<u64>) -> Option<Instant> {
    budget.map(|ms| Instant::now() + Duration::from_millis(ms))
}

pub fn run_sa(ev: &Evaluator, params: &SaParams) -> Result<FlightSearchOutcome> {
    params.validate()?;
    let scenario = ev.scenario();
    let start = Instant::now();
    let stop = deadline(params.time_budget_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let weights_of = |delays: &DelayVector, demand: &DemandGrid| hot_cell_weights(scenario, delays, demand);

    let base = ev.baseline();
    let mut delays = base.delays.clone();
    let mut demand = base.demand.clone();
    let mut current = base.objective;
    let mut best = (current, delays.clone());
    let mut log = RunLog::new("sa");
    let mut picker = WeightedIndex::new(weights_of(&delays, &demand)).expect("weights are at least 1");
    let mut temperature = params.t0;

    for it in 0..params.iters {
        if it % 256 == 0 && stop.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let f = picker.sample(&mut rng);
        let step = *params.step_choices.choose(&mut rng).expect("nonempty");
        let old = delays.get(f);
        let new = if rng.gen_bool(0.5) { old.saturating_add(step).min(params.max_delay) } else { old.saturating_sub(step) };
        if new != old {
            ev.count(1);
            demand.shift_flight(scenario, f, old, new);
            let j_delay = delays.total() - old as u64 + new as u64;
            let next = ObjectiveBreakdown::from_parts(demand.total_excess(), j_delay, ev.weights());
            let worse = next.j_total - current.j_total;
            if rng.gen::<f64>() < acceptance_probability(worse, temperature) {
                delays.set(f, new);
                current = next;
                picker = WeightedIndex::new(weights_of(&delays, &demand)).expect("weights are at least 1");
                if current.j_total < best.0.j_total {
                    log.push(
                        best.0.j_total - current.j_total,
                        current.j_cap,
                        current.j_delay,
                        format!("{}{:+}", scenario.flight(f).id, new as i64 - old as i64),
                        ev.evaluations(),
                        start.elapsed().as_millis() as u64,
                    );
                    best = (current, delays.clone());
                }
            } else {
                demand.shift_flight(scenario, f, new, old);
            }
        }
        temperature = (temperature * params.cooling).max(params.t_min);
    }
    Ok(FlightSearchOutcome { delays: best.1, objective: best.0, log })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population_size: usize,
    pub generations: usize,
    pub p_crossover: f64,
    pub mutations_per_child: usize,
    pub mutate_existing_prob: f64,
    pub step_choices: Vec<u32>,
    pub allow_negative_moves: bool,
    pub init_delayed_flights_min: usize,
    pub init_delayed_flights_max: usize,
    pub max_delay: u32,
    pub seed: u64,
    pub time_budget_ms: Option<u64>,
    /// Evaluate offspring on the rayon pool.
    pub parallel: bool,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population_size: 64,
            generations: 80,
            p_crossover: 0.9,
            mutations_per_child: 2,
            mutate_existing_prob: 0.7,
            step_choices: vec![2, 3, 4, 5],
            allow_negative_moves: true,
            init_delayed_flights_min: 1,
            init_delayed_flights_max: 8,
            max_delay: 120,
            seed: 0,
            time_budget_ms: None,
            parallel: false,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::validation("population_size must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.p_crossover) || !(0.0..=1.0).contains(&self.mutate_existing_prob) {
            return Err(Error::validation("probabilities must be in [0, 1]"));
        }
        if self.step_choices.is_empty() || self.step_choices.contains(&0) {
            return Err(Error::validation("step choices must be positive integers"));
        }
        if self.init_delayed_flights_min == 0 || self.init_delayed_flights_min > self.init_delayed_flights_max {
            return Err(Error::validation("init delayed flight range must be positive and ordered"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Individual {
    state: State,
    rank: usize,
    crowding: f64,
}

/// Whether `a` Pareto-dominates `b` on (J_CAP, J_DELAY).
pub fn dominates(a: (u64, u64), b: (u64, u64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

fn objectives(s: &State) -> (u64, u64) {
    (s.objective.j_cap, s.objective.j_delay)
}

/// Fast non-dominated sorting; returns fronts of indices, best first.
pub fn non_dominated_fronts(points: &[(u64, u64)]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dominates(points[i], points[j]) {
                dominates_list[i].push(j);
            } else if i != j && dominates(points[j], points[i]) {
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front, in front order.
pub fn crowding_distances(points: &[(u64, u64)], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    let mut dist = vec![0.0; m];
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    for obj in 0..2 {
        let key = |i: usize| if obj == 0 { points[front[i]].0 } else { points[front[i]].1 };
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&i| (key(i), i));
        let (lo, hi) = (key(order[0]) as f64, key(order[m - 1]) as f64);
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        if hi > lo {
            for k in 1..m - 1 {
                dist[order[k]] += (key(order[k + 1]) as f64 - key(order[k - 1]) as f64) / (hi - lo);
            }
        }
    }
    dist
}

fn assign_rank_and_crowding(pop: &mut [Individual]) {
    let points: Vec<(u64, u64)> = pop.iter().map(|i| objectives(&i.state)).collect();
    for (r, front) in non_dominated_fronts(&points).iter().enumerate() {
        let cd = crowding_distances(&points, front);
        for (k, &i) in front.iter().enumerate() {
            pop[i].rank = r;
            pop[i].crowding = cd[k];
        }
    }
}

fn crowded_cmp(a: &Individual, b: &Individual) -> Ordering {
    a.rank.cmp(&b.rank).then(b.crowding.total_cmp(&a.crowding))
}

/// Non-dominated set of every evaluated point, first occurrence kept.
#[derive(Clone, Debug, Default)]
pub struct ParetoArchive {
    members: Vec<((u64, u64), DelayVector)>,
}

impl ParetoArchive {
    pub fn insert(&mut self, point: (u64, u64), delays: &DelayVector) -> bool {
        if self.members.iter().any(|(p, _)| *p == point || dominates(*p, point)) {
            return false;
        }
        self.members.retain(|(p, _)| !dominates(point, *p));
        self.members.push((point, delays.clone()));
        true
    }

    pub fn points(&self) -> Vec<(u64, u64)> {
        self.members.iter().map(|m| m.0).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member minimizing the weighted objective; ties by lower delay.
    pub fn select(&self, ev: &Evaluator) -> Option<&DelayVector> {
        let w = ev.weights();
        self.members
            .iter()
            .min_by(|a, b| w.combine(a.0 .0, a.0 .1).total_cmp(&w.combine(b.0 .0, b.0 .1)).then(a.0 .1.cmp(&b.0 .1)))
            .map(|m| &m.1)
    }
}

#[derive(Clone, Debug)]
pub struct GaOutcome {
    pub archive: ParetoArchive,
    pub selected: FlightSearchOutcome,
}

fn mutate(scenario: &Scenario, parent: &State, child: &mut DelayVector, params: &GaParams, rng: &mut ChaCha8Rng) {
    for _ in 0..params.mutations_per_child {
        let step = *params.step_choices.choose(rng).expect("nonempty");
        let delayed: Vec<usize> = (0..child.len()).filter(|&f| child.get(f) > 0).collect();
        if !delayed.is_empty() && rng.gen_bool(params.mutate_existing_prob) {
            let f = *delayed.choose(rng).expect("nonempty");
            let d = child.get(f);
            let down = params.allow_negative_moves && rng.gen_bool(0.5);
            child.set(f, if down { d.saturating_sub(step) } else { (d + step).min(params.max_delay) });
        } else {
            let f = hot_cell_weighted_flight_pick(scenario, parent, rng);
            child.set(f, (child.get(f) + step).min(params.max_delay));
        }
    }
}

pub fn run_nsga2(ev: &Evaluator, params: &GaParams) -> Result<GaOutcome> {
    params.validate()?;
    let scenario = ev.scenario();
    let start = Instant::now();
    let stop = deadline(params.time_budget_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let base = ev.baseline();
    let mut archive = ParetoArchive::default();
    let mut log = RunLog::new("nsga2");
    let mut best_j = base.objective.j_total;

    let evaluate = |vs: Vec<DelayVector>| -> Vec<State> {
        if params.parallel {
            vs.into_par_iter().map(|d| ev.transition(&base, d)).collect()
        } else {
            vs.into_iter().map(|d| ev.transition(&base, d)).collect()
        }
    };
    let mut record = |pop: &[State], archive: &mut ParetoArchive, best_j: &mut f64, label: String| {
        for s in pop {
            archive.insert(objectives(s), &s.delays);
        }
        if let Some(s) = pop.iter().min_by(|a, b| a.objective.j_total.total_cmp(&b.objective.j_total)) {
            if s.objective.j_total < *best_j {
                log.push(*best_j - s.objective.j_total, s.objective.j_cap, s.objective.j_delay, label, ev.evaluations(), start.elapsed().as_millis() as u64);
                *best_j = s.objective.j_total;
            }
        }
    };

    let mut init = Vec::with_capacity(params.population_size);
    for _ in 0..params.population_size {
        let mut d = DelayVector::zeros(scenario.num_flights());
        let k = rng.gen_range(params.init_delayed_flights_min..=params.init_delayed_flights_max);
        for _ in 0..k {
            let f = hot_cell_weighted_flight_pick(scenario, &base, &mut rng);
            let step = *params.step_choices.choose(&mut rng).expect("nonempty");
            d.set(f, (d.get(f) + step).min(params.max_delay));
        }
        init.push(d);
    }
    let states = evaluate(init);
    record(&states, &mut archive, &mut best_j, "generation 0".into());
    let mut pop: Vec<Individual> = states.into_iter().map(|state| Individual { state, rank: 0, crowding: 0.0 }).collect();
    assign_rank_and_crowding(&mut pop);

    for gen in 1..=params.generations {
        if stop.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let mut children = Vec::with_capacity(params.population_size);
        for _ in 0..params.population_size {
            let tournament = |rng: &mut ChaCha8Rng| {
                let (a, b) = (rng.gen_range(0..pop.len()), rng.gen_range(0..pop.len()));
                if crowded_cmp(&pop[a], &pop[b]) == Ordering::Greater { b } else { a }
            };
            let (p1, p2) = (tournament(&mut rng), tournament(&mut rng));
            let mut child = pop[p1].state.delays.clone();
            if rng.gen_bool(params.p_crossover) {
                let other = &pop[p2].state.delays;
                for f in 0..child.len() {
                    if child.get(f) != other.get(f) && rng.gen_bool(0.5) {
                        child.set(f, other.get(f));
                    }
                }
            }
            mutate(scenario, &pop[p1].state, &mut child, params, &mut rng);
            children.push(child);
        }
        let states = evaluate(children);
        record(&states, &mut archive, &mut best_j, format!("generation {gen}"));
        pop.extend(states.into_iter().map(|state| Individual { state, rank: 0, crowding: 0.0 }));
        assign_rank_and_crowding(&mut pop);
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| crowded_cmp(&pop[a], &pop[b]).then(a.cmp(&b)));
        order.truncate(params.population_size);
        order.sort_unstable();
        let mut keep = vec![false; pop.len()];
        for i in order {
            keep[i] = true;
        }
        let mut k = keep.iter();
        pop.retain(|_| *k.next().expect("same length"));
        assign_rank_and_crowding(&mut pop);
    }

    let delays = archive.select(ev).cloned().unwrap_or_else(|| base.delays.clone());
    let state = ev.transition(&base, delays);
    Ok(GaOutcome {
        archive,
        selected: FlightSearchOutcome { objective: state.objective, delays: state.delays, log },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyParams {
    pub max_iterations: usize,
}

impl Default for GreedyParams {
    fn default() -> Self {
        GreedyParams { max_iterations: 200 }
    }
}

/// Repeatedly caps the most severe hotspot with a blanket regulation at the
/// window-minimum capacity until nothing is overloaded or nothing changes.
pub fn run_greedy_capping(ev: &Evaluator, params: &GreedyParams) -> Result<PlanRun> {
    let scenario = ev.scenario();
    let start = Instant::now();
    let mut log = RunLog::new("greedy");
    let mut plan = Plan::empty(scenario, ev.weights());
    let mut state = ev.baseline();
    for _ in 0..params.max_iterations {
        let Some(&(h, _)) = candidate_hotspots(&state, usize::MAX).first() else { break };
        let members = contributing_flights(scenario, &state.delays, &h);
        let (lo, hi) = (h.t_start, scenario.grid().clip_end(h.t_end, crate::fpfs::EFFECTIVE_MARGIN_BINS));
        let rate = scenario.capacities().window_min(h.tv, lo, hi).max(1);
        let reg = Regulation::new(h.tv, h.t_start, h.t_end, rate, members);
        let applied = ev.apply(&state, &reg)?;
        if applied.state.delays == state.delays {
            break;
        }
        let step = step_record(&applied);
        log.push(step.delta_j, step.j_cap, step.j_delay, reg.describe(scenario), ev.evaluations(), start.elapsed().as_millis() as u64);
        plan.regulations.push(reg);
        plan.steps.push(step);
        state = applied.state;
    }
    plan.delays = state.delays;
    Ok(PlanRun { plan, log })
}

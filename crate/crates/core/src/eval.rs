//! Evaluation context shared by every planner: scenario, weights and allocator
//! settings, plus the demand/objective snapshot of a delay vector.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fpfs::{apply_regulation, AllocatorConfig, Plan, Regulation, SlotAssignment, StepRecord};
use crate::traffic::{build_demand, detect_hotspots, DelayVector, DemandGrid, Hotspot, ObjectiveBreakdown, Scenario, Weights};

/// Objective improvement `J(before) - J(after)` with its integer components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaJ {
    pub delta_j: f64,
    pub delta_cap: i64,
    pub delta_delay: i64,
}

impl DeltaJ {
    pub fn between(before: &ObjectiveBreakdown, after: &ObjectiveBreakdown) -> Self {
        DeltaJ {
            delta_j: before.j_total - after.j_total,
            delta_cap: before.j_cap as i64 - after.j_cap as i64,
            delta_delay: before.j_delay as i64 - after.j_delay as i64,
        }
    }
}

/// Delays with the demand grid and objective they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub delays: DelayVector,
    pub demand: DemandGrid,
    pub objective: ObjectiveBreakdown,
}

impl State {
    pub fn hotspots(&self) -> Vec<Hotspot> {
        detect_hotspots(&self.demand)
    }

    /// Cumulative excess over a hotspot's segment under this state.
    pub fn severity(&self, h: &Hotspot) -> u64 {
        self.demand.segment_excess(h.tv, h.t_start, h.t_end)
    }
}

/// Result of applying one regulation to a state.
#[derive(Clone, Debug)]
pub struct Applied {
    pub state: State,
    pub slots: Vec<SlotAssignment>,
    pub delta: DeltaJ,
}

pub struct Evaluator<'a> {
    scenario: &'a Scenario,
    weights: Weights,
    alloc: AllocatorConfig,
    evaluations: AtomicU64,
}

impl<'a> Evaluator<'a> {
    pub fn new(scenario: &'a Scenario, weights: Weights, alloc: AllocatorConfig) -> Self {
        Evaluator {
            scenario,
            weights,
            alloc,
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn with_defaults(scenario: &'a Scenario) -> Self {
        Self::new(scenario, Weights::default(), AllocatorConfig::default())
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn alloc(&self) -> &AllocatorConfig {
        &self.alloc
    }

    /// Number of regulation/delay-vector evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub(crate) fn count(&self, n: u64) {
        self.evaluations.fetch_add(n, Ordering::Relaxed);
    }

    pub fn baseline(&self) -> State {
        self.state_for(DelayVector::zeros(self.scenario.num_flights()))
    }

    pub fn state_for(&self, delays: DelayVector) -> State {
        self.count(1);
        let demand = build_demand(self.scenario, &delays);
        let objective = ObjectiveBreakdown::from_parts(demand.total_excess(), delays.total(), self.weights);
        State { delays, demand, objective }
    }

    /// State reached from `base` by switching to `delays`, updating the
    /// demand grid only for flights whose delay changed.
    pub fn transition(&self, base: &State, delays: DelayVector) -> State {
        self.count(1);
        let mut demand = base.demand.clone();
        demand.apply_delay_change(self.scenario, &base.delays, &delays);
        let objective = ObjectiveBreakdown::from_parts(demand.total_excess(), delays.total(), self.weights);
        State { delays, demand, objective }
    }

    pub fn apply(&self, state: &State, reg: &Regulation) -> Result<Applied> {
        let mut delays = state.delays.clone();
        let slots = apply_regulation(self.scenario, &mut delays, reg, &self.alloc)?;
        let next = self.transition(state, delays);
        let delta = DeltaJ::between(&state.objective, &next.objective);
        Ok(Applied { state: next, slots, delta })
    }

    /// Replays a regulation sequence from the undelayed baseline, rebuilding
    /// the per-step log.
    pub fn replay(&self, regulations: &[Regulation]) -> Result<(Plan, State)> {
        let mut state = self.baseline();
        let mut plan = Plan::empty(self.scenario, self.weights);
        for reg in regulations {
            let applied = self.apply(&state, reg)?;
            plan.regulations.push(reg.clone());
            plan.steps.push(step_record(&applied));
            state = applied.state;
        }
        plan.delays = state.delays.clone();
        Ok((plan, state))
    }
}

pub fn step_record(applied: &Applied) -> StepRecord {
    let o = &applied.state.objective;
    StepRecord {
        delta_j: applied.delta.delta_j,
        delta_cap: applied.delta.delta_cap,
        delta_delay: applied.delta.delta_delay,
        j_cap: o.j_cap,
        j_delay: o.j_delay,
        j_total: o.j_total,
    }
}

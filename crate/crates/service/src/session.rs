//! Per-session planning state: an immutable snapshot chain where each commit
//! pushes a new snapshot and undo returns to its parent.

use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use dcbplan_core::eval::{step_record, Applied, Evaluator, State};
use dcbplan_core::fpfs::{AllocatorConfig, Plan, Regulation, StepRecord};
use dcbplan_core::io::plan_json;
use dcbplan_core::traffic::{Scenario, Weights};
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ApiResult};

#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub plan: Plan,
    pub state: State,
    pub parent: Option<Arc<Snapshot>>,
}

pub struct Session {
    pub id: String,
    scenario: Arc<Scenario>,
    weights: Weights,
    alloc: AllocatorConfig,
    baseline: Arc<State>,
    current: RwLock<Arc<Snapshot>>,
    mutation: Mutex<()>,
}

impl Session {
    pub fn new(id: impl Into<String>, scenario: Scenario, weights: Weights) -> Self {
        let alloc = AllocatorConfig::default();
        let ev = Evaluator::new(&scenario, weights, alloc);
        let baseline = ev.baseline();
        let plan = Plan::empty(&scenario, weights);
        let root = Snapshot { version: 0, plan, state: baseline.clone(), parent: None };
        Session {
            id: id.into(),
            scenario: Arc::new(scenario),
            weights,
            alloc,
            baseline: Arc::new(baseline),
            current: RwLock::new(Arc::new(root)),
            mutation: Mutex::new(()),
        }
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn baseline(&self) -> &State {
        &self.baseline
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(&self.scenario, self.weights, self.alloc)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("snapshot lock poisoned").clone()
    }

    /// Dry run of one regulation against the current snapshot.
    pub fn evaluate(&self, reg: &Regulation) -> ApiResult<(Arc<Snapshot>, Applied)> {
        let snap = self.snapshot();
        let applied = self.evaluator().apply(&snap.state, reg)?;
        Ok((snap, applied))
    }

    fn lock_mutation(&self, expected_version: Option<u64>) -> ApiResult<MutexGuard<'_, ()>> {
        let guard = self.mutation.try_lock().map_err(|_| ApiError::conflict("another mutation is in progress"))?;
        let current = self.snapshot().version;
        if let Some(v) = expected_version.filter(|&v| v != current) {
            return Err(ApiError::conflict(format!("plan is at version {current}, request expected {v}")));
        }
        Ok(guard)
    }

    fn publish(&self, snap: Snapshot) -> Arc<Snapshot> {
        let snap = Arc::new(snap);
        *self.current.write().expect("snapshot lock poisoned") = snap.clone();
        snap
    }

    /// Appends a regulation and re-allocates sequentially on top of the current plan.
    pub fn commit(&self, reg: Regulation, expected_version: Option<u64>) -> ApiResult<(Arc<Snapshot>, StepRecord)> {
        let _guard = self.lock_mutation(expected_version)?;
        let prev = self.snapshot();
        let applied = self.evaluator().apply(&prev.state, &reg)?;
        let step = step_record(&applied);
        let mut plan = prev.plan.clone();
        plan.regulations.push(reg);
        plan.steps.push(step);
        plan.delays = applied.state.delays.clone();
        let snap = Snapshot { version: prev.version + 1, plan, state: applied.state, parent: Some(prev) };
        Ok((self.publish(snap), step))
    }

    /// Pops the last regulation, restoring the exact prior plan and state.
    pub fn undo(&self, expected_version: Option<u64>) -> ApiResult<(Arc<Snapshot>, Regulation)> {
        let _guard = self.lock_mutation(expected_version)?;
        let cur = self.snapshot();
        let parent = cur.parent.as_ref().ok_or_else(|| ApiError::conflict("plan is empty, nothing to undo"))?;
        let removed = cur.plan.regulations.last().cloned().expect("non-root snapshot has a regulation");
        let snap = Snapshot {
            version: cur.version + 1,
            plan: parent.plan.clone(),
            state: parent.state.clone(),
            parent: parent.parent.clone(),
        };
        Ok((self.publish(snap), removed))
    }

    /// Hex SHA-256 of the plan document; independent of the version counter.
    pub fn state_hash(&self, snap: &Snapshot) -> ApiResult<String> {
        let text = plan_json(&self.scenario, &snap.plan)?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

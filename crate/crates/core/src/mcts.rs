//! Hierarchical PUCT tree search over (hotspot, proposal) actions, and the
//! no-lookahead best-proposal policy used as its ablation.
//!
//! Nodes keep statistics and cached proposals but not states: each simulation
//! replays its path from the root, which is cheap next to flow extraction.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Evaluator, State};
use crate::fpfs::{Plan, Regulation};
use crate::proposal::{propose, Proposal, ProposalParams};
use crate::runlog::{PlanRun, RunLog};
use crate::traffic::Hotspot;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommitMode {
    /// One search, then commit the principal variation.
    #[default]
    All,
    /// Search, commit the first action, search again from the new state.
    RecedingHorizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub sims: usize,
    pub depth: usize,
    pub commit_depth: usize,
    pub gamma: f64,
    pub puct_c: f64,
    pub tau_hotspot: f64,
    pub tau_proposal: f64,
    pub max_hotspots_per_node: usize,
    pub seed: u64,
    pub commit_mode: CommitMode,
    /// Wall-clock budget; simulations stop once it is spent.
    pub time_budget_ms: Option<u64>,
    pub proposal: ProposalParams,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            sims: 128,
            depth: 64,
            commit_depth: 64,
            gamma: 0.999998,
            puct_c: 64.0,
            tau_hotspot: 6.0,
            tau_proposal: 24.0,
            max_hotspots_per_node: 20,
            seed: 0,
            commit_mode: CommitMode::All,
            time_budget_ms: None,
            proposal: ProposalParams::default(),
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(self.tau_hotspot > 0.0 && self.tau_proposal > 0.0) {
            return Err(Error::validation("temperatures must be positive"));
        }
        if self.sims == 0 || self.depth == 0 {
            return Err(Error::validation("sims and depth must be at least 1"));
        }
        if self.max_hotspots_per_node == 0 {
            return Err(Error::validation("max_hotspots_per_node must be at least 1"));
        }
        if !(self.puct_c >= 0.0) {
            return Err(Error::validation("puct_c must be non-negative"));
        }
        Ok(())
    }
}

/// Tempered softmax, shifted by the maximum for stability.
pub fn softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|&s| ((s - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Hotspot prior from severities.
pub fn hotspot_priors(severities: &[u64], tau: f64) -> Vec<f64> {
    softmax(&severities.iter().map(|&s| s as f64).collect::<Vec<_>>(), tau)
}

/// Samples an index with probability proportional to `weights`; `None` when
/// every weight is zero.
pub fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> Option<usize> {
    WeightedIndex::new(weights).ok().map(|d| d.sample(rng))
}

/// PUCT child choice. Unvisited children count as `Q = 0`; ties go to the
/// higher prior, then the lower index.
pub fn puct_select(w: &[f64], n: &[u64], prior: &[f64], c: f64) -> usize {
    let sqrt_total = (n.iter().sum::<u64>() as f64).sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..n.len() {
        let q = if n[i] > 0 { w[i] / n[i] as f64 } else { 0.0 };
        let score = q + c * prior[i] * sqrt_total / (1.0 + n[i] as f64);
        if score > best_score || (score == best_score && prior[i] > prior[best]) {
            best = i;
            best_score = score;
        }
    }
    best
}

/// Candidate hotspots of a state: most severe first, capped at `k`.
pub fn candidate_hotspots(state: &State, k: usize) -> Vec<(Hotspot, u64)> {
    let mut hs: Vec<(Hotspot, u64)> = state.hotspots().into_iter().map(|h| (h, state.severity(&h))).collect();
    hs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    hs.truncate(k);
    hs
}

#[derive(Clone, Debug)]
struct Expansion {
    proposals: Vec<Proposal>,
    prior: Vec<f64>,
    n: Vec<u64>,
    w: Vec<f64>,
    child: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
struct Node {
    key: u64,
    hotspots: Vec<Hotspot>,
    prior_h: Vec<f64>,
    unactionable: Vec<bool>,
    expansions: Vec<Option<Expansion>>,
    visits: u64,
}

/// One step of a simulated episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStep {
    pub node: usize,
    pub hotspot: usize,
    pub proposal: usize,
    pub delta_j: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub path: Vec<EpisodeStep>,
    pub g: f64,
}

/// Statistics of one root action after search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RootEdge {
    pub hotspot: Hotspot,
    pub hotspot_prior: f64,
    pub regulation: Regulation,
    pub predicted_delta_j: f64,
    pub prior: f64,
    pub visits: u64,
    pub q: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub plan: Plan,
    pub log: RunLog,
    pub simulations: usize,
    pub tree_nodes: usize,
    /// Largest simulated return.
    pub best_return: f64,
    /// Root action statistics of the first search.
    pub root: Vec<RootEdge>,
}

struct Tree<'e, 'a> {
    ev: &'e Evaluator<'a>,
    params: &'e SearchParams,
    root_state: State,
    nodes: Vec<Node>,
}

fn child_key(parent: u64, reg: &Regulation) -> u64 {
    let mut h = DefaultHasher::new();
    parent.hash(&mut h);
    reg.hash(&mut h);
    h.finish()
}

impl<'e, 'a> Tree<'e, 'a> {
    fn new(ev: &'e Evaluator<'a>, params: &'e SearchParams, root_state: State) -> Self {
        let mut t = Tree { ev, params, root_state, nodes: Vec::new() };
        let root = t.make_node(0, &t.root_state.clone());
        t.nodes.push(root);
        t
    }

    fn make_node(&self, key: u64, state: &State) -> Node {
        let cands = candidate_hotspots(state, self.params.max_hotspots_per_node);
        let severities: Vec<u64> = cands.iter().map(|c| c.1).collect();
        Node {
            key,
            prior_h: hotspot_priors(&severities, self.params.tau_hotspot),
            unactionable: vec![false; cands.len()],
            expansions: vec![None; cands.len()],
            hotspots: cands.into_iter().map(|c| c.0).collect(),
            visits: 0,
        }
    }

    /// Samples an actionable hotspot at `node`, expanding it on first use.
    fn pick_hotspot(&mut self, node: usize, state: &State, rng: &mut ChaCha8Rng) -> Option<usize> {
        loop {
            let nd = &self.nodes[node];
            let weights: Vec<f64> = nd
                .prior_h
                .iter()
                .zip(&nd.unactionable)
                .map(|(&p, &u)| if u { 0.0 } else { p })
                .collect();
            let h = sample_index(&weights, rng)?;
            if self.nodes[node].expansions[h].is_some() {
                return Some(h);
            }
            let hotspot = self.nodes[node].hotspots[h];
            let proposals = propose(self.ev, state, &hotspot, &self.params.proposal);
            if proposals.is_empty() {
                self.nodes[node].unactionable[h] = true;
                continue;
            }
            let scores: Vec<f64> = proposals.iter().map(|p| p.predicted_delta_j).collect();
            let k = proposals.len();
            self.nodes[node].expansions[h] = Some(Expansion {
                prior: softmax(&scores, self.params.tau_proposal),
                proposals,
                n: vec![0; k],
                w: vec![0.0; k],
                child: vec![None; k],
            });
            return Some(h);
        }
    }

    fn simulate(&mut self, rng: &mut ChaCha8Rng) -> Result<Episode> {
        let mut state = self.root_state.clone();
        let mut node = 0;
        let mut path = Vec::new();
        while path.len() < self.params.depth {
            let Some(h) = self.pick_hotspot(node, &state, rng) else { break };
            let (r, reg) = {
                let e = self.nodes[node].expansions[h].as_ref().expect("expanded");
                let r = puct_select(&e.w, &e.n, &e.prior, self.params.puct_c);
                (r, e.proposals[r].regulation.clone())
            };
            let applied = self.ev.apply(&state, &reg)?;
            path.push(EpisodeStep { node, hotspot: h, proposal: r, delta_j: applied.delta.delta_j });
            let existing = self.nodes[node].expansions[h].as_ref().expect("expanded").child[r];
            node = match existing {
                Some(c) => c,
                None => {
                    let child = self.make_node(child_key(self.nodes[node].key, &reg), &applied.state);
                    self.nodes.push(child);
                    let id = self.nodes.len() - 1;
                    self.nodes[path.last().expect("nonempty").node].expansions[h].as_mut().expect("expanded").child[r] = Some(id);
                    id
                }
            };
            state = applied.state;
        }
        let mut g = 0.0;
        let mut discount = 1.0;
        for step in &path {
            g += discount * step.delta_j;
            discount *= self.params.gamma;
        }
        for step in &path {
            let nd = &mut self.nodes[step.node];
            nd.visits += 1;
            let e = nd.expansions[step.hotspot].as_mut().expect("expanded");
            e.n[step.proposal] += 1;
            e.w[step.proposal] += g;
        }
        Ok(Episode { path, g })
    }

    /// Visited edge with the largest mean value; ties by visits, then order.
    fn best_edge(&self, node: usize) -> Option<(usize, usize)> {
        let mut best: Option<(f64, u64, usize, usize)> = None;
        for (h, e) in self.nodes[node].expansions.iter().enumerate() {
            let Some(e) = e else { continue };
            for r in 0..e.n.len() {
                if e.n[r] == 0 {
                    continue;
                }
                let q = e.w[r] / e.n[r] as f64;
                let better = match best {
                    None => true,
                    Some((bq, bn, _, _)) => q > bq || (q == bq && e.n[r] > bn),
                };
                if better {
                    best = Some((q, e.n[r], h, r));
                }
            }
        }
        best.map(|b| (b.2, b.3))
    }

    /// Principal variation re-evaluated from the root and cut at its best
    /// cumulative prefix, so trailing non-improving steps are dropped.
    fn principal_variation(&self, max_len: usize) -> Result<Vec<Regulation>> {
        let mut node = 0;
        let mut state = self.root_state.clone();
        let mut regs = Vec::new();
        let (mut cum, mut best, mut best_len) = (0.0, 0.0, 0);
        while regs.len() < max_len {
            let Some((h, r)) = self.best_edge(node) else { break };
            let e = self.nodes[node].expansions[h].as_ref().expect("expanded");
            let reg = e.proposals[r].regulation.clone();
            let applied = self.ev.apply(&state, &reg)?;
            cum += applied.delta.delta_j;
            regs.push(reg);
            if cum > best {
                best = cum;
                best_len = regs.len();
            }
            state = applied.state;
            match e.child[r] {
                Some(c) => node = c,
                None => break,
            }
        }
        regs.truncate(best_len);
        Ok(regs)
    }

    fn root_edges(&self) -> Vec<RootEdge> {
        let root = &self.nodes[0];
        let mut out = Vec::new();
        for (h, e) in root.expansions.iter().enumerate() {
            let Some(e) = e else { continue };
            for (r, p) in e.proposals.iter().enumerate() {
                out.push(RootEdge {
                    hotspot: root.hotspots[h],
                    hotspot_prior: root.prior_h[h],
                    regulation: p.regulation.clone(),
                    predicted_delta_j: p.predicted_delta_j,
                    prior: e.prior[r],
                    visits: e.n[r],
                    q: if e.n[r] > 0 { e.w[r] / e.n[r] as f64 } else { 0.0 },
                });
            }
        }
        out
    }
}

struct Searched {
    regs: Vec<Regulation>,
    simulations: usize,
    nodes: usize,
    best_return: f64,
    root: Vec<RootEdge>,
}

fn search_once(
    ev: &Evaluator,
    params: &SearchParams,
    state: State,
    seed: u64,
    commit: usize,
    stop: &Stop,
) -> Result<Searched> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = Tree::new(ev, params, state);
    let mut best_return = f64::NEG_INFINITY;
    let mut simulations = 0;
    for _ in 0..params.sims {
        if stop.expired() {
            break;
        }
        let ep = tree.simulate(&mut rng)?;
        simulations += 1;
        if ep.path.is_empty() {
            // terminal root: every further simulation is identical
            break;
        }
        best_return = best_return.max(ep.g);
    }
    Ok(Searched {
        regs: tree.principal_variation(commit)?,
        simulations,
        nodes: tree.nodes.len(),
        best_return: if best_return.is_finite() { best_return } else { 0.0 },
        root: tree.root_edges(),
    })
}

/// Runs the search from the undelayed baseline.
pub fn run_search(ev: &Evaluator, params: &SearchParams) -> Result<SearchOutcome> {
    run_search_from(ev, &ev.baseline(), params)
}

/// Runs the search from `root` and commits according to `params.commit_mode`.
/// The returned plan's steps are relative to `root`.
pub fn run_search_from(ev: &Evaluator, root: &State, params: &SearchParams) -> Result<SearchOutcome> {
    run_search_cancellable(ev, root, params, &AtomicBool::new(false))
}

struct Stop<'c> {
    deadline: Option<Instant>,
    cancel: &'c AtomicBool,
}

impl Stop<'_> {
    fn expired(&self) -> bool {
        self.cancel.load(Ordering::Relaxed) || self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

/// Like [`run_search_from`], but stops simulating as soon as `cancel` is set;
/// whatever the tree holds at that point is committed.
pub fn run_search_cancellable(ev: &Evaluator, root: &State, params: &SearchParams, cancel: &AtomicBool) -> Result<SearchOutcome> {
    params.validate()?;
    let start = Instant::now();
    let stop = Stop { deadline: params.time_budget_ms.map(|ms| start + std::time::Duration::from_millis(ms)), cancel };
    let mut log = RunLog::new("mcts");
    let mut plan = Plan { delays: root.delays.clone(), ..Plan::empty(ev.scenario(), ev.weights()) };
    let mut state = root.clone();
    let first;
    let (mut simulations, mut tree_nodes, best_return);
    match params.commit_mode {
        CommitMode::All => {
            let s = search_once(ev, params, root.clone(), params.seed, params.commit_depth, &stop)?;
            (simulations, tree_nodes, best_return) = (s.simulations, s.nodes, s.best_return);
            first = s.root;
            for reg in s.regs {
                state = commit_step(ev, &mut plan, &mut log, state, reg, start)?;
            }
        }
        CommitMode::RecedingHorizon => {
            let mut round = 0u64;
            let mut root_edges = None;
            (simulations, tree_nodes) = (0, 0);
            let mut best = 0.0;
            while plan.len() < params.commit_depth {
                if round > 0 && stop.expired() {
                    break;
                }
                let s = search_once(ev, params, state.clone(), params.seed.wrapping_add(round), params.commit_depth, &stop)?;
                simulations += s.simulations;
                tree_nodes += s.nodes;
                if round == 0 {
                    best = s.best_return;
                }
                root_edges.get_or_insert(s.root);
                let Some(reg) = s.regs.into_iter().next() else { break };
                state = commit_step(ev, &mut plan, &mut log, state, reg, start)?;
                round += 1;
            }
            best_return = best;
            first = root_edges.unwrap_or_default();
        }
    }
    plan.delays = state.delays;
    Ok(SearchOutcome { plan, log, simulations, tree_nodes, best_return, root: first })
}

fn commit_step(ev: &Evaluator, plan: &mut Plan, log: &mut RunLog, state: State, reg: Regulation, start: Instant) -> Result<State> {
    let applied = ev.apply(&state, &reg)?;
    let step = crate::eval::step_record(&applied);
    log.push(
        step.delta_j,
        step.j_cap,
        step.j_delay,
        reg.describe(ev.scenario()),
        ev.evaluations(),
        start.elapsed().as_millis() as u64,
    );
    plan.regulations.push(reg);
    plan.steps.push(step);
    Ok(applied.state)
}

/// Best proposal over all current hotspots, if any.
pub fn best_proposal(ev: &Evaluator, state: &State, params: &ProposalParams) -> Option<Proposal> {
    let mut best: Option<Proposal> = None;
    for (h, _) in candidate_hotspots(state, usize::MAX) {
        for p in propose(ev, state, &h, params) {
            if best.as_ref().is_none_or(|b| p.predicted_delta_j > b.predicted_delta_j) {
                best = Some(p);
            }
        }
    }
    best
}

/// Best-regulation-proposal policy: repeatedly commit the single best
/// immediate proposal until the budget is used or nothing improves.
pub fn brpp(ev: &Evaluator, budget: usize, params: &ProposalParams) -> Result<PlanRun> {
    let start = Instant::now();
    let mut log = RunLog::new("brpp");
    let mut plan = Plan::empty(ev.scenario(), ev.weights());
    let mut state = ev.baseline();
    while plan.len() < budget {
        let Some(p) = best_proposal(ev, &state, params) else { break };
        if p.predicted_delta_j <= 0.0 {
            break;
        }
        state = commit_step(ev, &mut plan, &mut log, state, p.regulation, start)?;
    }
    plan.delays = state.delays;
    Ok(PlanRun { plan, log })
}

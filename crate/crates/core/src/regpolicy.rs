//! KL-regularized node policies: closed-form inner and outer optimizers and
//! an empirical check that the search's selection rule tracks them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::mcts::{candidate_hotspots, hotspot_priors, sample_index, softmax, SearchParams};
use crate::proposal::propose;

pub const ALPHA_TOL: f64 = 1e-13;
pub const ALPHA_MAX_ITERS: usize = 200;

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::domain("prior must have at least one entry"));
    }
    if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::domain("prior entries must be strictly positive"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("prior sums to {s}, not 1")));
    }
    Ok(())
}

fn normalization(q: &[f64], prior: &[f64], lambda: f64, alpha: f64) -> f64 {
    q.iter().zip(prior).map(|(qr, p)| lambda * p / (alpha - qr)).sum()
}

/// Root α > max q of Σ λ·P_r/(α − q_r) = 1, by bisection.
///
/// The sum is decreasing in α. At max q + λ·P_argmax the argmax term alone
/// equals one, and at max q + λ every term is at most λ·P_r/λ, so the root
/// lies between the two.
pub fn solve_alpha(q: &[f64], prior: &[f64], lambda: f64) -> Result<f64> {
    check_distribution(prior)?;
    if q.len() != prior.len() {
        return Err(Error::domain("q and prior lengths differ"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain("lambda must be positive"));
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("q must be finite"));
    }
    let (arg, qmax) = q.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, x)| if x > b.1 { (i, x) } else { b });
    let mut lo = qmax + lambda * prior[arg];
    let mut hi = qmax + lambda;
    for _ in 0..ALPHA_MAX_ITERS {
        // the policy's largest entry is λP/(α − qmax), so the gap sets the scale
        if hi - lo <= ALPHA_TOL * (lo - qmax) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if normalization(q, prior, lambda, mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub alpha: f64,
    pub policy: Vec<f64>,
    pub value: f64,
}

/// Maximizer of q·y − λ·KL(P‖y) over the simplex, with its value.
pub fn inner_policy(q: &[f64], prior: &[f64], lambda: f64) -> Result<InnerSolution> {
    let alpha = solve_alpha(q, prior, lambda)?;
    let policy: Vec<f64> = q.iter().zip(prior).map(|(qr, p)| lambda * p / (alpha - qr)).collect();
    let value = alpha - lambda - lambda * q.iter().zip(prior).map(|(qr, p)| p * ((alpha - qr) / lambda).ln()).sum::<f64>();
    Ok(InnerSolution { alpha, policy, value })
}

/// The inner objective q·y − λ·KL(P‖y) at an arbitrary point.
pub fn inner_objective(q: &[f64], prior: &[f64], lambda: f64, y: &[f64]) -> f64 {
    let lin: f64 = q.iter().zip(y).map(|(a, b)| a * b).sum();
    let kl: f64 = prior.iter().zip(y).map(|(p, yr)| if *p > 0.0 { p * (p / yr).ln() } else { 0.0 }).sum();
    lin - lambda * kl
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterSolution {
    pub policy: Vec<f64>,
    pub value: f64,
}

/// x* ∝ P_H·exp(U/τ) and G = τ·log Σ P_H·exp(U/τ).
pub fn outer_policy(u: &[f64], prior: &[f64], tau: f64) -> Result<OuterSolution> {
    check_distribution(prior)?;
    if u.len() != prior.len() {
        return Err(Error::domain("U and prior lengths differ"));
    }
    if !(tau > 0.0) {
        return Err(Error::domain("tau must be positive"));
    }
    let logits: Vec<f64> = u.iter().zip(prior).map(|(x, p)| x / tau + p.ln()).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let policy = logits.iter().map(|l| (l - m).exp() / z).collect();
    Ok(OuterSolution { policy, value: tau * (m + z.ln()) })
}

/// x·U − τ·KL(x‖P_H).
pub fn outer_objective(u: &[f64], prior: &[f64], tau: f64, x: &[f64]) -> f64 {
    let lin: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
    let kl: f64 = x.iter().zip(prior).map(|(xh, p)| if *xh > 0.0 { xh * (xh / p).ln() } else { 0.0 }).sum();
    lin - tau * kl
}

/// PUCT regularization strength after `n` visits over `k` actions.
pub fn lambda_n(c: f64, n: u64, k: usize) -> f64 {
    c * (n as f64).sqrt() / (k as f64 + n as f64)
}

/// Outer Hoeffding term plus the worst inner tracking term.
pub fn anytime_bound(n: u64, num_hotspots: usize, delta: f64, proposals: &[usize], visits: &[u64]) -> f64 {
    let outer = ((2.0 * num_hotspots as f64 / delta).ln() / (2.0 * n as f64)).sqrt();
    let inner = proposals
        .iter()
        .zip(visits)
        .map(|(&r, &nh)| (r as f64 - 1.0) / (r as f64 + nh as f64))
        .fold(0.0, f64::max);
    outer + inner
}

/// Frozen bandit: ground-truth proposal values and priors per hotspot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditSpec {
    pub q: Vec<Vec<f64>>,
    pub proposal_prior: Vec<Vec<f64>>,
    pub hotspot_prior: Vec<f64>,
    pub tau_hotspot: f64,
    pub puct_c: f64,
}

impl BanditSpec {
    pub fn validate(&self) -> Result<()> {
        if self.q.is_empty() || self.q.len() != self.proposal_prior.len() || self.q.len() != self.hotspot_prior.len() {
            return Err(Error::validation("bandit needs matching, nonempty hotspot lists"));
        }
        check_distribution(&self.hotspot_prior)?;
        for (q, p) in self.q.iter().zip(&self.proposal_prior) {
            if q.len() != p.len() {
                return Err(Error::validation("q and proposal prior lengths differ"));
            }
            check_distribution(p)?;
        }
        if !(self.tau_hotspot > 0.0) || !(self.puct_c > 0.0) {
            return Err(Error::validation("tau and puct_c must be positive"));
        }
        Ok(())
    }

    /// Random instance with values in [0, scale) and Dirichlet-like priors.
    pub fn random(num_hotspots: usize, num_proposals: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut dist = |k: usize| {
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let hotspot_prior = dist(num_hotspots);
        let proposal_prior = (0..num_hotspots).map(|_| dist(num_proposals)).collect();
        let q = (0..num_hotspots).map(|_| (0..num_proposals).map(|_| rng.gen::<f64>() * scale).collect()).collect();
        BanditSpec { q, proposal_prior, hotspot_prior, tau_hotspot: 6.0, puct_c: 64.0 }
    }

    /// Freezes the root node of a scenario: one arm per current hotspot with
    /// its proposals, q set to the predicted improvement, and priors as the
    /// planner computes them.
    pub fn from_root(ev: &Evaluator, params: &SearchParams) -> Result<Self> {
        let state = ev.baseline();
        let mut q = Vec::new();
        let mut proposal_prior = Vec::new();
        let mut severities = Vec::new();
        for (h, sev) in candidate_hotspots(&state, params.max_hotspots_per_node) {
            let props = propose(ev, &state, &h, &params.proposal);
            if props.is_empty() {
                continue;
            }
            let dj: Vec<f64> = props.iter().map(|p| p.predicted_delta_j).collect();
            proposal_prior.push(softmax(&dj, params.tau_proposal));
            q.push(dj);
            severities.push(sev);
        }
        if q.is_empty() {
            return Err(Error::validation("scenario root has no actionable hotspot"));
        }
        let hotspot_prior = hotspot_priors(&severities, params.tau_hotspot);
        let spec = BanditSpec { q, proposal_prior, hotspot_prior, tau_hotspot: params.tau_hotspot, puct_c: params.puct_c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_hotspots(&self) -> usize {
        self.q.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingPoint {
    pub n: u64,
    pub sup_distance: f64,
    pub bound: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingParams {
    pub checkpoints: Vec<u64>,
    pub delta: f64,
    pub seed: u64,
    /// Standard deviation of observation noise; `None` keeps q frozen.
    pub noise_sd: Option<f64>,
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams { checkpoints: vec![10, 20, 50, 100, 200, 500, 1000], delta: 0.05, seed: 0, noise_sd: None }
    }
}

/// The proposal the selection rule picks next at one hotspot.
fn select_proposal(q: &[f64], prior: &[f64], n: &[u64], c: f64) -> usize {
    let sqrt_total = (n.iter().sum::<u64>() as f64).sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..q.len() {
        let score = q[i] + c * prior[i] * sqrt_total / (1.0 + n[i] as f64);
        if score > best_score || (score == best_score && prior[i] > prior[best]) {
            best = i;
            best_score = score;
        }
    }
    best
}

/// Sup-norm distance between the empirical joint policy and the regularized
/// optimum at the current visit counts.
fn joint_distance(spec: &BanditSpec, outer: &[f64], visits: &[Vec<u64>], total: u64) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for (h, counts) in visits.iter().enumerate() {
        let nh: u64 = counts.iter().sum();
        let k = counts.len();
        let lambda = lambda_n(spec.puct_c, nh.max(1), k);
        let target = inner_policy(&spec.q[h], &spec.proposal_prior[h], lambda)?.policy;
        let pi_h = nh as f64 / total as f64;
        for r in 0..k {
            let pi_r = (1.0 + counts[r] as f64) / (k as f64 + nh as f64);
            sup = sup.max((pi_h * pi_r - outer[h] * target[r]).abs());
        }
    }
    Ok(sup)
}

/// Runs the selection loop on a frozen bandit: hotspots are sampled from
/// the tempered softmax of their inner values, proposals by PUCT on q.
pub fn tracking_experiment(spec: &BanditSpec, params: &TrackingParams) -> Result<Vec<TrackingPoint>> {
    spec.validate()?;
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(Error::validation("delta must be in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = params.noise_sd.map(|sd| Normal::new(0.0, sd)).transpose().map_err(|e| Error::validation(e.to_string()))?;
    let values: Vec<f64> = spec
        .q
        .iter()
        .zip(&spec.proposal_prior)
        .map(|(q, p)| {
            let lambda = lambda_n(spec.puct_c, 1, q.len());
            inner_policy(q, p, lambda).map(|s| s.value)
        })
        .collect::<Result<_>>()?;
    let outer = outer_policy(&values, &spec.hotspot_prior, spec.tau_hotspot)?.policy;

    let mut visits: Vec<Vec<u64>> = spec.q.iter().map(|q| vec![0; q.len()]).collect();
    let mut sums: Vec<Vec<f64>> = spec.q.iter().map(|q| vec![0.0; q.len()]).collect();
    let mut checkpoints = params.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let last = checkpoints.last().copied().unwrap_or(0);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    for n in 1..=last {
        let h = sample_index(&outer, &mut rng).expect("outer policy is positive");
        let q_est: Vec<f64> = match noise {
            None => spec.q[h].clone(),
            Some(_) => sums[h].iter().zip(&visits[h]).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect(),
        };
        let r = select_proposal(&q_est, &spec.proposal_prior[h], &visits[h], spec.puct_c);
        visits[h][r] += 1;
        sums[h][r] += spec.q[h][r] + noise.map_or(0.0, |d| d.sample(&mut rng));
        if next < checkpoints.len() && checkpoints[next] == n {
            let sizes: Vec<usize> = spec.q.iter().map(Vec::len).collect();
            let nh: Vec<u64> = visits.iter().map(|v| v.iter().sum()).collect();
            let bound = anytime_bound(n, spec.num_hotspots(), params.delta, &sizes, &nh);
            let d = joint_distance(spec, &outer, &visits, n)?;
            out.push(TrackingPoint { n, sup_distance: d, bound, violated: d > bound });
            next += 1;
        }
    }
    Ok(out)
}

pub fn tracking_csv(points: &[TrackingPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "sup_distance", "bound", "violated"])?;
    for p in points {
        w.write_record([p.n.to_string(), format!("{:.9}", p.sup_distance), format!("{:.9}", p.bound), p.violated.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

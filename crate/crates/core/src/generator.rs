//! Seeded synthetic traffic: flights sampled along route templates with a
//! departure-peak mixture, plus capacity profiles and named fixture presets.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{build_demand, CapacityProfile, Crossing, DelayVector, Flight, Scenario, TimeGrid, TimeOfDay, VolumeId};

/// A volume sequence with travel minutes between consecutive entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteTemplate {
    pub volumes: Vec<u32>,
    pub travel_min: Vec<f64>,
    pub weight: f64,
}

/// One Gaussian component of the first-entry time mixture, in minutes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub mean_min: f64,
    pub spread_min: f64,
    pub weight: f64,
}

/// Capacity override over an inclusive bin range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityDip {
    pub tv: u32,
    pub start_bin: usize,
    pub end_bin: usize,
    pub capacity: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub num_flights: usize,
    pub num_volumes: usize,
    pub routes: Vec<RouteTemplate>,
    pub peaks: Vec<Peak>,
    pub base_capacity: u32,
    /// When set, a volume with traffic gets this fraction of its peak
    /// rolling-hour demand as capacity instead of `base_capacity`.
    pub auto_capacity_factor: Option<f64>,
    pub dips: Vec<CapacityDip>,
    /// Uniform jitter added to each travel leg, in minutes.
    pub travel_jitter_min: f64,
    pub seed: u64,
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_flights == 0 || self.num_volumes == 0 {
            return Err(Error::validation("num_flights and num_volumes must be positive"));
        }
        if self.routes.is_empty() || self.peaks.is_empty() {
            return Err(Error::validation("at least one route template and one peak are required"));
        }
        for (i, r) in self.routes.iter().enumerate() {
            if r.volumes.is_empty() || r.travel_min.len() + 1 != r.volumes.len() {
                return Err(Error::validation(format!("route {i}: need one travel time per leg")));
            }
            if r.travel_min.iter().any(|&t| !(t > 0.0)) || !(r.weight > 0.0) {
                return Err(Error::validation(format!("route {i}: travel times and weight must be positive")));
            }
            let mut seen = r.volumes.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != r.volumes.len() || seen.last().is_some_and(|&v| v as usize >= self.num_volumes) {
                return Err(Error::validation(format!("route {i}: volumes must be distinct and in range")));
            }
            if r.travel_min.iter().any(|&t| t <= self.travel_jitter_min) {
                return Err(Error::validation(format!("route {i}: travel time must exceed the jitter")));
            }
        }
        if self.peaks.iter().any(|p| !(p.weight > 0.0) || !(p.spread_min >= 0.0)) {
            return Err(Error::validation("peak weights must be positive and spreads non-negative"));
        }
        if !(self.travel_jitter_min >= 0.0) {
            return Err(Error::validation("travel jitter must be non-negative"));
        }
        if let Some(f) = self.auto_capacity_factor {
            if !(f > 0.0) {
                return Err(Error::validation("auto capacity factor must be positive"));
            }
        }
        for d in &self.dips {
            if d.tv as usize >= self.num_volumes || d.start_bin > d.end_bin || d.end_bin >= 96 {
                return Err(Error::validation(format!("invalid capacity dip {d:?}")));
            }
        }
        Ok(())
    }
}

/// Random route templates over `num_volumes` volumes.
pub fn random_routes(
    num_routes: usize,
    num_volumes: usize,
    len: (usize, usize),
    travel: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<RouteTemplate> {
    let all: Vec<u32> = (0..num_volumes as u32).collect();
    (0..num_routes)
        .map(|_| {
            let k = rng.gen_range(len.0..=len.1).min(num_volumes);
            let volumes: Vec<u32> = all.choose_multiple(rng, k).copied().collect();
            let travel_min = (1..k).map(|_| (rng.gen_range(travel.0..=travel.1) * 10.0).round() / 10.0).collect();
            RouteTemplate { volumes, travel_min, weight: rng.gen_range(0.5..1.5) }
        })
        .collect()
}

fn sample_flight(params: &GeneratorParams, routes: &WeightedIndex<f64>, peaks: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> Option<(usize, Vec<TimeOfDay>)> {
    let route_idx = routes.sample(rng);
    let r = &params.routes[route_idx];
    let p = &params.peaks[peaks.sample(rng)];
    let mut t = if p.spread_min > 0.0 {
        Normal::new(p.mean_min, p.spread_min).expect("valid normal").sample(rng)
    } else {
        p.mean_min
    };
    let mut times = vec![t];
    for &leg in &r.travel_min {
        let j = if params.travel_jitter_min > 0.0 {
            rng.gen_range(-params.travel_jitter_min..=params.travel_jitter_min)
        } else {
            0.0
        };
        t += leg + j;
        times.push(t);
    }
    if times[0] < 0.0 || *times.last().expect("nonempty") >= 1440.0 {
        return None;
    }
    let ticks: Vec<TimeOfDay> = times.into_iter().map(TimeOfDay::from_minutes).collect();
    // rounding to tenths must keep entries strictly increasing and inside the day
    let ok = ticks.windows(2).all(|w| w[0] < w[1]) && ticks.last().expect("nonempty").ticks() < 14400;
    ok.then_some((route_idx, ticks))
}

pub fn generate(params: &GeneratorParams) -> Result<Scenario> {
    params.validate()?;
    let grid = TimeGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let routes = WeightedIndex::new(params.routes.iter().map(|r| r.weight)).map_err(|e| Error::validation(e.to_string()))?;
    let peaks = WeightedIndex::new(params.peaks.iter().map(|p| p.weight)).map_err(|e| Error::validation(e.to_string()))?;
    let mut flights = Vec::with_capacity(params.num_flights);
    for i in 0..params.num_flights {
        let mut drawn = None;
        for _ in 0..1000 {
            drawn = sample_flight(params, &routes, &peaks, &mut rng);
            if drawn.is_some() {
                break;
            }
        }
        let (r, times) = drawn.ok_or_else(|| Error::validation("peaks place flights outside the day"))?;
        flights.push(Flight {
            id: format!("F{i:04}"),
            crossings: params.routes[r]
                .volumes
                .iter()
                .zip(times)
                .map(|(&v, entry)| Crossing { tv: VolumeId(v), entry, exit: None })
                .collect(),
        });
    }
    let names: Vec<String> = (0..params.num_volumes).map(|i| format!("TV{i:02}")).collect();
    let caps = CapacityProfile::uniform(params.num_volumes, grid.num_bins, params.base_capacity.max(1));
    let mut scenario = Scenario::new(grid, names.clone(), flights.clone(), caps.clone())?;
    let mut caps = caps;
    if let Some(f) = params.auto_capacity_factor {
        let demand = build_demand(&scenario, &DelayVector::zeros(scenario.num_flights()));
        for v in scenario.volume_ids() {
            let peak = demand.demand_row(v).iter().copied().max().unwrap_or(0);
            if peak > 0 {
                let c = ((peak as f64 * f).round() as u32).max(1);
                for t in 0..grid.num_bins {
                    caps.set(v, t, c);
                }
            }
        }
    }
    for d in &params.dips {
        for t in d.start_bin..=d.end_bin {
            caps.set(VolumeId(d.tv), t, d.capacity);
        }
    }
    if params.auto_capacity_factor.is_some() || !params.dips.is_empty() {
        scenario = Scenario::new(grid, names, flights, caps)?;
    }
    Ok(scenario)
}

pub const PRESETS: [&str; 5] = ["default", "cascade", "two-flow", "bandit", "cascade-ordering"];

fn route(volumes: &[u32], travel: f64) -> RouteTemplate {
    RouteTemplate { volumes: volumes.to_vec(), travel_min: vec![travel; volumes.len() - 1], weight: 1.0 }
}

/// Desk-scale random network: long routes with short legs (overlapping
/// volumes are entered minutes apart), three daily peaks, and capacity tied
/// to each volume's own peak.
pub fn desk_params(num_flights: usize, num_volumes: usize, seed: u64) -> GeneratorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_2047);
    let routes = random_routes((num_volumes * 3 / 5).max(2), num_volumes, (8, 12), (2.0, 6.0), &mut rng);
    GeneratorParams {
        num_flights,
        num_volumes,
        routes,
        peaks: vec![
            Peak { mean_min: 480.0, spread_min: 40.0, weight: 0.35 },
            Peak { mean_min: 750.0, spread_min: 50.0, weight: 0.35 },
            Peak { mean_min: 1050.0, spread_min: 45.0, weight: 0.3 },
        ],
        base_capacity: 30,
        auto_capacity_factor: Some(0.8),
        dips: Vec::new(),
        travel_jitter_min: 1.5,
        seed,
    }
}

/// Seed at which a preset's documented property holds: greedy capping goes
/// negative on "cascade"; on "cascade-ordering" the best two-step plan is not
/// the greedy one.
pub fn shipped_seed(name: &str) -> u64 {
    match name {
        "cascade" => 1,
        "cascade-ordering" => 57,
        _ => 0,
    }
}

pub fn preset(name: &str, seed: u64) -> Result<GeneratorParams> {
    let p = match name {
        "default" => desk_params(500, 20, seed),
        "two-flow" => GeneratorParams {
            num_flights: 80,
            num_volumes: 13,
            routes: vec![route(&[1, 2, 3, 0, 4, 5, 6], 3.0), route(&[7, 8, 9, 0, 10, 11, 12], 3.0)],
            peaks: vec![Peak { mean_min: 600.0, spread_min: 15.0, weight: 1.0 }],
            base_capacity: 40,
            auto_capacity_factor: Some(0.7),
            dips: Vec::new(),
            travel_jitter_min: 0.5,
            seed,
        },
        "bandit" => GeneratorParams {
            num_flights: 30,
            num_volumes: 5,
            routes: vec![route(&[1, 0, 2], 12.0), route(&[3, 0, 4], 12.0)],
            peaks: vec![Peak { mean_min: 600.0, spread_min: 10.0, weight: 1.0 }],
            base_capacity: 60,
            auto_capacity_factor: None,
            dips: vec![CapacityDip { tv: 0, start_bin: 0, end_bin: 95, capacity: 22 }],
            travel_jitter_min: 1.0,
            seed,
        },
        "cascade" => GeneratorParams {
            peaks: vec![
                Peak { mean_min: 600.0, spread_min: 15.0, weight: 0.5 },
                Peak { mean_min: 675.0, spread_min: 15.0, weight: 0.5 },
            ],
            ..desk_params(200, 8, seed)
        },
        "cascade-ordering" => GeneratorParams {
            peaks: vec![Peak { mean_min: 600.0, spread_min: 25.0, weight: 1.0 }],
            ..desk_params(60, 6, seed)
        },
        other => return Err(Error::validation(format!("unknown preset {other:?}"))),
    };
    Ok(p)
}

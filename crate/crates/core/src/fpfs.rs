//! First-planned-first-served metering queue and plan composition.
//!
//! Slot arithmetic is exact: times are integer tenths of a minute and the slot
//! spacing `60 / rate` minutes is carried as the rational `600 / rate` ticks.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{DelayVector, Scenario, TimeOfDay, TimeGrid, VolumeId, Weights};

/// Bins a regulation stays active after its nominal end, so that the rolling
/// hour starting at the last bin is metered too.
pub const EFFECTIVE_MARGIN_BINS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocatorConfig {
    pub max_delay_per_flight_min: u32,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        AllocatorConfig { max_delay_per_flight_min: 120 }
    }
}

/// A metering order at a control volume.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Regulation {
    pub cv: VolumeId,
    pub t_start: usize,
    pub t_end: usize,
    pub rate_per_hour: u32,
    pub members: BTreeSet<usize>,
    pub anchor_margin_bins: u32,
}

impl Regulation {
    pub fn new(
        cv: VolumeId,
        t_start: usize,
        t_end: usize,
        rate_per_hour: u32,
        members: impl IntoIterator<Item = usize>,
    ) -> Self {
        Regulation {
            cv,
            t_start,
            t_end,
            rate_per_hour,
            members: members.into_iter().collect(),
            anchor_margin_bins: 0,
        }
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.cv.index() >= scenario.num_volumes() {
            return Err(Error::domain(format!("unknown control volume index {}", self.cv.0)));
        }
        if self.t_start > self.t_end || self.t_end >= scenario.grid().num_bins {
            return Err(Error::domain(format!(
                "invalid regulation window [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if self.rate_per_hour == 0 {
            return Err(Error::domain("regulation rate must be at least 1 per hour"));
        }
        if let Some(&m) = self.members.iter().find(|&&m| m >= scenario.num_flights()) {
            return Err(Error::domain(format!("unknown member flight index {m}")));
        }
        Ok(())
    }

    /// Inclusive bounds of the window during which entries are metered.
    pub fn effective_window(&self, grid: &TimeGrid) -> (usize, usize) {
        (self.t_start, grid.clip_end(self.t_end, EFFECTIVE_MARGIN_BINS))
    }

    /// Short human-readable descriptor, e.g. `LFPG:32-35@18/h#12`.
    pub fn describe(&self, scenario: &Scenario) -> String {
        format!(
            "{}:{}-{}@{}/h#{}",
            scenario.volume_name(self.cv),
            self.t_start,
            self.t_end,
            self.rate_per_hour,
            self.members.len()
        )
    }
}

/// One metered flight in slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeteredFlight {
    pub flight: usize,
    pub entry: TimeOfDay,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotAssignment {
    pub flight: usize,
    pub entry: TimeOfDay,
    pub slot_index: i64,
    /// Assigned slot in minutes after midnight.
    pub slot_min: f64,
    pub delay_min: u32,
    pub unclamped_delay_min: u32,
    pub clamped: bool,
}

/// Member flights crossing the control volume whose delay-shifted entry falls
/// in the effective window, ordered by shifted entry then flight id.
pub fn regulated_flights(
    scenario: &Scenario,
    delays: &DelayVector,
    reg: &Regulation,
) -> Result<Vec<MeteredFlight>> {
    if reg.cv.index() >= scenario.num_volumes() {
        return Err(Error::domain(format!("unknown control volume index {}", reg.cv.0)));
    }
    let grid = scenario.grid();
    let (lo, hi) = reg.effective_window(grid);
    let mut out: Vec<MeteredFlight> = scenario
        .entries_at(reg.cv)
        .iter()
        .filter(|e| reg.members.contains(&e.flight))
        .filter_map(|e| {
            let shifted = e.entry.shifted(delays.get(e.flight));
            let bin = grid.bin_of_time(shifted)?;
            (lo..=hi).contains(&bin).then_some(MeteredFlight {
                flight: e.flight,
                entry: shifted,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.entry
            .cmp(&b.entry)
            .then_with(|| scenario.flight(a.flight).id.cmp(&scenario.flight(b.flight).id))
    });
    Ok(out)
}

/// Runs the slot recurrence `m_j = max(m_{j-1} + 1, ceil((e_j - s_0) / sigma))`
/// over flights already in queue order. Delays are rounded up to whole minutes
/// and clamped to `max_delay_min`.
pub fn allocate(
    reg: &Regulation,
    flights: &[MeteredFlight],
    grid: &TimeGrid,
    max_delay_min: u32,
) -> Result<Vec<SlotAssignment>> {
    let rate = reg.rate_per_hour as i64;
    if rate == 0 {
        return Err(Error::domain("regulation rate must be at least 1 per hour"));
    }
    let hour_ticks = 60 * TimeOfDay::TICKS_PER_MIN;
    let anchor = (reg.t_start as i64 - reg.anchor_margin_bins as i64) * grid.bin_ticks();
    let mut prev = -1i64;
    let mut out = Vec::with_capacity(flights.len());
    for f in flights {
        let offset = f.entry.ticks() - anchor;
        let earliest = div_ceil(offset * rate, hour_ticks);
        let m = (prev + 1).max(earliest);
        prev = m;
        // slot - entry in ticks is (anchor*rate + m*hour_ticks - entry*rate) / rate
        let num = m * hour_ticks - offset * rate;
        debug_assert!(num >= 0);
        let raw = div_ceil(num, rate * TimeOfDay::TICKS_PER_MIN) as u32;
        let delay = raw.min(max_delay_min);
        out.push(SlotAssignment {
            flight: f.flight,
            entry: f.entry,
            slot_index: m,
            slot_min: (anchor as f64 + (m * hour_ticks) as f64 / rate as f64)
                / TimeOfDay::TICKS_PER_MIN as f64,
            delay_min: delay,
            unclamped_delay_min: raw,
            clamped: raw > max_delay_min,
        });
    }
    Ok(out)
}

fn div_ceil(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    a.div_euclid(b) + i64::from(a.rem_euclid(b) != 0)
}

/// Applies one regulation on top of `delays`, returning the slot assignments.
/// Cumulative per-flight delay is capped at the allocator maximum.
pub fn apply_regulation(
    scenario: &Scenario,
    delays: &mut DelayVector,
    reg: &Regulation,
    cfg: &AllocatorConfig,
) -> Result<Vec<SlotAssignment>> {
    reg.validate(scenario)?;
    let queue = regulated_flights(scenario, delays, reg)?;
    let mut slots = allocate(reg, &queue, scenario.grid(), cfg.max_delay_per_flight_min)?;
    for a in &mut slots {
        let before = delays.get(a.flight);
        let total = before + a.delay_min;
        if total > cfg.max_delay_per_flight_min {
            a.clamped = true;
            a.delay_min = cfg.max_delay_per_flight_min - before;
        }
        delays.set(a.flight, before + a.delay_min);
    }
    Ok(slots)
}

/// Sequential composition: each regulation sees the entries already shifted by
/// all earlier ones and delays accumulate.
pub fn compose_sequential(
    scenario: &Scenario,
    regulations: &[Regulation],
    cfg: &AllocatorConfig,
) -> Result<DelayVector> {
    let mut delays = DelayVector::zeros(scenario.num_flights());
    for reg in regulations {
        apply_regulation(scenario, &mut delays, reg, cfg)?;
    }
    Ok(delays)
}

/// Most-penalizing-regulation composition: every regulation is allocated
/// against the undelayed baseline and each flight keeps its largest delay.
pub fn compose_mpr(
    scenario: &Scenario,
    regulations: &[Regulation],
    cfg: &AllocatorConfig,
) -> Result<DelayVector> {
    let zero = DelayVector::zeros(scenario.num_flights());
    let mut out = zero.clone();
    for reg in regulations {
        reg.validate(scenario)?;
        let queue = regulated_flights(scenario, &zero, reg)?;
        for a in allocate(reg, &queue, scenario.grid(), cfg.max_delay_per_flight_min)? {
            if a.delay_min > out.get(a.flight) {
                out.set(a.flight, a.delay_min);
            }
        }
    }
    Ok(out)
}

/// Objective bookkeeping for one committed regulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub delta_j: f64,
    pub delta_cap: i64,
    pub delta_delay: i64,
    pub j_cap: u64,
    pub j_delay: u64,
    pub j_total: f64,
}

/// An ordered regulation sequence with its cumulative delays and per-step log.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub regulations: Vec<Regulation>,
    pub delays: DelayVector,
    pub steps: Vec<StepRecord>,
    pub weights: Weights,
}

impl Plan {
    pub fn empty(scenario: &Scenario, weights: Weights) -> Self {
        Plan {
            regulations: Vec::new(),
            delays: DelayVector::zeros(scenario.num_flights()),
            steps: Vec::new(),
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.regulations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regulations.is_empty()
    }

    pub fn total_delta_j(&self) -> f64 {
        // an empty float sum is -0.0
        self.steps.iter().fold(0.0, |acc, s| acc + s.delta_j)
    }
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dJ={} (cap {}, delay {}) J={}",
            self.delta_j, self.delta_cap, self.delta_delay, self.j_total
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{CapacityProfile, Crossing, Flight};

    fn scenario_at(entries: &[(&str, f64)]) -> Scenario {
        let flights = entries
            .iter()
            .map(|&(id, e)| Flight {
                id: id.into(),
                crossings: vec![Crossing { tv: VolumeId(0), entry: TimeOfDay::from_minutes(e), exit: None }],
            })
            .collect();
        Scenario::new(
            TimeGrid::default(),
            vec!["CV".into()],
            flights,
            CapacityProfile::uniform(1, 96, 10),
        )
        .unwrap()
    }

    fn q(entries: &[f64]) -> Vec<MeteredFlight> {
        entries
            .iter()
            .enumerate()
            .map(|(i, &e)| MeteredFlight { flight: i, entry: TimeOfDay::from_minutes(e) })
            .collect()
    }

    #[test]
    fn hand_derived_allocation() {
        // sigma = 15, anchor 480: m = 1, 2, 3 -> slots 495, 510, 525
        let reg = Regulation::new(VolumeId(0), 32, 32, 4, 0..3);
        let out = allocate(&reg, &q(&[481.0, 483.0, 484.0]), &TimeGrid::default(), 120).unwrap();
        let d: Vec<u32> = out.iter().map(|a| a.delay_min).collect();
        assert_eq!(d, vec![14, 27, 41]);
        assert_eq!(out[0].slot_min, 495.0);
        assert_eq!(out[2].slot_min, 525.0);
    }

    #[test]
    fn flight_at_anchor_has_no_delay() {
        let reg = Regulation::new(VolumeId(0), 32, 32, 4, [0]);
        let out = allocate(&reg, &q(&[480.0]), &TimeGrid::default(), 120).unwrap();
        assert_eq!(out[0].delay_min, 0);
    }

    #[test]
    fn high_rate_spaced_entries_are_free() {
        let reg = Regulation::new(VolumeId(0), 32, 35, 60, 0..4);
        let out = allocate(&reg, &q(&[480.0, 482.0, 490.0, 500.0]), &TimeGrid::default(), 120).unwrap();
        assert!(out.iter().all(|a| a.delay_min == 0));
    }

    #[test]
    fn zero_rate_is_rejected() {
        let reg = Regulation::new(VolumeId(0), 32, 32, 0, [0]);
        assert!(allocate(&reg, &q(&[480.0]), &TimeGrid::default(), 120).is_err());
    }

    #[test]
    fn fractional_spacing_rounds_delay_up() {
        // rate 7: sigma = 60/7 min; second flight gets slot 480 + 8.571.. -> 9 min
        let reg = Regulation::new(VolumeId(0), 32, 32, 7, 0..2);
        let out = allocate(&reg, &q(&[480.0, 480.0]), &TimeGrid::default(), 120).unwrap();
        assert_eq!(out[1].delay_min, 9);
        assert!((out[1].slot_min - (480.0 + 60.0 / 7.0)).abs() < 1e-9);
    }

    #[test]
    fn clamps_and_flags() {
        let reg = Regulation::new(VolumeId(0), 32, 32, 1, 0..3);
        let out = allocate(&reg, &q(&[480.0, 480.0, 480.0]), &TimeGrid::default(), 90).unwrap();
        assert_eq!(out[1].delay_min, 60);
        assert!(!out[1].clamped);
        assert_eq!(out[2].delay_min, 90);
        assert_eq!(out[2].unclamped_delay_min, 120);
        assert!(out[2].clamped);
    }

    #[test]
    fn regulated_flights_window_and_ties() {
        // window ends at bin 40; effective window runs through bin 43
        let s = scenario_at(&[("B", 600.0), ("A", 600.0), ("C", 659.9), ("D", 660.0), ("E", 599.9)]);
        let reg = Regulation::new(VolumeId(0), 40, 40, 10, 0..5);
        let got: Vec<&str> = regulated_flights(&s, &DelayVector::zeros(5), &reg)
            .unwrap()
            .iter()
            .map(|m| s.flight(m.flight).id.as_str())
            .collect();
        assert_eq!(got, vec!["A", "B", "C"]);

        let none = Regulation::new(VolumeId(0), 40, 40, 10, []);
        assert!(regulated_flights(&s, &DelayVector::zeros(5), &none).unwrap().is_empty());

        let bad = Regulation::new(VolumeId(3), 40, 40, 10, [0]);
        assert!(regulated_flights(&s, &DelayVector::zeros(5), &bad).is_err());
    }

    #[test]
    fn sequential_single_regulation_equals_allocate() {
        let s = scenario_at(&[("A", 481.0), ("B", 483.0), ("C", 484.0)]);
        let reg = Regulation::new(VolumeId(0), 32, 32, 4, 0..3);
        let d = compose_sequential(&s, std::slice::from_ref(&reg), &AllocatorConfig::default()).unwrap();
        assert_eq!(d.as_slice(), &[14, 27, 41]);
        let m = compose_mpr(&s, std::slice::from_ref(&reg), &AllocatorConfig::default()).unwrap();
        assert_eq!(d, m);
        assert_eq!(compose_sequential(&s, &[], &AllocatorConfig::default()).unwrap(), DelayVector::zeros(3));
    }

    #[test]
    fn cumulative_delay_is_capped() {
        let s = scenario_at(&[("A", 480.0), ("B", 480.0)]);
        let reg = Regulation::new(VolumeId(0), 32, 32, 1, 0..2);
        let cfg = AllocatorConfig { max_delay_per_flight_min: 70 };
        let mut delays = DelayVector::zeros(2);
        apply_regulation(&s, &mut delays, &reg, &cfg).unwrap();
        assert_eq!(delays.as_slice(), &[0, 60]);
        // B now enters at 540 (bin 36), outside the window of a second copy at 32
        let reg2 = Regulation::new(VolumeId(0), 33, 36, 1, 0..2);
        let slots = apply_regulation(&s, &mut delays, &reg2, &cfg).unwrap();
        assert_eq!(slots.len(), 1);
        assert!(slots[0].clamped);
        assert_eq!(slots[0].unclamped_delay_min, 15);
        assert_eq!(delays.get(1), 70);
    }
}

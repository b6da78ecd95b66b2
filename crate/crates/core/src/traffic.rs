//! Core traffic model: time grid, flights, capacities, demand and the objective.
//!
//! Entry times are held in tenths of a minute so that every quantity derived
//! from them (bins, slot arithmetic, delays) is exact integer arithmetic.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A time of day in tenths of a minute after midnight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeOfDay(i64);

impl TimeOfDay {
    pub const TICKS_PER_MIN: i64 = 10;

    /// Rounds to the nearest tenth of a minute.
    pub fn from_minutes(minutes: f64) -> Self {
        TimeOfDay((minutes * Self::TICKS_PER_MIN as f64).round() as i64)
    }

    pub const fn from_ticks(ticks: i64) -> Self {
        TimeOfDay(ticks)
    }

    pub const fn ticks(self) -> i64 {
        self.0
    }

    pub fn minutes(self) -> f64 {
        self.0 as f64 / Self::TICKS_PER_MIN as f64
    }

    /// The same instant moved later by whole minutes.
    pub fn shifted(self, delay_min: u32) -> Self {
        TimeOfDay(self.0 + delay_min as i64 * Self::TICKS_PER_MIN)
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.abs();
        write!(f, "{sign}{}.{}", abs / 10, abs % 10)
    }
}

/// Partition of the planning day into fixed-width bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub bin_width_min: u32,
    pub num_bins: usize,
    pub rolling_window_bins: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            bin_width_min: 15,
            num_bins: 96,
            rolling_window_bins: 4,
        }
    }
}

impl TimeGrid {
    pub fn new(bin_width_min: u32, num_bins: usize, rolling_window_bins: usize) -> Result<Self> {
        if bin_width_min == 0 || num_bins == 0 || rolling_window_bins == 0 {
            return Err(Error::validation("time grid dimensions must be positive"));
        }
        if bin_width_min as usize * num_bins != 1440 {
            return Err(Error::validation(format!(
                "bin width {bin_width_min} x {num_bins} bins does not cover 1440 minutes"
            )));
        }
        if rolling_window_bins * bin_width_min as usize != 60 {
            return Err(Error::validation(format!(
                "rolling window of {rolling_window_bins} bins is not one hour"
            )));
        }
        Ok(TimeGrid {
            bin_width_min,
            num_bins,
            rolling_window_bins,
        })
    }

    pub fn day_minutes(&self) -> u32 {
        self.bin_width_min * self.num_bins as u32
    }

    pub fn day_ticks(&self) -> i64 {
        self.day_minutes() as i64 * TimeOfDay::TICKS_PER_MIN
    }

    pub fn bin_ticks(&self) -> i64 {
        self.bin_width_min as i64 * TimeOfDay::TICKS_PER_MIN
    }

    /// Entry-bin map `floor(t / bin_width)` for a time in minutes.
    pub fn bin_of(&self, minutes: f64) -> Result<usize> {
        if !(0.0..self.day_minutes() as f64).contains(&minutes) {
            return Err(Error::domain(format!("time {minutes} outside the planning day")));
        }
        Ok((minutes / self.bin_width_min as f64).floor() as usize)
    }

    /// Bin containing `t`, or `None` when `t` falls outside the day.
    pub fn bin_of_time(&self, t: TimeOfDay) -> Option<usize> {
        if t.ticks() < 0 || t.ticks() >= self.day_ticks() {
            None
        } else {
            Some((t.ticks() / self.bin_ticks()) as usize)
        }
    }

    pub fn bin_start_min(&self, bin: usize) -> u32 {
        bin as u32 * self.bin_width_min
    }

    /// Last bin of the window `[t_end, t_end + margin]` clipped to the grid.
    pub fn clip_end(&self, t_end: usize, margin: usize) -> usize {
        (t_end + margin).min(self.num_bins - 1)
    }

    /// `HH:MM` label of the start of `bin`.
    pub fn bin_label(&self, bin: usize) -> String {
        let m = self.bin_start_min(bin);
        format!("{:02}:{:02}", m / 60, m % 60)
    }
}

/// Index of a traffic volume inside a [`Scenario`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VolumeId(pub u32);

impl VolumeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crossing {
    pub tv: VolumeId,
    pub entry: TimeOfDay,
    /// Stored for completeness; demand counting is entry based.
    pub exit: Option<TimeOfDay>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flight {
    pub id: String,
    pub crossings: Vec<Crossing>,
}

impl Flight {
    pub fn crossing_at(&self, tv: VolumeId) -> Option<&Crossing> {
        self.crossings.iter().find(|c| c.tv == tv)
    }
}

/// Hourly entry capacity per (volume, rolling-window start bin).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CapacityProfile {
    num_bins: usize,
    values: Vec<u32>,
}

impl CapacityProfile {
    pub fn uniform(num_volumes: usize, num_bins: usize, capacity: u32) -> Self {
        CapacityProfile {
            num_bins,
            values: vec![capacity; num_volumes * num_bins],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u32>>) -> Result<Self> {
        let num_bins = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_bins) {
            return Err(Error::validation("capacity rows have unequal lengths"));
        }
        Ok(CapacityProfile {
            num_bins,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn num_volumes(&self) -> usize {
        if self.num_bins == 0 {
            0
        } else {
            self.values.len() / self.num_bins
        }
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn get(&self, tv: VolumeId, bin: usize) -> u32 {
        self.values[tv.index() * self.num_bins + bin]
    }

    pub fn set(&mut self, tv: VolumeId, bin: usize, capacity: u32) {
        self.values[tv.index() * self.num_bins + bin] = capacity;
    }

    pub fn row(&self, tv: VolumeId) -> &[u32] {
        let start = tv.index() * self.num_bins;
        &self.values[start..start + self.num_bins]
    }

    /// Minimum capacity over the inclusive bin range.
    pub fn window_min(&self, tv: VolumeId, lo: usize, hi: usize) -> u32 {
        self.row(tv)[lo..=hi].iter().copied().min().unwrap_or(0)
    }
}

/// One flight's entry into a volume, indexed by volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VolumeEntry {
    pub flight: usize,
    pub entry: TimeOfDay,
}

/// The immutable planning world.
#[derive(Clone, Debug)]
pub struct Scenario {
    grid: TimeGrid,
    volumes: Vec<String>,
    volume_lookup: HashMap<String, VolumeId>,
    flights: Vec<Flight>,
    flight_lookup: HashMap<String, usize>,
    capacities: CapacityProfile,
    by_volume: Vec<Vec<VolumeEntry>>,
    footprints: Vec<Vec<VolumeId>>,
}

impl PartialEq for Scenario {
    /// Equality of the defining data; lookups and indexes are derived from it.
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.volumes == other.volumes
            && self.flights == other.flights
            && self.capacities == other.capacities
    }
}

impl Scenario {
    pub fn new(
        grid: TimeGrid,
        volumes: Vec<String>,
        flights: Vec<Flight>,
        capacities: CapacityProfile,
    ) -> Result<Self> {
        let mut volume_lookup = HashMap::with_capacity(volumes.len());
        for (i, name) in volumes.iter().enumerate() {
            if volume_lookup.insert(name.clone(), VolumeId(i as u32)).is_some() {
                return Err(Error::validation(format!("duplicate volume {name}")));
            }
        }
        if capacities.num_volumes() != volumes.len() || capacities.num_bins() != grid.num_bins {
            if !(volumes.is_empty() && capacities.num_volumes() == 0) {
                return Err(Error::validation(format!(
                    "capacity profile is {}x{}, expected {}x{}",
                    capacities.num_volumes(),
                    capacities.num_bins(),
                    volumes.len(),
                    grid.num_bins
                )));
            }
        }

        let mut flight_lookup = HashMap::with_capacity(flights.len());
        let mut by_volume = vec![Vec::new(); volumes.len()];
        let mut footprints = Vec::with_capacity(flights.len());
        for (fi, flight) in flights.iter().enumerate() {
            if flight_lookup.insert(flight.id.clone(), fi).is_some() {
                return Err(Error::validation(format!("duplicate flight {}", flight.id)));
            }
            if flight.crossings.is_empty() {
                return Err(Error::validation(format!("flight {} has no crossings", flight.id)));
            }
            let mut footprint = Vec::with_capacity(flight.crossings.len());
            let mut prev: Option<TimeOfDay> = None;
            for c in &flight.crossings {
                if c.tv.index() >= volumes.len() {
                    return Err(Error::validation(format!(
                        "flight {} crosses unknown volume index {}",
                        flight.id, c.tv.0
                    )));
                }
                if c.entry.ticks() < 0 || c.entry.ticks() >= grid.day_ticks() {
                    return Err(Error::validation(format!(
                        "flight {} entry {} outside [0, {})",
                        flight.id,
                        c.entry,
                        grid.day_minutes()
                    )));
                }
                if let Some(exit) = c.exit {
                    if exit <= c.entry {
                        return Err(Error::validation(format!(
                            "flight {} exit {} not after entry {} at {}",
                            flight.id, exit, c.entry, volumes[c.tv.index()]
                        )));
                    }
                }
                if prev.is_some_and(|p| c.entry < p) {
                    return Err(Error::validation(format!(
                        "flight {} crossings are not in entry order",
                        flight.id
                    )));
                }
                prev = Some(c.entry);
                if footprint.contains(&c.tv) {
                    return Err(Error::validation(format!(
                        "flight {} enters {} more than once",
                        flight.id,
                        volumes[c.tv.index()]
                    )));
                }
                footprint.push(c.tv);
                by_volume[c.tv.index()].push(VolumeEntry {
                    flight: fi,
                    entry: c.entry,
                });
            }
            footprint.sort_unstable();
            footprints.push(footprint);
        }

        let capacities = if volumes.is_empty() {
            CapacityProfile::uniform(0, grid.num_bins, 0)
        } else {
            capacities
        };

        Ok(Scenario {
            grid,
            volumes,
            volume_lookup,
            flights,
            flight_lookup,
            capacities,
            by_volume,
            footprints,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn volumes(&self) -> &[String] {
        &self.volumes
    }

    pub fn num_volumes(&self) -> usize {
        self.volumes.len()
    }

    pub fn volume_name(&self, tv: VolumeId) -> &str {
        &self.volumes[tv.index()]
    }

    pub fn volume_id(&self, name: &str) -> Option<VolumeId> {
        self.volume_lookup.get(name).copied()
    }

    pub fn volume_ids(&self) -> impl Iterator<Item = VolumeId> {
        (0..self.volumes.len() as u32).map(VolumeId)
    }

    pub fn flights(&self) -> &[Flight] {
        &self.flights
    }

    pub fn num_flights(&self) -> usize {
        self.flights.len()
    }

    pub fn flight(&self, index: usize) -> &Flight {
        &self.flights[index]
    }

    pub fn flight_index(&self, id: &str) -> Option<usize> {
        self.flight_lookup.get(id).copied()
    }

    pub fn capacities(&self) -> &CapacityProfile {
        &self.capacities
    }

    /// All planned entries into `tv`, in flight order.
    pub fn entries_at(&self, tv: VolumeId) -> &[VolumeEntry] {
        &self.by_volume[tv.index()]
    }

    /// Sorted set of volumes the flight crosses during the day.
    pub fn footprint(&self, flight: usize) -> &[VolumeId] {
        &self.footprints[flight]
    }
}

/// Per-flight integer delay in minutes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct DelayVector(Vec<u32>);

impl DelayVector {
    pub fn zeros(num_flights: usize) -> Self {
        DelayVector(vec![0; num_flights])
    }

    pub fn from_vec(values: Vec<u32>) -> Self {
        DelayVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, flight: usize) -> u32 {
        self.0.get(flight).copied().unwrap_or(0)
    }

    pub fn set(&mut self, flight: usize, delay: u32) {
        self.0[flight] = delay;
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&d| d as u64).sum()
    }

    pub fn delayed_count(&self) -> usize {
        self.0.iter().filter(|&&d| d > 0).count()
    }

    pub fn max(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Flights whose delay differs from `other`, with (old, new) values.
    pub fn diff<'a>(&'a self, other: &'a DelayVector) -> impl Iterator<Item = (usize, u32, u32)> + 'a {
        self.0
            .iter()
            .zip(other.0.iter())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, (&a, &b))| (i, a, b))
    }
}

/// Entry counts, rolling-hour demand and excess per (volume, bin).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DemandGrid {
    num_bins: usize,
    window: usize,
    entries: Vec<u32>,
    demand: Vec<u32>,
    excess: Vec<u32>,
    total_excess: u64,
}

impl DemandGrid {
    pub fn num_volumes(&self) -> usize {
        if self.num_bins == 0 {
            0
        } else {
            self.entries.len() / self.num_bins
        }
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    fn at(&self, tv: VolumeId, bin: usize) -> usize {
        tv.index() * self.num_bins + bin
    }

    pub fn entry(&self, tv: VolumeId, bin: usize) -> u32 {
        self.entries[self.at(tv, bin)]
    }

    pub fn demand(&self, tv: VolumeId, bin: usize) -> u32 {
        self.demand[self.at(tv, bin)]
    }

    pub fn excess(&self, tv: VolumeId, bin: usize) -> u32 {
        self.excess[self.at(tv, bin)]
    }

    pub fn entry_row(&self, tv: VolumeId) -> &[u32] {
        let s = tv.index() * self.num_bins;
        &self.entries[s..s + self.num_bins]
    }

    pub fn demand_row(&self, tv: VolumeId) -> &[u32] {
        let s = tv.index() * self.num_bins;
        &self.demand[s..s + self.num_bins]
    }

    pub fn excess_row(&self, tv: VolumeId) -> &[u32] {
        let s = tv.index() * self.num_bins;
        &self.excess[s..s + self.num_bins]
    }

    /// Sum of excess over every cell, i.e. the capacity term of the objective.
    pub fn total_excess(&self) -> u64 {
        self.total_excess
    }

    /// Excess summed over `[lo, hi]` at one volume.
    pub fn segment_excess(&self, tv: VolumeId, lo: usize, hi: usize) -> u64 {
        self.excess_row(tv)[lo..=hi].iter().map(|&g| g as u64).sum()
    }

    /// Builds a grid directly from per-volume entry-count rows.
    pub fn from_entry_rows(rows: &[Vec<u32>], capacities: &CapacityProfile, window: usize) -> Self {
        let num_bins = rows.first().map_or(capacities.num_bins(), Vec::len);
        let mut grid = DemandGrid {
            num_bins,
            window,
            entries: rows.iter().flatten().copied().collect(),
            demand: vec![0; rows.len() * num_bins],
            excess: vec![0; rows.len() * num_bins],
            total_excess: 0,
        };
        grid.recompute(capacities);
        grid
    }

    fn recompute(&mut self, capacities: &CapacityProfile) {
        let nb = self.num_bins;
        let mut total = 0u64;
        for v in 0..self.num_volumes() {
            let tv = VolumeId(v as u32);
            for t in 0..nb {
                let hi = (t + self.window).min(nb);
                let d: u32 = self.entries[v * nb + t..v * nb + hi].iter().sum();
                let g = d.saturating_sub(capacities.get(tv, t));
                self.demand[v * nb + t] = d;
                self.excess[v * nb + t] = g;
                total += g as u64;
            }
        }
        self.total_excess = total;
    }

    fn bump(&mut self, capacities: &CapacityProfile, tv: VolumeId, bin: usize, add: bool) {
        let base = tv.index() * self.num_bins;
        if add {
            self.entries[base + bin] += 1;
        } else {
            self.entries[base + bin] -= 1;
        }
        let lo = bin.saturating_sub(self.window - 1);
        for t in lo..=bin {
            let i = base + t;
            if add {
                self.demand[i] += 1;
            } else {
                self.demand[i] -= 1;
            }
            let g = self.demand[i].saturating_sub(capacities.get(tv, t));
            self.total_excess = self.total_excess + g as u64 - self.excess[i] as u64;
            self.excess[i] = g;
        }
    }

    /// Moves one flight's entries from delay `old` to delay `new` in place.
    pub fn shift_flight(&mut self, scenario: &Scenario, flight: usize, old: u32, new: u32) {
        if old == new {
            return;
        }
        let grid = scenario.grid();
        let caps = scenario.capacities();
        for c in &scenario.flight(flight).crossings {
            if let Some(b) = grid.bin_of_time(c.entry.shifted(old)) {
                self.bump(caps, c.tv, b, false);
            }
            if let Some(b) = grid.bin_of_time(c.entry.shifted(new)) {
                self.bump(caps, c.tv, b, true);
            }
        }
    }

    /// Applies every per-flight change between two delay vectors.
    pub fn apply_delay_change(&mut self, scenario: &Scenario, from: &DelayVector, to: &DelayVector) {
        for (f, old, new) in from.diff(to) {
            self.shift_flight(scenario, f, old, new);
        }
    }
}

/// Counts entries under the given delays; entries pushed past the end of the
/// day are dropped from the grid.
pub fn build_demand(scenario: &Scenario, delays: &DelayVector) -> DemandGrid {
    let grid = scenario.grid();
    let nb = grid.num_bins;
    let nv = scenario.num_volumes();
    let mut entries = vec![0u32; nv * nb];
    for (fi, flight) in scenario.flights().iter().enumerate() {
        let d = delays.get(fi);
        for c in &flight.crossings {
            if let Some(b) = grid.bin_of_time(c.entry.shifted(d)) {
                entries[c.tv.index() * nb + b] += 1;
            }
        }
    }
    let mut out = DemandGrid {
        num_bins: nb,
        window: grid.rolling_window_bins,
        entries,
        demand: vec![0; nv * nb],
        excess: vec![0; nv * nb],
        total_excess: 0,
    };
    out.recompute(scenario.capacities());
    out
}

/// A maximal run of overloaded bins at one volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hotspot {
    pub tv: VolumeId,
    pub t_start: usize,
    pub t_end: usize,
}

/// All maximal positive-excess runs, sorted by (volume, start bin).
pub fn detect_hotspots(demand: &DemandGrid) -> Vec<Hotspot> {
    let mut out = Vec::new();
    for v in 0..demand.num_volumes() {
        let tv = VolumeId(v as u32);
        let row = demand.excess_row(tv);
        let mut start = None;
        for (t, &g) in row.iter().enumerate() {
            match (g > 0, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    out.push(Hotspot { tv, t_start: s, t_end: t - 1 });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(Hotspot { tv, t_start: s, t_end: row.len() - 1 });
        }
    }
    out
}

/// Objective weights: one unit of excess costs `w_cap`, one minute of delay `w_delay`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_cap: f64,
    pub w_delay: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { w_cap: 10.0, w_delay: 1.0 }
    }
}

impl Weights {
    pub fn new(w_cap: f64, w_delay: f64) -> Result<Self> {
        if !(w_cap >= 0.0 && w_delay >= 0.0) {
            return Err(Error::domain("objective weights must be non-negative"));
        }
        Ok(Weights { w_cap, w_delay })
    }

    pub fn combine(&self, j_cap: u64, j_delay: u64) -> f64 {
        self.w_cap * j_cap as f64 + self.w_delay * j_delay as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub j_cap: u64,
    pub j_delay: u64,
    pub j_total: f64,
    pub weights: Weights,
}

impl ObjectiveBreakdown {
    pub fn from_parts(j_cap: u64, j_delay: u64, weights: Weights) -> Self {
        ObjectiveBreakdown {
            j_cap,
            j_delay,
            j_total: weights.combine(j_cap, j_delay),
            weights,
        }
    }
}

pub fn objective(scenario: &Scenario, delays: &DelayVector, weights: Weights) -> ObjectiveBreakdown {
    let demand = build_demand(scenario, delays);
    ObjectiveBreakdown::from_parts(demand.total_excess(), delays.total(), weights)
}

//! Scenario, plan and report files.
//!
//! Flights: CSV `flight_id,seq,tv_id,entry_min[,exit_min]`, one row per
//! crossing. Capacities: CSV `tv_id,bin,capacity`, or `tv_id,hour,capacity`
//! with each hour expanded to its four bins. Plans and reports: JSON carrying
//! a `schema_version` field.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpfs::{Plan, Regulation, StepRecord};
use crate::metrics::Report;
use crate::runlog::RunLog;
use crate::traffic::{CapacityProfile, Crossing, DelayVector, Flight, Scenario, TimeGrid, TimeOfDay, VolumeId, Weights};

pub const SCHEMA_VERSION: u32 = 1;
pub const FLIGHTS_FILE: &str = "flights.csv";
pub const CAPACITIES_FILE: &str = "capacities.csv";

fn parse_err(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, message: message.into() }
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes())
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, name: &str, path: &str, line: u64) -> Result<&'a str> {
    match rec.get(i) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(parse_err(path, line, format!("missing {name}"))),
    }
}

fn number<T: std::str::FromStr>(s: &str, name: &str, path: &str, line: u64) -> Result<T> {
    s.parse().map_err(|_| parse_err(path, line, format!("invalid {name} {s:?}")))
}

fn minutes(s: &str, name: &str, path: &str, line: u64, grid: &TimeGrid) -> Result<TimeOfDay> {
    let m: f64 = number(s, name, path, line)?;
    if !m.is_finite() {
        return Err(parse_err(path, line, format!("invalid {name} {s:?}")));
    }
    let t = TimeOfDay::from_minutes(m);
    if t.ticks() < 0 || t.ticks() >= grid.day_ticks() {
        return Err(parse_err(path, line, format!("{name} {s} outside [0, {})", grid.day_minutes())));
    }
    Ok(t)
}

/// Parses a capacity table; volumes are numbered in order of first appearance.
pub fn parse_capacities(text: &str, path: &str, grid: &TimeGrid) -> Result<(Vec<String>, CapacityProfile)> {
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    let hourly = match headers.get(1) {
        Some("bin") => false,
        Some("hour") => true,
        other => return Err(parse_err(path, 1, format!("expected header tv_id,bin|hour,capacity, found column {other:?}"))),
    };
    let per_row = if hourly { grid.rolling_window_bins } else { 1 };
    let rows_per_volume = grid.num_bins / per_row;
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<Option<u32>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let tv = field(&rec, 0, "tv_id", path, line)?;
        let slot: usize = number(field(&rec, 1, if hourly { "hour" } else { "bin" }, path, line)?, "bin", path, line)?;
        let cap: u32 = number(field(&rec, 2, "capacity", path, line)?, "capacity", path, line)?;
        if slot >= rows_per_volume {
            return Err(parse_err(path, line, format!("{} {slot} out of range 0..{rows_per_volume}", if hourly { "hour" } else { "bin" })));
        }
        let v = *index.entry(tv.to_string()).or_insert_with(|| {
            names.push(tv.to_string());
            rows.push(vec![None; grid.num_bins]);
            names.len() - 1
        });
        for b in slot * per_row..(slot + 1) * per_row {
            if rows[v][b].replace(cap).is_some() {
                return Err(parse_err(path, line, format!("duplicate capacity for {tv} bin {b}")));
            }
        }
    }
    let mut full = Vec::with_capacity(rows.len());
    for (v, row) in rows.into_iter().enumerate() {
        if let Some(b) = row.iter().position(Option::is_none) {
            return Err(Error::validation(format!("{path}: volume {} has no capacity for bin {b}", names[v])));
        }
        full.push(row.into_iter().map(|c| c.expect("checked")).collect());
    }
    let profile = if full.is_empty() { CapacityProfile::uniform(0, grid.num_bins, 0) } else { CapacityProfile::from_rows(full)? };
    Ok((names, profile))
}

/// Parses a flight table against known volume names.
pub fn parse_flights(text: &str, path: &str, volumes: &[String], grid: &TimeGrid) -> Result<Vec<Flight>> {
    let lookup: HashMap<&str, VolumeId> = volumes.iter().enumerate().map(|(i, n)| (n.as_str(), VolumeId(i as u32))).collect();
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    let expected = ["flight_id", "seq", "tv_id", "entry_min"];
    if headers.len() < 4 || headers.iter().take(4).ne(expected) || (headers.len() > 4 && &headers[4] != "exit_min") {
        return Err(parse_err(path, 1, "expected header flight_id,seq,tv_id,entry_min[,exit_min]"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, (Vec<Crossing>, i64)> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = field(&rec, 0, "flight_id", path, line)?;
        let seq: i64 = number(field(&rec, 1, "seq", path, line)?, "seq", path, line)?;
        let tv_name = field(&rec, 2, "tv_id", path, line)?;
        let tv = *lookup
            .get(tv_name)
            .ok_or_else(|| parse_err(path, line, format!("volume {tv_name} has no capacity")))?;
        let entry = minutes(field(&rec, 3, "entry_min", path, line)?, "entry_min", path, line, grid)?;
        let exit = match rec.get(4) {
            Some(s) if !s.is_empty() => Some(minutes(s, "exit_min", path, line, grid)?),
            _ => None,
        };
        if exit.is_some_and(|x| x <= entry) {
            return Err(parse_err(path, line, "exit_min must be after entry_min"));
        }
        let slot = by_id.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            (Vec::new(), i64::MIN)
        });
        if seq <= slot.1 {
            return Err(parse_err(path, line, format!("flight {id}: seq {seq} not ascending")));
        }
        if slot.0.last().is_some_and(|c| entry < c.entry) {
            return Err(parse_err(path, line, format!("flight {id}: crossings not in entry order")));
        }
        if slot.0.iter().any(|c| c.tv == tv) {
            return Err(parse_err(path, line, format!("flight {id}: enters {tv_name} more than once")));
        }
        slot.1 = seq;
        slot.0.push(Crossing { tv, entry, exit });
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let crossings = by_id.remove(&id).expect("present").0;
            Flight { id, crossings }
        })
        .collect())
}

pub fn parse_scenario(flights_csv: &str, capacities_csv: &str) -> Result<Scenario> {
    let grid = TimeGrid::default();
    let (volumes, caps) = parse_capacities(capacities_csv, CAPACITIES_FILE, &grid)?;
    let flights = parse_flights(flights_csv, FLIGHTS_FILE, &volumes, &grid)?;
    Scenario::new(grid, volumes, flights, caps)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_scenario(flights: &Path, capacities: &Path) -> Result<Scenario> {
    let grid = TimeGrid::default();
    let (volumes, caps) = parse_capacities(&read(capacities)?, &capacities.display().to_string(), &grid)?;
    let flights = parse_flights(&read(flights)?, &flights.display().to_string(), &volumes, &grid)?;
    Scenario::new(grid, volumes, flights, caps)
}

/// Loads `flights.csv` and `capacities.csv` from a directory.
pub fn load_scenario_dir(dir: &Path) -> Result<Scenario> {
    load_scenario(&dir.join(FLIGHTS_FILE), &dir.join(CAPACITIES_FILE))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn flights_csv(scenario: &Scenario) -> Result<String> {
    let with_exit = scenario.flights().iter().any(|f| f.crossings.iter().any(|c| c.exit.is_some()));
    let mut w = csv::Writer::from_writer(Vec::new());
    if with_exit {
        w.write_record(["flight_id", "seq", "tv_id", "entry_min", "exit_min"])?;
    } else {
        w.write_record(["flight_id", "seq", "tv_id", "entry_min"])?;
    }
    for f in scenario.flights() {
        for (seq, c) in f.crossings.iter().enumerate() {
            let mut row = vec![f.id.clone(), seq.to_string(), scenario.volume_name(c.tv).to_string(), c.entry.to_string()];
            if with_exit {
                row.push(c.exit.map(|x| x.to_string()).unwrap_or_default());
            }
            w.write_record(row)?;
        }
    }
    finish(w)
}

pub fn capacities_csv(scenario: &Scenario) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tv_id", "bin", "capacity"])?;
    for tv in scenario.volume_ids() {
        for (b, c) in scenario.capacities().row(tv).iter().enumerate() {
            w.write_record([scenario.volume_name(tv), &b.to_string(), &c.to_string()])?;
        }
    }
    finish(w)
}

/// Nonzero delays as `flight_id,delay_min` rows, in flight order.
pub fn delays_csv(scenario: &Scenario, delays: &DelayVector) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["flight_id", "delay_min"])?;
    for (f, &d) in delays.as_slice().iter().enumerate().filter(|(_, &d)| d > 0) {
        w.write_record([scenario.flight(f).id.as_str(), &d.to_string()])?;
    }
    finish(w)
}

/// Reads a delay table; flights not listed keep zero delay.
pub fn parse_delays(scenario: &Scenario, text: &str, path: &str) -> Result<DelayVector> {
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("flight_id") || headers.get(1) != Some("delay_min") {
        return Err(parse_err(path, 1, "expected header flight_id,delay_min"));
    }
    let mut out = DelayVector::zeros(scenario.num_flights());
    let mut seen = vec![false; scenario.num_flights()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec?;
        let id = field(&rec, 0, "flight_id", path, line)?;
        let f = scenario.flight_index(id).ok_or_else(|| parse_err(path, line, format!("unknown flight {id}")))?;
        if std::mem::replace(&mut seen[f], true) {
            return Err(parse_err(path, line, format!("flight {id} listed twice")));
        }
        out.set(f, number(field(&rec, 1, "delay_min", path, line)?, "delay_min", path, line)?);
    }
    Ok(out)
}

pub fn load_delays(scenario: &Scenario, path: &Path) -> Result<DelayVector> {
    parse_delays(scenario, &read(path)?, &path.display().to_string())
}

pub fn save_scenario_dir(scenario: &Scenario, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(FLIGHTS_FILE), flights_csv(scenario)?)?;
    std::fs::write(dir.join(CAPACITIES_FILE), capacities_csv(scenario)?)?;
    Ok(())
}

/// A regulation with volume and flights named rather than indexed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationDoc {
    pub tv: String,
    pub t_start: usize,
    pub t_end: usize,
    pub window: String,
    pub rate_per_hour: u32,
    #[serde(default)]
    pub anchor_margin_bins: u32,
    pub members: Vec<String>,
}

impl RegulationDoc {
    pub fn from_regulation(scenario: &Scenario, reg: &Regulation) -> Self {
        let grid = scenario.grid();
        let end_min = grid.bin_start_min(reg.t_end) + grid.bin_width_min;
        RegulationDoc {
            tv: scenario.volume_name(reg.cv).to_string(),
            t_start: reg.t_start,
            t_end: reg.t_end,
            window: format!("{}-{:02}:{:02}", grid.bin_label(reg.t_start), end_min / 60, end_min % 60),
            rate_per_hour: reg.rate_per_hour,
            anchor_margin_bins: reg.anchor_margin_bins,
            members: reg.members.iter().map(|&f| scenario.flight(f).id.clone()).collect(),
        }
    }

    pub fn to_regulation(&self, scenario: &Scenario) -> Result<Regulation> {
        let cv = scenario.volume_id(&self.tv).ok_or_else(|| Error::validation(format!("unknown volume {}", self.tv)))?;
        let members = self
            .members
            .iter()
            .map(|id| scenario.flight_index(id).ok_or_else(|| Error::validation(format!("unknown flight {id}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut reg = Regulation::new(cv, self.t_start, self.t_end, self.rate_per_hour, members);
        reg.anchor_margin_bins = self.anchor_margin_bins;
        reg.validate(scenario)?;
        Ok(reg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayEntry {
    pub flight: String,
    pub delay_min: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDoc {
    pub schema_version: u32,
    pub weights: Weights,
    pub regulations: Vec<RegulationDoc>,
    pub steps: Vec<StepRecord>,
    pub total_delta_j: f64,
    /// Nonzero delays only, in flight order.
    pub delays: Vec<DelayEntry>,
}

impl PlanDoc {
    pub fn from_plan(scenario: &Scenario, plan: &Plan) -> Self {
        PlanDoc {
            schema_version: SCHEMA_VERSION,
            weights: plan.weights,
            regulations: plan.regulations.iter().map(|r| RegulationDoc::from_regulation(scenario, r)).collect(),
            steps: plan.steps.clone(),
            total_delta_j: plan.total_delta_j(),
            delays: plan
                .delays
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, &d)| d > 0)
                .map(|(f, &d)| DelayEntry { flight: scenario.flight(f).id.clone(), delay_min: d })
                .collect(),
        }
    }

    pub fn to_plan(&self, scenario: &Scenario) -> Result<Plan> {
        if self.steps.len() != self.regulations.len() {
            return Err(Error::validation("plan has a different number of steps and regulations"));
        }
        let regulations = self.regulations.iter().map(|r| r.to_regulation(scenario)).collect::<Result<Vec<_>>>()?;
        let mut delays = DelayVector::zeros(scenario.num_flights());
        for d in &self.delays {
            let f = scenario.flight_index(&d.flight).ok_or_else(|| Error::validation(format!("unknown flight {}", d.flight)))?;
            delays.set(f, d.delay_min);
        }
        Ok(Plan { regulations, delays, steps: self.steps.clone(), weights: self.weights })
    }
}

/// Checks `schema_version` before decoding the rest of a document.
pub fn from_versioned_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::validation("document has no schema_version"))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion { found: found.min(u32::MAX as u64) as u32, expected: SCHEMA_VERSION });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn to_json<T: Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn plan_json(scenario: &Scenario, plan: &Plan) -> Result<String> {
    to_json(&PlanDoc::from_plan(scenario, plan))
}

pub fn parse_plan(scenario: &Scenario, text: &str) -> Result<Plan> {
    from_versioned_json::<PlanDoc>(text)?.to_plan(scenario)
}

pub fn save_plan(scenario: &Scenario, plan: &Plan, path: &Path) -> Result<()> {
    std::fs::write(path, plan_json(scenario, plan)?)?;
    Ok(())
}

pub fn load_plan(scenario: &Scenario, path: &Path) -> Result<Plan> {
    parse_plan(scenario, &read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub schema_version: u32,
    pub report: Report,
    /// Free-form run facts such as seed and simulation counts.
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub log: Option<RunLog>,
}

impl ReportDoc {
    pub fn new(report: Report) -> Self {
        ReportDoc { schema_version: SCHEMA_VERSION, report, extra: BTreeMap::new(), log: None }
    }
}

pub fn save_report(doc: &ReportDoc, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(doc)?)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<ReportDoc> {
    from_versioned_json(&read(path)?)
}

//! Solution-quality metrics for comparing plans across algorithms.

use serde::{Deserialize, Serialize};

use crate::traffic::{build_demand, CapacityProfile, DelayVector, DemandGrid, ObjectiveBreakdown, Scenario, Weights};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellDiff {
    pub changed_cells: u64,
    pub changed_tvs: u64,
    pub overcap_reductions: u64,
    pub undercap_increases: u64,
    pub beneficial_pairs: u64,
}

/// Compares rolling demand cell by cell. A cell counts as an over-capacity
/// reduction when it was overloaded and its demand fell, and as an
/// under-capacity increase when its demand rose but stays within capacity.
pub fn cell_diff(before: &DemandGrid, after: &DemandGrid, capacities: &CapacityProfile) -> CellDiff {
    assert_eq!(before.num_volumes(), after.num_volumes(), "grids must be aligned");
    assert_eq!(before.num_bins(), after.num_bins(), "grids must be aligned");
    let mut out = CellDiff::default();
    for v in 0..before.num_volumes() {
        let tv = crate::traffic::VolumeId(v as u32);
        let (b, a, c) = (before.demand_row(tv), after.demand_row(tv), capacities.row(tv));
        let mut touched = false;
        for t in 0..b.len() {
            if b[t] == a[t] {
                continue;
            }
            touched = true;
            out.changed_cells += 1;
            if b[t] > c[t] && a[t] < b[t] {
                out.overcap_reductions += 1;
            } else if a[t] > b[t] && a[t] <= c[t] {
                out.undercap_increases += 1;
            }
        }
        out.changed_tvs += touched as u64;
    }
    out.beneficial_pairs = out.overcap_reductions + out.undercap_increases;
    out
}

/// How a flight's delay is attributed to the volumes it crosses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exposure {
    /// Full delay counted at every crossed volume.
    #[default]
    Full,
    /// Delay split across volumes in proportion to dwell time (exit minus
    /// entry); crossings without an exit time count one minute.
    Dwell,
}

pub fn tv_exposure(scenario: &Scenario, delays: &DelayVector, mode: Exposure) -> Vec<f64> {
    let mut x = vec![0.0; scenario.num_volumes()];
    for (f, flight) in scenario.flights().iter().enumerate() {
        let d = delays.get(f) as f64;
        if d == 0.0 {
            continue;
        }
        match mode {
            Exposure::Full => {
                for c in &flight.crossings {
                    x[c.tv.index()] += d;
                }
            }
            Exposure::Dwell => {
                let dwell: Vec<f64> = flight
                    .crossings
                    .iter()
                    .map(|c| c.exit.map_or(1.0, |e| (e.minutes() - c.entry.minutes()).max(0.0)))
                    .collect();
                let total: f64 = dwell.iter().sum();
                if total > 0.0 {
                    for (c, w) in flight.crossings.iter().zip(&dwell) {
                        x[c.tv.index()] += d * w / total;
                    }
                }
            }
        }
    }
    x
}

/// Gini coefficient: mean absolute difference over twice the mean.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - n + 1) x_(i)
    let s: f64 = sorted.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - n as f64 + 1.0) * x).sum();
    (2.0 * s) / (2.0 * n as f64 * total)
}

pub fn tv_gini(scenario: &Scenario, delays: &DelayVector, mode: Exposure) -> f64 {
    gini(&tv_exposure(scenario, delays, mode))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub algorithm: String,
    pub before: ObjectiveBreakdown,
    pub after: ObjectiveBreakdown,
    pub delta_j: f64,
    pub exceedance_reduced: i64,
    pub total_delay_min: u64,
    pub flights_delayed: usize,
    pub max_delay_min: u32,
    /// Delay minutes per unit of exceedance removed; absent when none was removed.
    pub delay_per_exceedance: Option<f64>,
    pub regulations: Option<usize>,
    pub cells: CellDiff,
    pub tv_gini: f64,
    pub tv_gini_dwell: f64,
}

pub fn delay_per_exceedance(exceedance_reduced: i64, delay_min: u64) -> Option<f64> {
    (exceedance_reduced > 0).then(|| delay_min as f64 / exceedance_reduced as f64)
}

pub fn summarize(
    scenario: &Scenario,
    weights: Weights,
    algorithm: &str,
    before: &DelayVector,
    after: &DelayVector,
    regulations: Option<usize>,
) -> Report {
    let (db, da) = (build_demand(scenario, before), build_demand(scenario, after));
    let ob = ObjectiveBreakdown::from_parts(db.total_excess(), before.total(), weights);
    let oa = ObjectiveBreakdown::from_parts(da.total_excess(), after.total(), weights);
    let reduced = ob.j_cap as i64 - oa.j_cap as i64;
    let added = after.total().saturating_sub(before.total());
    let changed: Vec<u32> = after.as_slice().iter().zip(before.as_slice()).map(|(a, b)| a.saturating_sub(*b)).collect();
    let extra = DelayVector::from_vec(changed);
    Report {
        algorithm: algorithm.to_string(),
        before: ob,
        after: oa,
        delta_j: ob.j_total - oa.j_total,
        exceedance_reduced: reduced,
        total_delay_min: added,
        flights_delayed: extra.delayed_count(),
        max_delay_min: extra.max(),
        delay_per_exceedance: delay_per_exceedance(reduced, added),
        regulations,
        cells: cell_diff(&db, &da, scenario.capacities()),
        tv_gini: tv_gini(scenario, &extra, Exposure::Full),
        tv_gini_dwell: tv_gini(scenario, &extra, Exposure::Dwell),
    }
}

impl Report {
    pub const CSV_HEADER: [&'static str; 16] = [
        "algorithm",
        "j_before",
        "j_after",
        "delta_j",
        "j_cap_before",
        "j_cap_after",
        "exceedance_reduced",
        "total_delay_min",
        "flights_delayed",
        "max_delay_min",
        "delay_per_exceedance",
        "regulations",
        "changed_cells",
        "beneficial_pairs",
        "tv_gini",
        "tv_gini_dwell",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |o: Option<String>| o.unwrap_or_default();
        vec![
            self.algorithm.clone(),
            self.before.j_total.to_string(),
            self.after.j_total.to_string(),
            self.delta_j.to_string(),
            self.before.j_cap.to_string(),
            self.after.j_cap.to_string(),
            self.exceedance_reduced.to_string(),
            self.total_delay_min.to_string(),
            self.flights_delayed.to_string(),
            self.max_delay_min.to_string(),
            opt(self.delay_per_exceedance.map(|r| format!("{r:.4}"))),
            opt(self.regulations.map(|r| r.to_string())),
            self.cells.changed_cells.to_string(),
            self.cells.beneficial_pairs.to_string(),
            format!("{:.6}", self.tv_gini),
            format!("{:.6}", self.tv_gini_dwell),
        ]
    }
}

/// Writes report rows as one CSV table.
pub fn reports_to_csv(reports: &[Report]) -> crate::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(Report::CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_row())?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

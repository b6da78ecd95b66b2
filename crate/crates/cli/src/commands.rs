use std::collections::BTreeMap;

use dcbplan_core::baselines::{run_greedy_capping, run_nsga2, run_sa};
use dcbplan_core::eval::Evaluator;
use dcbplan_core::generator::{generate, preset, shipped_seed};
use dcbplan_core::io::{delays_csv, load_delays, load_plan, load_scenario_dir, plan_json, save_scenario_dir, ReportDoc};
use dcbplan_core::mcts::{brpp, run_search};
use dcbplan_core::metrics::{pearson, reports_to_csv, spearman, summarize, Report};
use dcbplan_core::runlog::RunLog;
use dcbplan_core::study::{rate_grid, study_state, StudyRow, STUDY_CSV_HEADER};
use dcbplan_core::traffic::{DelayVector, Scenario, Weights};
use dcbplan_service::{AppState, ServiceConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::output::{algorithm, config, csv_text, data, runtime, CliResult, OutDir};

/// Settings shared by every subcommand.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Ctx {
    pub threads: usize,
    pub max_minutes: Option<f64>,
    pub log_timing: bool,
}

impl Ctx {
    pub fn budget_ms(&self) -> Option<u64> {
        self.max_minutes.map(|m| (m * 60_000.0).round() as u64)
    }

    pub fn parallel(&self) -> bool {
        self.threads > 1
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioSource {
    pub preset: Option<String>,
    pub preset_seed: Option<u64>,
    pub path: Option<String>,
    pub num_flights: usize,
    pub num_volumes: usize,
}

fn load(args: &ScenarioArgs) -> CliResult<(Scenario, ScenarioSource)> {
    let (scenario, preset_name, seed) = match (&args.scenario, &args.preset) {
        (Some(dir), None) => (load_scenario_dir(dir).map_err(data)?, None, None),
        (None, Some(name)) => {
            let seed = args.preset_seed.unwrap_or_else(|| shipped_seed(name));
            let params = preset(name, seed).map_err(config)?;
            (generate(&params).map_err(runtime)?, Some(name.clone()), Some(seed))
        }
        _ => return Err(config("give exactly one of --scenario or --preset")),
    };
    let source = ScenarioSource {
        preset: preset_name,
        preset_seed: seed,
        path: args.scenario.as_ref().map(|p| p.display().to_string()),
        num_flights: scenario.num_flights(),
        num_volumes: scenario.num_volumes(),
    };
    Ok((scenario, source))
}

fn weights(w: &WeightArgs) -> CliResult<Weights> {
    Weights::new(w.w_cap, w.w_delay).map_err(config)
}

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    context: Ctx,
    scenario: Option<&'a ScenarioSource>,
    args: &'a A,
    resolved: Value,
}

fn write_manifest<A: Serialize>(out: &OutDir, ctx: Ctx, command: &str, src: Option<&ScenarioSource>, args: &A, resolved: Value) -> CliResult<()> {
    let m = Manifest {
        tool: "dcbplan",
        version: env!("CARGO_PKG_VERSION"),
        command,
        argv: std::env::args().collect(),
        context: ctx,
        scenario: src,
        args,
        resolved,
    };
    out.write_json("manifest.json", &m)
}

fn write_log(out: &OutDir, name: &str, log: &RunLog, ctx: Ctx) -> CliResult<()> {
    out.write(name, log.to_csv(ctx.log_timing).map_err(runtime)?)
}

fn write_report(out: &OutDir, name: &str, report: &Report, extra: BTreeMap<String, Value>) -> CliResult<()> {
    let mut doc = ReportDoc::new(report.clone());
    doc.extra = extra;
    out.write_json(name, &doc)
}

fn announce(command: &str, report: &Report, out: &OutDir) {
    let line = json!({
        "command": command,
        "algorithm": report.algorithm,
        "delta_j": report.delta_j,
        "exceedance_reduced": report.exceedance_reduced,
        "total_delay_min": report.total_delay_min,
        "regulations": report.regulations,
        "out": out.root().display().to_string(),
    });
    println!("{line}");
}

fn zeros(s: &Scenario) -> DelayVector {
    DelayVector::zeros(s.num_flights())
}

pub fn gen(ctx: Ctx, a: &GenArgs) -> CliResult<()> {
    let seed = a.seed.unwrap_or_else(|| shipped_seed(&a.preset));
    let mut params = preset(&a.preset, seed).map_err(config)?;
    if let Some(n) = a.flights {
        params.num_flights = n;
    }
    params.validate().map_err(config)?;
    let s = generate(&params).map_err(runtime)?;
    let out = OutDir::create(&a.out)?;
    save_scenario_dir(&s, &a.out).map_err(runtime)?;
    let src = ScenarioSource {
        preset: Some(a.preset.clone()),
        preset_seed: Some(seed),
        path: None,
        num_flights: s.num_flights(),
        num_volumes: s.num_volumes(),
    };
    write_manifest(&out, ctx, "gen", Some(&src), a, serde_json::to_value(&params).map_err(runtime)?)?;
    println!("{}", json!({ "command": "gen", "flights": s.num_flights(), "volumes": s.num_volumes(), "out": a.out.display().to_string() }));
    Ok(())
}

pub fn plan(ctx: Ctx, a: &PlanArgs) -> CliResult<()> {
    let (s, src) = load(&a.scenario)?;
    let w = weights(&a.weights)?;
    let params = a.search.params(a.seed, ctx.budget_ms(), ctx.parallel());
    params.validate().map_err(config)?;
    let out = OutDir::create(&a.out)?;
    let ev = Evaluator::new(&s, w, a.weights.alloc());
    let res = run_search(&ev, &params).map_err(algorithm)?;
    let report = summarize(&s, w, "mcts", &zeros(&s), &res.plan.delays, Some(res.plan.len()));
    out.write("plan.json", plan_json(&s, &res.plan).map_err(runtime)?)?;
    write_log(&out, "runlog.csv", &res.log, ctx)?;
    let extra = BTreeMap::from([
        ("seed".to_string(), json!(a.seed)),
        ("simulations".to_string(), json!(res.simulations)),
        ("tree_nodes".to_string(), json!(res.tree_nodes)),
        ("best_return".to_string(), json!(res.best_return)),
    ]);
    write_report(&out, "report.json", &report, extra)?;
    write_manifest(&out, ctx, "plan", Some(&src), a, serde_json::to_value(&params).map_err(runtime)?)?;
    announce("plan", &report, &out);
    Ok(())
}

pub fn baseline(ctx: Ctx, cmd: &BaselineCommand) -> CliResult<()> {
    let run = match cmd {
        BaselineCommand::Sa(a) => &a.run,
        BaselineCommand::Ga(a) => &a.run,
        BaselineCommand::Greedy(a) => &a.run,
    };
    let (s, src) = load(&run.scenario)?;
    let w = weights(&run.weights)?;
    let ev = Evaluator::new(&s, w, run.weights.alloc());
    let out = OutDir::create(&run.out)?;
    let seed = BTreeMap::from([("seed".to_string(), json!(run.seed))]);
    let report = match cmd {
        BaselineCommand::Sa(a) => {
            let p = a.params(ctx.budget_ms());
            p.validate().map_err(config)?;
            let res = run_sa(&ev, &p).map_err(algorithm)?;
            let report = summarize(&s, w, "sa", &zeros(&s), &res.delays, None);
            out.write("delays.csv", delays_csv(&s, &res.delays).map_err(runtime)?)?;
            write_log(&out, "runlog.csv", &res.log, ctx)?;
            write_manifest(&out, ctx, "baseline sa", Some(&src), a, serde_json::to_value(&p).map_err(runtime)?)?;
            report
        }
        BaselineCommand::Ga(a) => {
            let p = a.params(ctx.budget_ms(), ctx.parallel());
            p.validate().map_err(config)?;
            let res = run_nsga2(&ev, &p).map_err(algorithm)?;
            let report = summarize(&s, w, "ga", &zeros(&s), &res.selected.delays, None);
            out.write("delays.csv", delays_csv(&s, &res.selected.delays).map_err(runtime)?)?;
            let front = res.archive.points().into_iter().map(|(c, d)| vec![c.to_string(), d.to_string()]);
            out.write("pareto.csv", csv_text(&["j_cap", "j_delay"], front)?)?;
            write_log(&out, "runlog.csv", &res.selected.log, ctx)?;
            write_manifest(&out, ctx, "baseline ga", Some(&src), a, serde_json::to_value(&p).map_err(runtime)?)?;
            report
        }
        BaselineCommand::Greedy(a) => {
            let p = a.params();
            let res = run_greedy_capping(&ev, &p).map_err(algorithm)?;
            let report = summarize(&s, w, "greedy", &zeros(&s), &res.plan.delays, Some(res.plan.len()));
            out.write("plan.json", plan_json(&s, &res.plan).map_err(runtime)?)?;
            write_log(&out, "runlog.csv", &res.log, ctx)?;
            write_manifest(&out, ctx, "baseline greedy", Some(&src), a, serde_json::to_value(p).map_err(runtime)?)?;
            report
        }
    };
    write_report(&out, "report.json", &report, seed)?;
    announce("baseline", &report, &out);
    Ok(())
}

pub fn ablate(ctx: Ctx, a: &AblateArgs) -> CliResult<()> {
    let (s, src) = load(&a.scenario)?;
    let w = weights(&a.weights)?;
    if a.hotspot_caps.is_empty() {
        return Err(config("--hotspot-caps needs at least one value"));
    }
    let base = a.search.params(a.seed, ctx.budget_ms(), ctx.parallel());
    base.validate().map_err(config)?;
    let out = OutDir::create(&a.out)?;
    let mut reports = Vec::new();
    let mut resolved = Vec::new();
    let mut budget = None;
    for &cap in &a.hotspot_caps {
        let params = dcbplan_core::mcts::SearchParams { max_hotspots_per_node: cap, ..base.clone() };
        params.validate().map_err(config)?;
        let ev = Evaluator::new(&s, w, a.weights.alloc());
        let res = run_search(&ev, &params).map_err(algorithm)?;
        let name = format!("mcts-h{cap}");
        budget.get_or_insert(res.plan.len());
        out.write(&format!("plan_{name}.json"), plan_json(&s, &res.plan).map_err(runtime)?)?;
        write_log(&out, &format!("runlog_{name}.csv"), &res.log, ctx)?;
        reports.push(summarize(&s, w, &name, &zeros(&s), &res.plan.delays, Some(res.plan.len())));
        resolved.push(params);
    }
    // equal regulation count with the first search variant
    let budget = budget.unwrap_or(0);
    let ev = Evaluator::new(&s, w, a.weights.alloc());
    let b = brpp(&ev, budget, &base.proposal).map_err(algorithm)?;
    out.write("plan_brpp.json", plan_json(&s, &b.plan).map_err(runtime)?)?;
    write_log(&out, "runlog_brpp.csv", &b.log, ctx)?;
    reports.push(summarize(&s, w, "brpp", &zeros(&s), &b.plan.delays, Some(b.plan.len())));
    out.write("ablation.csv", reports_to_csv(&reports).map_err(runtime)?)?;
    let resolved = json!({ "search": resolved, "brpp_budget": budget });
    write_manifest(&out, ctx, "ablate", Some(&src), a, resolved)?;
    for r in &reports {
        announce("ablate", r, &out);
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct StudySummary {
    pub flows: usize,
    pub scenarios: usize,
    pub min_flows_met: bool,
    pub spearman_nomrel_scoped: Option<f64>,
    pub spearman_nomrel_network: Option<f64>,
    pub spearman_inload_network: Option<f64>,
    pub pearson_nomrel_scoped: Option<f64>,
    pub pearson_nomrel_network: Option<f64>,
}

pub fn summarize_study(rows: &[StudyRow], scenarios: usize, min_flows: usize) -> StudySummary {
    let col = |f: fn(&StudyRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let nomrel = col(|r| r.nomrel as f64);
    let scoped = col(|r| r.scoped_relief as f64);
    let network = col(|r| r.network_relief as f64);
    let inload = col(|r| r.inload as f64);
    StudySummary {
        flows: rows.len(),
        scenarios,
        min_flows_met: rows.len() >= min_flows,
        spearman_nomrel_scoped: spearman(&nomrel, &scoped),
        spearman_nomrel_network: spearman(&nomrel, &network),
        spearman_inload_network: spearman(&inload, &network),
        pearson_nomrel_scoped: pearson(&nomrel, &scoped),
        pearson_nomrel_network: pearson(&nomrel, &network),
    }
}

pub fn heuristic_study(ctx: Ctx, a: &StudyArgs) -> CliResult<()> {
    let w = weights(&a.weights)?;
    let rates = rate_grid(a.max_rate);
    let out = OutDir::create(&a.out)?;
    let extraction = a.proposal.params(0, false).extraction;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut all: Vec<StudyRow> = Vec::new();
    let mut scenarios = 0;
    let study = |s: &Scenario, label: &str, rows: &mut Vec<Vec<String>>, all: &mut Vec<StudyRow>| -> CliResult<()> {
        let ev = Evaluator::new(s, w, a.weights.alloc());
        let st = ev.baseline();
        let found = study_state(&ev, &st, &extraction, &rates, ctx.parallel()).map_err(algorithm)?;
        rows.extend(found.iter().map(|r| r.csv_row(label, s.volume_name(r.hotspot.tv))));
        all.extend(found);
        Ok(())
    };
    if let Some(dir) = &a.scenario {
        let s = load_scenario_dir(dir).map_err(data)?;
        study(&s, &dir.display().to_string(), &mut rows, &mut all)?;
        scenarios = 1;
    } else {
        let mut seed = a.preset_seed;
        while all.len() < a.min_flows && scenarios < a.max_scenarios {
            let s = generate(&preset(&a.preset, seed).map_err(config)?).map_err(runtime)?;
            study(&s, &format!("{}:{seed}", a.preset), &mut rows, &mut all)?;
            scenarios += 1;
            seed += 1;
        }
    }
    let summary = summarize_study(&all, scenarios, a.min_flows);
    out.write("study.csv", csv_text(&STUDY_CSV_HEADER, rows)?)?;
    out.write_json("summary.json", &summary)?;
    write_manifest(&out, ctx, "heuristic-study", None, a, json!({ "rates": [rates[0], rates[rates.len() - 1]] }))?;
    println!("{}", serde_json::to_string(&summary).map_err(runtime)?);
    Ok(())
}

pub fn sweep(ctx: Ctx, a: &SweepArgs) -> CliResult<()> {
    let (s, src) = load(&a.scenario)?;
    let params = a.search.params(a.seed, ctx.budget_ms(), ctx.parallel());
    params.validate().map_err(config)?;
    if a.w_caps.is_empty() {
        return Err(config("--w-caps needs at least one value"));
    }
    let out = OutDir::create(&a.out)?;
    let mut rows = Vec::new();
    for &w_cap in &a.w_caps {
        let w = Weights::new(w_cap, a.weights.w_delay).map_err(config)?;
        let ev = Evaluator::new(&s, w, a.weights.alloc());
        let (name, plan, log) = match a.algorithm {
            SweepAlgorithm::Mcts => {
                let r = run_search(&ev, &params).map_err(algorithm)?;
                ("mcts", r.plan, r.log)
            }
            SweepAlgorithm::Brpp => {
                let r = brpp(&ev, a.budget, &params.proposal).map_err(algorithm)?;
                ("brpp", r.plan, r.log)
            }
        };
        write_log(&out, &format!("runlog_wcap{w_cap}.csv"), &log, ctx)?;
        let report = summarize(&s, w, name, &zeros(&s), &plan.delays, Some(plan.len()));
        let mut row = vec![w_cap.to_string()];
        row.extend(report.csv_row());
        rows.push(row);
    }
    let mut header = vec!["w_cap"];
    header.extend(Report::CSV_HEADER);
    out.write("frontier.csv", csv_text(&header, rows)?)?;
    write_manifest(&out, ctx, "sweep", Some(&src), a, serde_json::to_value(&params).map_err(runtime)?)?;
    println!("{}", json!({ "command": "sweep", "points": a.w_caps.len(), "out": a.out.display().to_string() }));
    Ok(())
}

pub fn serve(ctx: Ctx, a: &ServeArgs) -> CliResult<()> {
    let (s, _) = load(&a.scenario)?;
    let w = weights(&a.weights)?;
    let addr: std::net::SocketAddr = a.bind.parse().map_err(|e| config(format!("invalid --bind {}: {e}", a.bind)))?;
    let cfg = ServiceConfig {
        cors_origins: a.cors_origins.clone(),
        static_dir: a.static_dir.clone(),
        search_workers: a.search_workers,
        ..ServiceConfig::default()
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.threads.max(1))
        .enable_all()
        .build()
        .map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| runtime(format!("cannot bind {addr}: {e}")))?;
        println!("{}", json!({ "command": "serve", "addr": listener.local_addr().map_err(runtime)?.to_string() }));
        dcbplan_service::serve(listener, AppState::new(s, w, &cfg), &cfg).await.map_err(runtime)
    })
}

pub fn eval(ctx: Ctx, a: &EvalArgs) -> CliResult<()> {
    let (s, src) = load(&a.scenario)?;
    let w = weights(&a.weights)?;
    let ev = Evaluator::new(&s, w, a.weights.alloc());
    let (report, extra) = if let Some(p) = &a.plan {
        let stored = load_plan(&s, p).map_err(data)?;
        let (replayed, _) = ev.replay(&stored.regulations).map_err(data)?;
        let report = summarize(&s, w, "eval", &zeros(&s), &replayed.delays, Some(replayed.len()));
        let extra = BTreeMap::from([
            ("stored_total_delta_j".to_string(), json!(stored.total_delta_j())),
            ("replay_matches_stored".to_string(), json!(replayed.delays == stored.delays && replayed.steps == stored.steps)),
        ]);
        (report, extra)
    } else {
        let path = a.delays.as_ref().ok_or_else(|| config("give --plan or --delays"))?;
        let d = load_delays(&s, path).map_err(data)?;
        (summarize(&s, w, "eval", &zeros(&s), &d, None), BTreeMap::new())
    };
    let mut doc = ReportDoc::new(report);
    doc.extra = extra;
    if let Some(dir) = &a.out {
        let out = OutDir::create(dir)?;
        out.write_json("report.json", &doc)?;
        write_manifest(&out, ctx, "eval", Some(&src), a, Value::Null)?;
    }
    println!("{}", serde_json::to_string(&doc).map_err(runtime)?);
    Ok(())
}

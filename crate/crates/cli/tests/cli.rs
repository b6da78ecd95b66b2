use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use dcbplan_core::eval::Evaluator;
use dcbplan_core::io::{load_scenario_dir, ReportDoc};
use dcbplan_core::mcts::candidate_hotspots;
use dcbplan_core::proposal::{propose, ProposalParams};
use dcbplan_core::traffic::Weights;
use dcbplan_service::api::{CommitResponse, EvaluateResponse, PlanView, RegulationInput};
use dcbplan_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcbplan"))
        .args(args)
        .env_remove("RZ_THREADS")
        .env_remove("RZ_MAX_MINUTES")
        .env_remove("RZ_LOG_TIMING")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json_file(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, preset: &str) -> PathBuf {
    let out = dir.join(format!("scenario-{preset}"));
    ok(&["gen", "--preset", preset, "--out", s(&out)]);
    out
}

fn error_line(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not a JSON error line: {err}"))
}

#[test]
fn exit_codes_follow_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("x");

    let out = run(&["plan", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "config");

    let out = run(&["plan", "--preset", "nope", "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["plan", "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(2), "no scenario source is a config error");

    let out = run(&["plan", "--scenario", s(&tmp.path().join("missing")), "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["exit_code"], 3);

    let bad = tmp.path().join("bad");
    std::fs::create_dir_all(&bad).unwrap();
    std::fs::write(bad.join("flights.csv"), "flight_id,tv,entry_min\nA,X,not-a-number\n").unwrap();
    std::fs::write(bad.join("capacities.csv"), "tv,bin,capacity\n").unwrap();
    let out = run(&["eval", "--scenario", s(&bad), "--delays", s(&bad.join("flights.csv"))]);
    assert_eq!(out.status.code(), Some(3));

    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
}

#[test]
fn gen_writes_loadable_scenario_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "two-flow");
    let sc = load_scenario_dir(&dir).unwrap();
    assert_eq!(sc.num_flights(), 80);
    let m = json_file(&dir.join("manifest.json"));
    assert_eq!(m["tool"], "dcbplan");
    assert_eq!(m["command"], "gen");
    assert_eq!(m["scenario"]["preset"], "two-flow");
    assert_eq!(m["resolved"]["num_flights"], 80);
    assert!(m.get("timestamp").is_none());
}

#[test]
fn plan_outputs_agree_with_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "two-flow");
    let out = tmp.path().join("plan");
    let line: Value = serde_json::from_str(ok(&["plan", "--scenario", s(&dir), "--sims", "32", "--depth", "4", "--out", s(&out)]).trim()).unwrap();
    for f in ["plan.json", "runlog.csv", "report.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: ReportDoc = serde_json::from_value(json_file(&out.join("report.json"))).unwrap();
    assert_eq!(line["delta_j"], json!(report.report.delta_j));
    assert!(report.report.delta_j > 0.0);

    // the run log's cumulative column ends at the report's improvement
    let log = std::fs::read_to_string(out.join("runlog.csv")).unwrap();
    let last = log.lines().last().unwrap();
    let cum: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(cum, report.report.delta_j);
    assert!(last.ends_with(','), "elapsed column is blank without --log-timing");

    let ev: ReportDoc = serde_json::from_str(&ok(&["eval", "--scenario", s(&dir), "--plan", s(&out.join("plan.json"))])).unwrap();
    assert_eq!(ev.report.delta_j, report.report.delta_j);
    assert_eq!(ev.extra["replay_matches_stored"], json!(true));

    let m = json_file(&out.join("manifest.json"));
    assert_eq!(m["command"], "plan");
    assert_eq!(m["resolved"]["sims"], 32);
    assert_eq!(m["resolved"]["depth"], 4);
    assert_eq!(m["context"]["threads"], 1);
}

#[test]
fn log_timing_fills_elapsed_column() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "two-flow");
    let out = tmp.path().join("p");
    ok(&["--log-timing", "plan", "--scenario", s(&dir), "--sims", "8", "--depth", "2", "--out", s(&out)]);
    let log = std::fs::read_to_string(out.join("runlog.csv")).unwrap();
    let row = log.lines().nth(1).unwrap();
    assert!(row.rsplit(',').next().unwrap().parse::<u64>().is_ok());
}

#[test]
fn baseline_delays_round_trip_through_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "two-flow");
    let out = tmp.path().join("sa");
    ok(&["baseline", "sa", "--scenario", s(&dir), "--iters", "2000", "--out", s(&out)]);
    let report: ReportDoc = serde_json::from_value(json_file(&out.join("report.json"))).unwrap();
    let ev: ReportDoc = serde_json::from_str(&ok(&["eval", "--scenario", s(&dir), "--delays", s(&out.join("delays.csv"))])).unwrap();
    assert_eq!(ev.report.after, report.report.after);
    assert_eq!(ev.report.delta_j, report.report.delta_j);

    let ga = tmp.path().join("ga");
    ok(&["baseline", "ga", "--scenario", s(&dir), "--generations", "4", "--population-size", "16", "--out", s(&ga)]);
    let pareto = std::fs::read_to_string(ga.join("pareto.csv")).unwrap();
    assert!(pareto.starts_with("j_cap,j_delay\n") && pareto.lines().count() >= 2);
}

#[test]
fn ablate_and_sweep_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "two-flow");
    let a = tmp.path().join("ablate");
    ok(&["ablate", "--scenario", s(&dir), "--sims", "16", "--depth", "3", "--out", s(&a)]);
    let table = std::fs::read_to_string(a.join("ablation.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["mcts-h20", "mcts-h5", "brpp"]);
    // the best-proposal run matches the first search's regulation count
    let regs = |l: &str| l.split(',').nth(11).unwrap().to_string();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(regs(lines[1]), regs(lines[3]));

    let w = tmp.path().join("sweep");
    ok(&["sweep", "--scenario", s(&dir), "--sims", "8", "--depth", "2", "--w-caps", "2,10", "--out", s(&w)]);
    let frontier = std::fs::read_to_string(w.join("frontier.csv")).unwrap();
    assert!(frontier.starts_with("w_cap,algorithm,"));
    assert_eq!(frontier.lines().count(), 3);
}

#[test]
fn heuristic_study_meets_flow_target() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("study");
    ok(&["heuristic-study", "--preset", "two-flow", "--min-flows", "6", "--max-rate", "20", "--out", s(&out)]);
    let summary = json_file(&out.join("summary.json"));
    assert_eq!(summary["min_flows_met"], true);
    assert!(summary["flows"].as_u64().unwrap() >= 6);
    let csv = std::fs::read_to_string(out.join("study.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, summary["flows"].as_u64().unwrap() + 1);
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Value) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(if body.is_null() { Body::empty() } else { Body::from(body.to_string()) })
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap()
}

#[tokio::test]
async fn service_dry_run_commit_and_cli_eval_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "two-flow");
    let sc = load_scenario_dir(&dir).unwrap();
    let reg = {
        let ev = Evaluator::with_defaults(&sc);
        let st = ev.baseline();
        let (h, _) = candidate_hotspots(&st, 1)[0];
        propose(&ev, &st, &h, &ProposalParams::default()).remove(0).regulation
    };
    let cfg = ServiceConfig::default();
    let app = router(AppState::new(sc.clone(), Weights::default(), &cfg), &cfg);
    let body = json!({ "regulation": RegulationInput::from_regulation(&sc, &reg) });
    let dry: EvaluateResponse = serde_json::from_value(call(&app, "POST", "/api/proposals/evaluate", body.clone()).await).unwrap();
    let commit: CommitResponse = serde_json::from_value(call(&app, "POST", "/api/plan/commit", body).await).unwrap();
    assert_eq!(dry.delta.delta_j, commit.step.delta_j);

    let view: PlanView = serde_json::from_value(call(&app, "GET", "/api/plan", Value::Null).await).unwrap();
    let exported = tmp.path().join("exported.json");
    std::fs::write(&exported, serde_json::to_string_pretty(&view.plan).unwrap()).unwrap();
    let ev: ReportDoc = serde_json::from_str(&ok(&["eval", "--scenario", s(&dir), "--plan", s(&exported)])).unwrap();
    assert_eq!(ev.report.delta_j, commit.step.delta_j);
    assert_eq!(ev.report.delta_j, view.summary.total_delta_j);
}

#[test]
fn threads_do_not_change_seeded_results() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "two-flow");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["--threads", "1", "plan", "--scenario", s(&dir), "--sims", "16", "--depth", "3", "--out", s(&a)]);
    ok(&["--threads", "4", "plan", "--scenario", s(&dir), "--sims", "16", "--depth", "3", "--out", s(&b)]);
    assert_eq!(std::fs::read(a.join("runlog.csv")).unwrap(), std::fs::read(b.join("runlog.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("plan.json")).unwrap(), std::fs::read(b.join("plan.json")).unwrap());
}

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use dcbplan_core::eval::Evaluator;
use dcbplan_core::fpfs::{compose_sequential, AllocatorConfig};
use dcbplan_core::generator::{generate, preset, shipped_seed};
use dcbplan_core::mcts::candidate_hotspots;
use dcbplan_core::proposal::{propose, ProposalParams};
use dcbplan_core::traffic::{build_demand, objective, DelayVector, Scenario, Weights};
use dcbplan_service::api::*;
use dcbplan_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

fn scenario(name: &str) -> Scenario {
    generate(&preset(name, shipped_seed(name)).unwrap()).unwrap()
}

fn app_with(s: Scenario, config: &ServiceConfig) -> Router {
    router(AppState::new(s, Weights::default(), config), config)
}

fn app(name: &str) -> Router {
    app_with(scenario(name), &ServiceConfig::default())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header(header::CONTENT_TYPE, "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

async fn ok<T: DeserializeOwned>(app: &Router, method: &str, uri: &str, body: Option<Value>) -> T {
    let (status, v) = call(app, method, uri, body).await;
    assert_eq!(status, StatusCode::OK, "{method} {uri}: {v}");
    serde_json::from_value(v).unwrap()
}

/// The best proposal at the most severe hotspot, computed offline.
fn best_regulation(s: &Scenario) -> RegulationInput {
    let ev = Evaluator::with_defaults(s);
    let st = ev.baseline();
    let (h, _) = candidate_hotspots(&st, 1)[0];
    let p = propose(&ev, &st, &h, &ProposalParams::default()).remove(0);
    RegulationInput::from_regulation(s, &p.regulation)
}

#[tokio::test]
async fn hotspot_board_matches_offline_detection() {
    let s = scenario("two-flow");
    let app = app("two-flow");
    let board: Vec<HotspotView> = ok(&app, "GET", "/api/hotspots", None).await;
    let demand = build_demand(&s, &DelayVector::zeros(s.num_flights()));
    let hs = dcbplan_core::traffic::detect_hotspots(&demand);
    assert_eq!(board.len(), hs.len());
    for w in board.windows(2) {
        assert!(w[0].severity >= w[1].severity);
    }
    for v in &board {
        let tv = s.volume_id(&v.tv).unwrap();
        let sev: u64 = (v.t_start..=v.t_end).map(|t| demand.excess(tv, t) as u64).sum();
        assert_eq!(v.severity, sev);
        assert_eq!((v.start_min, v.end_min), (v.t_start as u32 * 15, (v.t_end as u32 + 1) * 15));
    }
}

#[tokio::test]
async fn evaluate_is_pure_and_matches_commit() {
    let s = scenario("two-flow");
    let app = app("two-flow");
    let reg = best_regulation(&s);
    let before: PlanView = ok(&app, "GET", "/api/plan", None).await;
    let eval: EvaluateResponse = ok(&app, "POST", "/api/proposals/evaluate", Some(json!({ "regulation": reg }))).await;
    let after_eval: PlanView = ok(&app, "GET", "/api/plan", None).await;
    assert_eq!(before, after_eval);

    // independent recomputation from the baseline
    let r = reg.to_regulation(&s).unwrap();
    let delays = compose_sequential(&s, std::slice::from_ref(&r), &AllocatorConfig::default()).unwrap();
    let j0 = objective(&s, &DelayVector::zeros(s.num_flights()), Weights::default());
    let j1 = objective(&s, &delays, Weights::default());
    assert_eq!(eval.delta.delta_j, j0.j_total - j1.j_total);
    assert!(eval.delta.delta_j > 0.0);
    assert_eq!(eval.delays.len(), delays.delayed_count());

    let commit: CommitResponse = ok(&app, "POST", "/api/plan/commit", Some(json!({ "regulation": reg }))).await;
    assert_eq!(commit.step.delta_j, eval.delta.delta_j);
    assert_eq!(commit.summary.version, 1);
    assert_eq!(commit.summary.total_delta_j, eval.delta.delta_j);
    let plan: PlanView = ok(&app, "GET", "/api/plan", None).await;
    assert_eq!(plan.report.delta_j, eval.delta.delta_j);
    assert_eq!(plan.plan.regulations.len(), 1);
}

#[tokio::test]
async fn commit_then_undo_restores_state() {
    let s = scenario("two-flow");
    let app = app("two-flow");
    let before: PlanView = ok(&app, "GET", "/api/plan", None).await;
    let board_before: Vec<HotspotView> = ok(&app, "GET", "/api/hotspots", None).await;
    let reg = best_regulation(&s);
    let c: CommitResponse = ok(&app, "POST", "/api/plan/commit", Some(json!({ "regulation": reg }))).await;
    assert_ne!(c.summary.state_hash, before.summary.state_hash);
    let u: UndoResponse = ok(&app, "POST", "/api/plan/undo", None).await;
    assert_eq!(u.removed.members, reg.members);
    let after: PlanView = ok(&app, "GET", "/api/plan", None).await;
    assert_eq!(after.summary.state_hash, before.summary.state_hash);
    assert_eq!((after.plan, after.report), (before.plan, before.report));
    // the version keeps counting so stale clients still see a conflict
    assert_eq!(after.summary.version, 2);
    let board_after: Vec<HotspotView> = ok(&app, "GET", "/api/hotspots", None).await;
    assert_eq!(board_before, board_after);
}

#[tokio::test]
async fn occupancy_reflects_the_committed_plan() {
    let s = scenario("two-flow");
    let app = app("two-flow");
    let reg = best_regulation(&s);
    let _: CommitResponse = ok(&app, "POST", "/api/plan/commit", Some(json!({ "regulation": reg }))).await;
    let occ: OccupancyView = ok(&app, "GET", &format!("/api/volumes/{}/occupancy", reg.tv), None).await;
    let tv = s.volume_id(&reg.tv).unwrap();
    let delays = compose_sequential(&s, &[reg.to_regulation(&s).unwrap()], &AllocatorConfig::default()).unwrap();
    let (d0, d1) = (build_demand(&s, &DelayVector::zeros(s.num_flights())), build_demand(&s, &delays));
    assert_eq!(occ.demand_before, d0.demand_row(tv));
    assert_eq!(occ.demand_after, d1.demand_row(tv));
    assert_eq!(occ.excess_after, d1.excess_row(tv));
    assert_eq!(occ.capacity, s.capacities().row(tv));
    assert_eq!(occ.bin_start_min.len(), 96);
    assert_eq!(occ.bin_start_min[4], 60);
}

#[tokio::test]
async fn flows_endpoint_lists_ranked_flows() {
    let app = app("two-flow");
    let board: Vec<HotspotView> = ok(&app, "GET", "/api/hotspots", None).await;
    let fl: FlowsView = ok(&app, "GET", &format!("/api/hotspots/{}/flows", board[0].id), None).await;
    assert_eq!(fl.flows.len(), 2);
    assert_eq!(fl.flows.iter().map(|f| f.rank).collect::<Vec<_>>(), vec![1, 2]);
    let members: usize = fl.flows.iter().map(|f| f.members.len()).sum();
    assert!(members <= fl.contributing);
    let (status, _) = call(&app, "GET", "/api/hotspots/0-1-2/flows", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/hotspots/garbage/flows", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn single_simulation_suggests_the_max_prior_proposal() {
    let s = scenario("bandit");
    let app = app("bandit");
    let sug: SuggestResponse = ok(&app, "POST", "/api/search/suggest", Some(json!({ "sims": 1, "depth": 4, "k": 3 }))).await;
    assert_eq!(sug.simulations, 1);
    // prior is a softmax of predicted ΔJ, so its argmax is the best-ranked proposal
    let ev = Evaluator::with_defaults(&s);
    let st = ev.baseline();
    let props = propose(&ev, &st, &st.hotspots()[0], &ProposalParams::default());
    let top = &sug.suggestions[0];
    assert_eq!(top.visits, 1);
    assert_eq!(top.predicted_delta_j, props[0].predicted_delta_j);
    assert_eq!(top.regulation.members, RegulationInput::from_regulation(&s, &props[0].regulation).members);
    assert_eq!(top.regulation.rate_per_hour, props[0].regulation.rate_per_hour);
    assert!(sug.suggestions.iter().all(|x| x.prior <= top.prior));
    // suggest never mutates the plan
    let plan: PlanView = ok(&app, "GET", "/api/plan", None).await;
    assert_eq!(plan.summary.version, 0);
}

#[tokio::test]
async fn errors_are_machine_readable() {
    let s = scenario("two-flow");
    let app = app("two-flow");
    let mut reg = best_regulation(&s);

    let (status, v) = call(&app, "POST", "/api/proposals/evaluate", Some(json!({ "nope": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "bad_request");

    reg.rate_per_hour = 0;
    let (status, _) = call(&app, "POST", "/api/proposals/evaluate", Some(json!({ "regulation": reg }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    reg.rate_per_hour = 10;
    reg.members.push("NOT-A-FLIGHT".into());
    let (status, v) = call(&app, "POST", "/api/plan/commit", Some(json!({ "regulation": reg }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"]["message"].as_str().unwrap().contains("NOT-A-FLIGHT"));
    reg.members.pop();
    reg.t_end = 400;
    let (status, _) = call(&app, "POST", "/api/plan/commit", Some(json!({ "regulation": reg }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, v) = call(&app, "GET", "/api/volumes/NOPE/occupancy", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");
    let (status, _) = call(&app, "GET", "/api/sessions/s99/hotspots", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/unknown", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, v) = call(&app, "POST", "/api/plan/undo", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "conflict");
    let (status, _) = call(&app, "POST", "/api/search/suggest", Some(json!({ "sims": 0 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stale_version_is_a_conflict() {
    let s = scenario("two-flow");
    let app = app("two-flow");
    let reg = best_regulation(&s);
    let body = json!({ "regulation": reg, "expected_version": 0 });
    let _: CommitResponse = ok(&app, "POST", "/api/plan/commit", Some(body.clone())).await;
    let (status, _) = call(&app, "POST", "/api/plan/commit", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", "/api/plan/undo", Some(json!({ "expected_version": 0 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let _: UndoResponse = ok(&app, "POST", "/api/plan/undo", Some(json!({ "expected_version": 1 }))).await;
}

#[tokio::test]
async fn named_sessions_are_isolated() {
    let app = app("two-flow");
    let (status, v) = call(&app, "POST", "/api/sessions", Some(json!({ "preset": "bandit" }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = v["session"].as_str().unwrap().to_string();
    let sc: ScenarioView = ok(&app, "GET", &format!("/api/sessions/{sid}/scenario"), None).await;
    assert_eq!(sc.num_flights, scenario("bandit").num_flights());
    let hs: Vec<HotspotView> = ok(&app, "GET", &format!("/api/sessions/{sid}/hotspots"), None).await;
    assert_eq!(hs.len(), 1);
    let default: ScenarioView = ok(&app, "GET", "/api/scenario", None).await;
    assert_eq!(default.num_flights, scenario("two-flow").num_flights());
    let list: Vec<SessionInfo> = ok(&app, "GET", "/api/sessions", None).await;
    assert_eq!(list.len(), 2);
    let (status, _) = call(&app, "POST", "/api/sessions", Some(json!({ "preset": "bandit", "flights_csv": "x" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/api/sessions", Some(json!({ "preset": "nope" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn cors_and_static_assets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>board</html>").unwrap();
    let config = ServiceConfig {
        cors_origins: vec!["http://localhost:5173".into()],
        static_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let app = app_with(scenario("bandit"), &config);
    let req = Request::builder().uri("/api/hotspots").header(header::ORIGIN, "http://localhost:5173").body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(), "http://localhost:5173");
    let res = app.clone().oneshot(Request::builder().uri("/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let body = res.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<html>board</html>");
}

//! HTTP/JSON what-if service: hotspot inspection, flow browsing, dry-run
//! evaluation, plan commit/undo and search suggestions.
//!
//! Every route exists twice: under `/api` for the default session and under
//! `/api/sessions/{sid}` for a named one.

pub mod api;
pub mod error;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, State};
use axum::http::request::Parts;
use axum::http::{HeaderValue, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use dcbplan_core::flows::{extract_flows, ExtractionParams};
use dcbplan_core::generator::{generate, preset};
use dcbplan_core::heuristics::{rank_flows, score_flow};
use dcbplan_core::io::{parse_scenario, PlanDoc, RegulationDoc};
use dcbplan_core::mcts::{run_search_cancellable, SearchParams};
use dcbplan_core::metrics::summarize;
use dcbplan_core::traffic::{Scenario, Weights};
use serde::de::DeserializeOwned;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::api::*;
use crate::error::{ApiError, ApiResult};
use crate::session::{Session, Snapshot};

pub const DEFAULT_SESSION: &str = "default";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Origins allowed by CORS; empty allows any.
    pub cors_origins: Vec<String>,
    /// Directory of static dashboard assets served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Concurrent suggest runs; further requests get 503.
    pub search_workers: usize,
    /// Upper bound on simulations a suggest request may ask for.
    pub max_suggest_sims: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { cors_origins: Vec::new(), static_dir: None, search_workers: 1, max_suggest_sims: 4096 }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    search: Arc<Semaphore>,
    max_suggest_sims: usize,
}

impl AppState {
    pub fn new(scenario: Scenario, weights: Weights, config: &ServiceConfig) -> Self {
        let mut sessions = HashMap::new();
        sessions.insert(DEFAULT_SESSION.to_string(), Arc::new(Session::new(DEFAULT_SESSION, scenario, weights)));
        AppState {
            inner: Arc::new(Inner {
                sessions: RwLock::new(sessions),
                next_id: AtomicU64::new(1),
                search: Arc::new(Semaphore::new(config.search_workers.max(1))),
                max_suggest_sims: config.max_suggest_sims,
            }),
        }
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.inner.sessions.read().expect("session table poisoned").get(id).cloned()
    }

    pub fn add_session(&self, scenario: Scenario, weights: Weights) -> Arc<Session> {
        let id = format!("s{}", self.inner.next_id.fetch_add(1, Ordering::Relaxed));
        let s = Arc::new(Session::new(id.clone(), scenario, weights));
        self.inner.sessions.write().expect("session table poisoned").insert(id, s.clone());
        s
    }
}

/// The session addressed by the `sid` path parameter, or the default one.
pub struct SessionRef(pub Arc<Session>);

impl FromRequestParts<AppState> for SessionRef {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let params = Path::<HashMap<String, String>>::from_request_parts(parts, state).await.map(|p| p.0).unwrap_or_default();
        let id = params.get("sid").map(String::as_str).unwrap_or(DEFAULT_SESSION);
        state.session(id).map(SessionRef).ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn summary(session: &Session, snap: &Snapshot) -> ApiResult<PlanSummary> {
    Ok(PlanSummary {
        version: snap.version,
        state_hash: session.state_hash(snap)?,
        regulations: snap.plan.len(),
        total_delta_j: snap.plan.total_delta_j(),
        objective: snap.state.objective,
        hotspots: snap.state.hotspots().len(),
    })
}

async fn get_scenario(SessionRef(s): SessionRef) -> Json<ScenarioView> {
    let sc = s.scenario();
    Json(ScenarioView {
        session: s.id.clone(),
        num_flights: sc.num_flights(),
        volumes: sc.volumes().to_vec(),
        bin_width_min: sc.grid().bin_width_min,
        num_bins: sc.grid().num_bins,
        weights: s.weights(),
        version: s.snapshot().version,
    })
}

async fn get_hotspots(SessionRef(s): SessionRef) -> Json<Vec<HotspotView>> {
    let snap = s.snapshot();
    Json(hotspot_board(s.scenario(), &snap.state))
}

async fn get_occupancy(SessionRef(s): SessionRef, Path(p): Path<HashMap<String, String>>) -> ApiResult<Json<OccupancyView>> {
    let name = p.get("tv").map(String::as_str).unwrap_or_default();
    let tv = s.scenario().volume_id(name).ok_or_else(|| ApiError::not_found(format!("unknown volume {name}")))?;
    let snap = s.snapshot();
    Ok(Json(occupancy(s.scenario(), s.baseline(), &snap.state, tv)))
}

async fn get_flows(SessionRef(s): SessionRef, Path(p): Path<HashMap<String, String>>) -> ApiResult<Json<FlowsView>> {
    let id = p.get("id").map(String::as_str).unwrap_or_default();
    let snap = s.snapshot();
    let h = parse_hotspot_id(id)
        .filter(|h| snap.state.hotspots().contains(h))
        .ok_or_else(|| ApiError::not_found(format!("no current hotspot {id}")))?;
    let sc = s.scenario();
    let fx = extract_flows(sc, &snap.state.delays, &h, &ExtractionParams::default());
    let scores: Vec<_> = fx.flows.iter().map(|f| score_flow(sc, &snap.state.delays, &snap.state.demand, f)).collect();
    let flows = rank_flows(&fx.flows, &scores)
        .into_iter()
        .enumerate()
        .map(|(rank, i)| flow_view(sc, &fx.flows[i], &scores[i], rank + 1))
        .collect();
    Ok(Json(FlowsView { hotspot: hotspot_view(sc, &snap.state, &h), contributing: fx.contributing.len(), flows }))
}

async fn post_evaluate(SessionRef(s): SessionRef, body: Bytes) -> ApiResult<Json<EvaluateResponse>> {
    let req: EvaluateRequest = parse_body(&body)?;
    let reg = req.regulation.to_regulation(s.scenario())?;
    let (snap, applied) = s.evaluate(&reg)?;
    Ok(Json(evaluate_response(s.scenario(), snap.version, &reg, &snap.state, &applied.state)))
}

async fn post_commit(SessionRef(s): SessionRef, body: Bytes) -> ApiResult<Json<CommitResponse>> {
    let req: CommitRequest = parse_body(&body)?;
    let reg = req.regulation.to_regulation(s.scenario())?;
    let (snap, step) = s.commit(reg, req.expected_version)?;
    Ok(Json(CommitResponse { step, summary: summary(&s, &snap)? }))
}

async fn post_undo(SessionRef(s): SessionRef, body: Bytes) -> ApiResult<Json<UndoResponse>> {
    let req: UndoRequest = if body.is_empty() { UndoRequest::default() } else { parse_body(&body)? };
    let (snap, removed) = s.undo(req.expected_version)?;
    Ok(Json(UndoResponse { removed: RegulationDoc::from_regulation(s.scenario(), &removed), summary: summary(&s, &snap)? }))
}

/// Sets the flag when dropped, so a disconnected client stops its search.
struct CancelOnDrop(Arc<AtomicBool>);

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        self.0.store(true, Ordering::Relaxed);
    }
}

async fn post_suggest(State(app): State<AppState>, SessionRef(s): SessionRef, body: Bytes) -> ApiResult<Json<SuggestResponse>> {
    let req: SuggestRequest = if body.is_empty() { SuggestRequest::default() } else { parse_body(&body)? };
    if req.sims == 0 || req.depth == 0 || req.k == 0 {
        return Err(ApiError::bad_request("sims, depth and k must be at least 1"));
    }
    if req.sims > app.inner.max_suggest_sims {
        return Err(ApiError::bad_request(format!("sims is capped at {}", app.inner.max_suggest_sims)));
    }
    let permit = app.inner.search.clone().try_acquire_owned().map_err(|_| ApiError::busy("search worker is busy"))?;
    let cancel = Arc::new(AtomicBool::new(false));
    let _guard = CancelOnDrop(cancel.clone());
    let snap = s.snapshot();
    let task = tokio::task::spawn_blocking(move || -> ApiResult<SuggestResponse> {
        let _permit = permit;
        let params = SearchParams {
            sims: req.sims,
            depth: req.depth,
            commit_depth: 1,
            seed: req.seed,
            time_budget_ms: Some(req.time_budget_ms),
            ..SearchParams::default()
        };
        let ev = s.evaluator();
        let out = run_search_cancellable(&ev, &snap.state, &params, &cancel)?;
        let mut root = out.root;
        root.sort_by(|a, b| {
            b.visits
                .cmp(&a.visits)
                .then_with(|| b.q.total_cmp(&a.q))
                .then_with(|| (b.hotspot_prior * b.prior).total_cmp(&(a.hotspot_prior * a.prior)))
        });
        let sc = s.scenario();
        let suggestions = root
            .into_iter()
            .take(req.k)
            .map(|e| Suggestion {
                hotspot: hotspot_view(sc, &snap.state, &e.hotspot),
                regulation: RegulationDoc::from_regulation(sc, &e.regulation),
                predicted_delta_j: e.predicted_delta_j,
                hotspot_prior: e.hotspot_prior,
                prior: e.prior,
                visits: e.visits,
                q: e.q,
            })
            .collect();
        Ok(SuggestResponse { version: snap.version, simulations: out.simulations, suggestions })
    });
    let res = task.await.map_err(|e| ApiError::internal(format!("search task failed: {e}")))??;
    Ok(Json(res))
}

async fn get_plan(SessionRef(s): SessionRef) -> ApiResult<Json<PlanView>> {
    let snap = s.snapshot();
    let sc = s.scenario();
    let report = summarize(sc, s.weights(), "whatif", &s.baseline().delays, &snap.state.delays, Some(snap.plan.len()));
    Ok(Json(PlanView { summary: summary(&s, &snap)?, plan: PlanDoc::from_plan(sc, &snap.plan), report }))
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<SessionInfo>> {
    let table = app.inner.sessions.read().expect("session table poisoned");
    let sorted: BTreeMap<&String, &Arc<Session>> = table.iter().collect();
    Json(
        sorted
            .values()
            .map(|s| SessionInfo { session: s.id.clone(), num_flights: s.scenario().num_flights(), num_volumes: s.scenario().num_volumes() })
            .collect(),
    )
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let req: NewSessionRequest = parse_body(&body)?;
    let scenario = match (&req.preset, &req.flights_csv, &req.capacities_csv) {
        (Some(name), None, None) => generate(&preset(name, req.seed.unwrap_or(0))?)?,
        (None, Some(f), Some(c)) => parse_scenario(f, c)?,
        _ => return Err(ApiError::bad_request("give either preset or both flights_csv and capacities_csv")),
    };
    let weights = match req.weights {
        Some(w) => Weights::new(w.w_cap, w.w_delay)?,
        None => Weights::default(),
    };
    let s = tokio::task::spawn_blocking(move || app.add_session(scenario, weights))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let info = SessionInfo { session: s.id.clone(), num_flights: s.scenario().num_flights(), num_volumes: s.scenario().num_volumes() };
    Ok((StatusCode::CREATED, Json(info)))
}

fn session_routes() -> Router<AppState> {
    Router::new()
        .route("/scenario", get(get_scenario))
        .route("/hotspots", get(get_hotspots))
        .route("/hotspots/{id}/flows", get(get_flows))
        .route("/volumes/{tv}/occupancy", get(get_occupancy))
        .route("/proposals/evaluate", post(post_evaluate))
        .route("/plan", get(get_plan))
        .route("/plan/commit", post(post_commit))
        .route("/plan/undo", post(post_undo))
        .route("/search/suggest", post(post_suggest))
}

fn cors(config: &ServiceConfig) -> CorsLayer {
    let origins: Vec<HeaderValue> = config.cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        layer.allow_origin(Any)
    } else {
        layer.allow_origin(AllowOrigin::list(origins))
    }
}

pub fn router(state: AppState, config: &ServiceConfig) -> Router {
    let api = Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .nest("/sessions/{sid}", session_routes())
        .merge(session_routes())
        .fallback(|| async { ApiError::not_found("no such endpoint") });
    let mut app = Router::new().nest("/api", api);
    if let Some(dir) = &config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors(config)).with_state(state)
}

/// Serves until the listener fails or the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState, config: &ServiceConfig) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "what-if service listening");
    axum::serve(listener, router(state, config)).await
}

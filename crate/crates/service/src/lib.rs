//! HTTP/JSON service over fitted analysis sessions.
//!
//! A session is created once from a CSV upload and answers any number of
//! group tests from its stored scan without refitting.

pub mod archive;
mod error;
mod session;

pub use error::ApiError;
pub use session::{session_id, Session, SessionConfig, Store, SubAnalysis};

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use modavg::ctp::{rho_max, AnalysisMode, TestOptions, DEFAULT_SEARCH_BUDGET};
use modavg::inference::{fdr_threshold, fwer_threshold, intervals, CoefficientEstimate, Interval, TestReport};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Largest accepted request body.
pub const BODY_LIMIT: usize = 512 << 20;

type AppState = Arc<Store>;

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/import", post(import))
        .route("/sessions/{id}", get(summary))
        .route("/sessions/{id}/test", post(test))
        .route("/sessions/{id}/groups", get(groups))
        .route("/sessions/{id}/search", post(search))
        .route("/sessions/{id}/estimates", get(estimates))
        .route("/sessions/{id}/export", get(export))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(store)
}

/// Serve until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, store: Arc<Store>) -> std::io::Result<()> {
    axum::serve(listener, router(store)).await
}

fn lookup(store: &Store, id: &str) -> Result<Arc<Session>, ApiError> {
    store.get(id).ok_or_else(|| ApiError::not_found(id))
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    csv: String,
    #[serde(default)]
    config: SessionConfig,
}

#[derive(Serialize)]
struct SessionBrief {
    id: String,
    created_at: u64,
    n: usize,
    nu: usize,
    names: Vec<String>,
}

#[derive(Serialize)]
struct SessionSummary {
    id: String,
    created_at: u64,
    n: usize,
    nu: usize,
    names: Vec<String>,
    models: usize,
    config: SessionConfig,
    mode: AnalysisMode,
    nu_family: usize,
    correlation: Vec<Vec<f64>>,
    fwer: f64,
    fdr: f64,
}

fn brief(s: &Session) -> SessionBrief {
    SessionBrief {
        id: s.id.clone(),
        created_at: s.created_at,
        n: s.dataset.n(),
        nu: s.analysis.nu(),
        names: s.analysis.names.clone(),
    }
}

fn full_summary(s: &Session) -> SessionSummary {
    let a = &s.analysis;
    SessionSummary {
        id: s.id.clone(),
        created_at: s.created_at,
        n: s.dataset.n(),
        nu: a.nu(),
        names: a.names.clone(),
        models: a.scan.len(),
        config: s.config.clone(),
        mode: a.mode.clone(),
        nu_family: a.nu_family(),
        correlation: a.corr.rows(),
        fwer: fwer_threshold(a.hyper(), a.nu_family()),
        fdr: fdr_threshold(a.hyper().tau),
    }
}

fn created(s: &Session, new: bool) -> Response {
    let status = if new { StatusCode::CREATED } else { StatusCode::OK };
    (status, Json(full_summary(s))).into_response()
}

async fn create(State(store): State<AppState>, body: Result<Json<CreateRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let req = json_body(body)?;
    let (s, new) = store.create(req.csv, req.config).await?;
    Ok(created(&s, new))
}

async fn list(State(store): State<AppState>) -> Json<Vec<SessionBrief>> {
    Json(store.list().iter().map(|s| brief(s)).collect())
}

async fn summary(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ApiError> {
    let s = lookup(&store, &id)?;
    Ok(Json(full_summary(&s)))
}

/// A variable given by name or by column index.
#[derive(Deserialize)]
#[serde(untagged)]
enum Selector {
    Index(usize),
    Name(String),
}

fn resolve(s: &Session, sel: &[Selector]) -> Result<Vec<usize>, ApiError> {
    let mut idx = Vec::with_capacity(sel.len());
    let mut unknown = Vec::new();
    for v in sel {
        match v {
            Selector::Index(i) if *i < s.analysis.nu() => idx.push(*i),
            Selector::Index(i) => unknown.push(i.to_string()),
            Selector::Name(n) => match s.analysis.names.iter().position(|m| m == n) {
                Some(i) => idx.push(i),
                None => unknown.push(n.clone()),
            },
        }
    }
    if !unknown.is_empty() {
        return Err(modavg::error::Error::UnknownVariables(unknown).into());
    }
    Ok(idx)
}

fn check_rho(rho: f64) -> Result<f64, ApiError> {
    if (0.0..=1.0).contains(&rho) {
        Ok(rho)
    } else {
        Err(ApiError::invalid(format!("rho must lie in [0, 1], got {rho}")))
    }
}

fn block_names(s: &Session, blocks: &[Vec<usize>]) -> Vec<Vec<String>> {
    blocks.iter().map(|b| b.iter().map(|&j| s.analysis.names[j].clone()).collect()).collect()
}

fn default_rho() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TestRequest {
    tested: Vec<Selector>,
    #[serde(default = "default_rho")]
    rho: f64,
    tau: Option<f64>,
    alpha: Option<f64>,
    #[serde(default = "default_true")]
    censored: bool,
    /// When false an inadmissible group is still tested and flagged.
    #[serde(default = "default_true")]
    enforce_admissibility: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Serialize)]
struct TestResponse {
    report: TestReport,
    admissible: bool,
    violating_block: Option<Vec<String>>,
    rho: f64,
    rho_max: f64,
    blocks: Vec<Vec<String>>,
    tau: f64,
    alpha: f64,
    fdr_threshold: f64,
    fwer_threshold: f64,
}

async fn test(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<TestRequest>, JsonRejection>,
) -> Result<Json<TestResponse>, ApiError> {
    let s = lookup(&store, &id)?;
    let req = json_body(body)?;
    let rho = check_rho(req.rho)?;
    let tested = resolve(&s, &req.tested)?;
    let policy = s.analysis.grouping(rho)?;
    let mut sorted = tested.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let violation = policy.violation(&sorted);
    let alpha = req.alpha.unwrap_or(s.config.alpha);
    let opts = TestOptions { rho: req.enforce_admissibility.then_some(rho), alpha, censored: req.censored, tau: req.tau };
    let report = s.analysis.test_group(&tested, &opts)?;
    let mut hyper = *s.analysis.hyper();
    hyper.tau = req.tau.unwrap_or(hyper.tau);
    Ok(Json(TestResponse {
        report,
        admissible: violation.is_none(),
        violating_block: violation.map(|b| block_names(&s, &policy.blocks[b..=b]).remove(0)),
        rho,
        rho_max: rho_max(&sorted, &s.analysis.corr),
        blocks: block_names(&s, &policy.blocks),
        tau: hyper.tau,
        alpha,
        fdr_threshold: fdr_threshold(hyper.tau),
        fwer_threshold: fwer_threshold(&hyper, s.analysis.nu_family()),
    }))
}

#[derive(Deserialize)]
struct GroupsQuery {
    rho: Option<f64>,
}

#[derive(Serialize)]
struct GroupsResponse {
    rho: f64,
    blocks: Vec<Vec<String>>,
    block_indices: Vec<Vec<usize>>,
}

async fn groups(
    State(store): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<GroupsQuery>, QueryRejection>,
) -> Result<Json<GroupsResponse>, ApiError> {
    let s = lookup(&store, &id)?;
    let Query(q) = q.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let rho = check_rho(q.rho.ok_or_else(|| ApiError::invalid("query parameter `rho` is required"))?)?;
    let policy = s.analysis.grouping(rho)?;
    Ok(Json(GroupsResponse { rho, blocks: block_names(&s, &policy.blocks), block_indices: policy.blocks.clone() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchRequest {
    #[serde(default = "default_rho")]
    rho: f64,
    tau: Option<f64>,
    max_size: Option<usize>,
    budget: Option<usize>,
}

#[derive(Serialize)]
struct SearchResponse {
    rho: f64,
    tau: f64,
    max_size: usize,
    groups: Vec<Vec<String>>,
}

async fn search(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let s = lookup(&store, &id)?;
    let req = json_body(body)?;
    let rho = check_rho(req.rho)?;
    let tau = req.tau.unwrap_or(s.analysis.hyper().tau);
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ApiError::invalid(format!("tau must be positive and finite, got {tau}")));
    }
    let max_size = req.max_size.unwrap_or(s.analysis.nu());
    let budget = req.budget.unwrap_or(DEFAULT_SEARCH_BUDGET);
    let policy = s.analysis.grouping(rho)?;
    let session = s.clone();
    let found = tokio::task::spawn_blocking(move || session.analysis.minimal_significant_groups(tau, max_size, &policy, budget))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(SearchResponse { rho, tau, max_size, groups: block_names(&s, &found) }))
}

#[derive(Serialize)]
struct EstimateRow {
    #[serde(flatten)]
    estimate: CoefficientEstimate,
    classical_interval: Interval,
    bayes_interval: Interval,
}

async fn estimates(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<EstimateRow>>, ApiError> {
    let s = lookup(&store, &id)?;
    let session = s.clone();
    let rows = tokio::task::spawn_blocking(move || -> Result<Vec<EstimateRow>, ApiError> {
        let (alpha, tau) = (session.config.alpha, session.analysis.hyper().tau);
        Ok(session
            .estimates()?
            .iter()
            .map(|e| {
                let (classical_interval, bayes_interval) = intervals(e, alpha, tau);
                EstimateRow { estimate: e.clone(), classical_interval, bayes_interval }
            })
            .collect())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(rows))
}

async fn export(State(store): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = lookup(&store, &id)?;
    let bytes = archive::encode(&s);
    let disposition = format!("attachment; filename=\"session-{}.mdv\"", s.id);
    Ok(([(header::CONTENT_TYPE, "application/octet-stream".to_string()), (header::CONTENT_DISPOSITION, disposition)], bytes)
        .into_response())
}

async fn import(State(store): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let session = tokio::task::spawn_blocking(move || archive::decode(&body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let (s, new) = store.insert(session);
    Ok(created(&s, new))
}

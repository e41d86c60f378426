// SPDX-License-Identifier: MIT OR Apache-2.0

//! Read-only JSON API over one catalog and the artifacts it was built from.
//!
//! Routes are mounted under both `/api/v1` and `/api`. Every response body
//! carries `artifact_set` and the same value is sent in the
//! `x-artifact-set` header. Errors use `{"error": {"code", "message"}}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use recprobe::conceptlab::{Case, CaseRef, Concept};
use recprobe::evalmetrics::{item_activations, MetricsReport};
use recprobe::steering::{steer, user_probe, LatentStats, SteeringRequest, DEFAULT_TOP_K};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::commands::ConceptContext;
use crate::error::{CliError, CliResult};
use crate::store::{ArtifactStore, Kind};

pub const ARTIFACT_SET_HEADER: &str = "x-artifact-set";
const MAX_PER_PAGE: usize = 500;
const TOP_ITEMS: usize = 10;

pub struct AppState {
    pub ctx: ConceptContext,
    pub metrics: Option<MetricsReport>,
    pub stats: LatentStats,
    pub artifact_set: String,
}

impl AppState {
    /// Serves the latest catalog, plus the latest metrics computed from it.
    pub fn from_store(store: &ArtifactStore) -> CliResult<Self> {
        let ctx = ConceptContext::load(store, store.latest(Kind::Catalog)?)?;
        let catalog_ref = ctx.catalog_artifact.reference();
        let metrics = match store.latest(Kind::Metrics) {
            Ok(m) if m.record.inputs.get("catalog") == Some(&catalog_ref) => Some(MetricsReport::load(&m.path)?),
            _ => None,
        };
        Ok(Self::new(ctx, metrics))
    }

    pub fn new(ctx: ConceptContext, metrics: Option<MetricsReport>) -> Self {
        let stats = LatentStats::from_table(&ctx.table);
        let artifact_set = ctx.catalog_artifact.reference();
        Self {
            ctx,
            metrics,
            stats,
            artifact_set,
        }
    }
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn unknown_latent(latent: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_latent", format!("no latent {latent}"))
    }

    fn unknown_user(user: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_user", format!("no user {user}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

pub fn router(state: AppState) -> Router {
    let state: Shared = Arc::new(state);
    let api = Router::new()
        .route("/latents", get(list_latents))
        .route("/latents/{id}", get(latent_detail))
        .route("/users/{id}/recommendations", get(recommendations))
        .route("/steer", post(steer_handler))
        .route("/metrics", get(metrics_handler))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") });
    Router::new()
        .nest("/api/v1", api.clone())
        .nest("/api", api)
        .layer(axum::middleware::map_response_with_state(state.clone(), tag_response))
        .with_state(state)
}

async fn tag_response(State(state): State<Shared>, mut response: Response) -> Response {
    if let Ok(v) = HeaderValue::from_str(&state.artifact_set) {
        response
            .headers_mut()
            .insert(HeaderName::from_static(ARTIFACT_SET_HEADER), v);
    }
    response
}

fn with_set(state: &AppState, mut body: Value) -> Json<Value> {
    if let Value::Object(map) = &mut body {
        map.insert("artifact_set".into(), Value::String(state.artifact_set.clone()));
    }
    Json(body)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ListQuery {
    page: Option<usize>,
    per_page: Option<usize>,
    min_confidence: Option<f64>,
    q: Option<String>,
}

#[derive(Serialize)]
struct LatentRow<'a> {
    latent: usize,
    description: &'a str,
    confidence: f64,
    correct: usize,
    total: usize,
    firing_count: usize,
    a_max: f32,
}

impl<'a> From<&'a Concept> for LatentRow<'a> {
    fn from(c: &'a Concept) -> Self {
        Self {
            latent: c.latent,
            description: &c.description,
            confidence: c.confidence,
            correct: c.correct,
            total: c.total,
            firing_count: c.firing_count,
            a_max: c.a_max,
        }
    }
}

async fn list_latents(State(state): State<Shared>, query: Result<Query<ListQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let page = q.page.unwrap_or(1);
    let per_page = q.per_page.unwrap_or(50);
    if page == 0 || per_page == 0 || per_page > MAX_PER_PAGE {
        return Err(ApiError::bad_request(format!(
            "page must be >= 1 and per_page in 1..={MAX_PER_PAGE}"
        )));
    }
    if let Some(m) = q.min_confidence {
        if !(0.0..=1.0).contains(&m) {
            return Err(ApiError::bad_request("min_confidence must be in [0, 1]"));
        }
    }
    let needle = q.q.as_deref().map(str::to_lowercase).filter(|s| !s.is_empty());
    let mut rows: Vec<&Concept> = state
        .ctx
        .catalog
        .concepts
        .iter()
        .filter(|c| q.min_confidence.is_none_or(|m| c.confidence >= m - 1e-9))
        .filter(|c| needle.as_ref().is_none_or(|n| c.description.to_lowercase().contains(n)))
        .collect();
    rows.sort_by(|a, b| {
        (b.correct * a.total)
            .cmp(&(a.correct * b.total))
            .then(b.firing_count.cmp(&a.firing_count))
            .then(a.latent.cmp(&b.latent))
    });
    let total = rows.len();
    let items: Vec<LatentRow> = rows
        .into_iter()
        .skip((page - 1).saturating_mul(per_page))
        .take(per_page)
        .map(LatentRow::from)
        .collect();
    Ok(with_set(
        &state,
        json!({ "total": total, "page": page, "per_page": per_page, "latents": items }),
    ))
}

fn parse_id(raw: &str, not_found: fn(&str) -> ApiError) -> Result<usize, ApiError> {
    raw.parse().map_err(|_| not_found(raw))
}

fn item_json(state: &AppState, item: usize) -> Value {
    let ds = &state.ctx.dataset;
    let meta = ds.meta.get(item);
    json!({
        "item": item,
        "raw_id": ds.items.raw(item),
        "title": meta.map(|m| m.title.as_str()),
        "categories": meta.map(|m| m.categories.as_slice()),
    })
}

fn resolve_cases(state: &AppState, refs: &[CaseRef]) -> Result<Vec<Case>, ApiError> {
    let ctx = state.ctx.case_context();
    refs.iter().map(|r| ctx.resolve(r).map_err(ApiError::internal)).collect()
}

async fn latent_detail(State(state): State<Shared>, Path(raw): Path<String>) -> ApiResult {
    let latent = parse_id(&raw, |r| ApiError::unknown_latent(r))?;
    let table = &state.ctx.table;
    if latent >= table.n_latents() {
        return Err(ApiError::unknown_latent(latent));
    }
    let concept = state.ctx.catalog.concept(latent);
    let cases = match concept {
        Some(c) => json!({
            "construct": resolve_cases(&state, &c.construct)?,
            "verify_pos": resolve_cases(&state, &c.verify_pos)?,
            "verify_neg": resolve_cases(&state, &c.verify_neg)?,
        }),
        None => Value::Null,
    };
    let top_items: Vec<Value> = item_activations(table, &state.ctx.dump, latent)
        .into_iter()
        .take(TOP_ITEMS)
        .map(|(item, a)| {
            let mut v = item_json(&state, item);
            v["activation"] = json!(a);
            v
        })
        .collect();
    Ok(with_set(
        &state,
        json!({
            "latent": latent,
            "n_latents": table.n_latents(),
            "firing_count": table.firing_count(latent),
            "a_max": table.a_max(latent),
            "mean_positive": table.mean_positive(latent),
            "histogram": table.level_histogram(latent),
            "concept": concept,
            "cases": cases,
            "top_items": top_items,
        }),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecQuery {
    top_k: Option<usize>,
}

async fn recommendations(
    State(state): State<Shared>,
    Path(raw): Path<String>,
    query: Result<Query<RecQuery>, QueryRejection>,
) -> ApiResult {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let top_k = q.top_k.unwrap_or(DEFAULT_TOP_K);
    if top_k == 0 || top_k > MAX_PER_PAGE {
        return Err(ApiError::bad_request(format!("top_k must be in 1..={MAX_PER_PAGE}")));
    }
    let user = parse_id(&raw, |r| ApiError::unknown_user(r))?;
    let split = &state.ctx.dataset.split;
    if user >= split.num_users {
        return Err(ApiError::unknown_user(user));
    }
    let model = &state.ctx.model;
    let probe = user_probe(model, split, user).map_err(ApiError::internal)?;
    let list = |items: Vec<usize>| items.into_iter().map(|i| item_json(&state, i)).collect::<Vec<_>>();
    let original = list(model.top_n(split, user, &probe, top_k));
    let reconstructed = state
        .ctx
        .sae
        .as_ref()
        .map(|sae| list(model.top_n(split, user, &sae.reconstruct(&probe), top_k)));
    let history: Vec<Value> = split.history(user).iter().map(|&i| item_json(&state, i)).collect();
    Ok(with_set(
        &state,
        json!({
            "user": user,
            "raw_id": state.ctx.dataset.users.raw(user),
            "history": history,
            "original": original,
            "reconstructed": reconstructed,
        }),
    ))
}

async fn steer_handler(State(state): State<Shared>, body: Result<Json<SteeringRequest>, JsonRejection>) -> ApiResult {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let Some(sae) = state.ctx.sae.as_ref() else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "steering_unavailable",
            "this catalog was built without an autoencoder",
        ));
    };
    if req.latent >= sae.n_latents() {
        return Err(ApiError::unknown_latent(req.latent));
    }
    if req.user >= state.ctx.dataset.split.num_users {
        return Err(ApiError::unknown_user(req.user));
    }
    if !req.factor.is_finite() || req.top_k == 0 || req.top_k > MAX_PER_PAGE {
        return Err(ApiError::bad_request(format!(
            "factor must be finite and top_k in 1..={MAX_PER_PAGE}"
        )));
    }
    let result = steer(&state.ctx.model, &state.ctx.dataset.split, sae, &state.stats, &req).map_err(|e| match e {
        recprobe::Error::Latent { .. } => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no_reference_activation", e.to_string())
        }
        other => ApiError::internal(other),
    })?;
    let mut body = serde_json::to_value(&result).map_err(ApiError::internal)?;
    let items = |v: &[usize]| Value::Array(v.iter().map(|&i| item_json(&state, i)).collect());
    body["original_items"] = items(&result.original);
    body["reconstructed_items"] = items(&result.reconstructed);
    body["steered_items"] = items(&result.steered);
    body["description"] = json!(state.ctx.catalog.concept(req.latent).map(|c| &c.description));
    Ok(with_set(&state, body))
}

async fn metrics_handler(State(state): State<Shared>) -> ApiResult {
    match &state.metrics {
        Some(m) => Ok(with_set(&state, json!({ "metrics": m }))),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "metrics_unavailable",
            "no metrics artifact for this catalog; run `metrics`",
        )),
    }
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: AppState, addr: SocketAddr) -> CliResult<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Server(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::Server(e.to_string()))?;
    eprintln!("serving {} on http://{local}/api/v1", state.artifact_set);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Server(e.to_string()))
}

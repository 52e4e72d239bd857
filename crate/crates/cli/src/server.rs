//! JSON session API over [`keyguide::session`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use keyguide::agent::{AgentConfig, CkcAgent};
use keyguide::ckg::DistanceCache;
use keyguide::corpus::TextPipeline;
use keyguide::dataset::Dataset;
use keyguide::matcher::{EncodedPool, MatcherModel};
use keyguide::predictor::KeywordPredictor;
use keyguide::session::{SessionEngine, SessionStore};
use keyguide::sim::DistanceSource;
use keyguide::Error;
use serde::Deserialize;
use serde_json::{json, Value};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// Models and data held immutable while serving.
pub struct Models {
    pub dataset: Dataset,
    pub predictor: Box<dyn KeywordPredictor>,
    pub matcher: MatcherModel,
    pub encoded: EncodedPool,
    pub pipeline: TextPipeline,
    pub cache: DistanceCache,
    pub agent: AgentConfig,
    pub max_agent_turns: usize,
    pub seed: u64,
}

impl Models {
    pub fn new(
        dataset: Dataset,
        predictor: Box<dyn KeywordPredictor>,
        matcher: MatcherModel,
        agent: AgentConfig,
        max_agent_turns: usize,
        seed: u64,
    ) -> keyguide::Result<Self> {
        let encoded = matcher.encode_pool(&dataset.grounding, &dataset.pool)?;
        let pipeline = dataset.pipeline();
        Ok(Self {
            dataset,
            predictor,
            matcher,
            encoded,
            pipeline,
            cache: DistanceCache::new(),
            agent,
            max_agent_turns,
            seed,
        })
    }

    pub fn with_engine<R>(&self, f: impl FnOnce(&SessionEngine<'_>) -> R) -> R {
        let g = &self.dataset.grounding;
        let agent = CkcAgent {
            grounding: g,
            predictor: self.predictor.as_ref(),
            matcher: &self.matcher,
            pool: &self.dataset.pool,
            encoded: &self.encoded,
            config: self.agent,
        };
        let distances = DistanceSource::Graph(&self.cache);
        let engine = SessionEngine {
            grounding: g,
            pipeline: &self.pipeline,
            agent: &agent,
            distances: &distances,
            pool: &self.dataset.pool,
            max_agent_turns: self.max_agent_turns,
            seed: self.seed,
        };
        f(&engine)
    }
}

pub struct App {
    pub models: Models,
    pub store: SessionStore,
    /// Include session targets in responses.
    pub reveal_target: bool,
}

impl App {
    /// Replays `log` when given; sessions are in memory only otherwise.
    pub fn new(models: Models, log: Option<&std::path::Path>, reveal_target: bool) -> keyguide::Result<Self> {
        let store = match log {
            Some(path) => models.with_engine(|e| SessionStore::open(path, e))?,
            None => SessionStore::in_memory(),
        };
        Ok(Self {
            models,
            store,
            reveal_target,
        })
    }
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "validation",
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            Error::State(_) => (StatusCode::CONFLICT, "state"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::validation(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        message: e.to_string(),
    })?
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub target: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingRequest {
    pub smoothness: i64,
}

#[derive(Debug, Deserialize)]
pub struct PathQuery {
    pub from: Option<String>,
    pub to: Option<String>,
}

async fn create_session(
    State(app): State<Arc<App>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let key = idempotency_key(&headers);
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::validation(e.to_string()))?
    };
    let target = req.target;
    blocking(move || {
        let s = app
            .models
            .with_engine(|e| app.store.create(e, target.as_deref(), key.as_deref()))?;
        let mut out = json!({ "id": s.id, "status": s.status, "max_agent_turns": s.max_agent_turns });
        if app.reveal_target {
            out["target"] = json!(s.target);
        }
        Ok(Json(out))
    })
    .await
}

async fn post_message(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<MessageRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let key = idempotency_key(&headers);
    blocking(move || {
        let out = app
            .models
            .with_engine(|e| app.store.message(e, &id, &req.text, key.as_deref()))?;
        Ok(Json(serde_json::to_value(out).expect("outcome serializes")))
    })
    .await
}

async fn get_trace(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult {
    let s = app.store.get(&id)?;
    Ok(Json(s.view(app.reveal_target)))
}

async fn post_rating(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<RatingRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let smoothness = u8::try_from(req.smoothness)
        .map_err(|_| ApiError::validation(format!("smoothness must be in [1, 5], got {}", req.smoothness)))?;
    let s = app.store.rate(&id, smoothness, idempotency_key(&headers).as_deref())?;
    Ok(Json(s.view(app.reveal_target)))
}

async fn post_end(State(app): State<Arc<App>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    let s = app.store.end(&id, idempotency_key(&headers).as_deref())?;
    Ok(Json(s.view(app.reveal_target)))
}

async fn graph_path(State(app): State<Arc<App>>, Query(q): Query<PathQuery>) -> ApiResult {
    let (Some(from), Some(to)) = (q.from, q.to) else {
        return Err(ApiError::validation("both `from` and `to` are required"));
    };
    let graph = &app.models.dataset.grounding.graph;
    let node = |label: &str| {
        graph
            .node(label)
            .ok_or_else(|| ApiError::from(Error::NotFound(format!("concept `{label}`"))))
    };
    let (a, b) = (node(&from)?, node(&to)?);
    let path = graph.shortest_path(a, b)?;
    let distance = app.models.cache.get(graph, b)?.get(a);
    Ok(Json(json!({
        "from": from,
        "to": to,
        "path": path.map(|p| p.iter().map(|n| graph.label(*n).to_string()).collect::<Vec<_>>()),
        "distance": distance,
    })))
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/message", post(post_message))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/sessions/{id}/rating", post(post_rating))
        .route("/sessions/{id}/end", post(post_end))
        .route("/graph/path", get(graph_path))
        .with_state(app)
}

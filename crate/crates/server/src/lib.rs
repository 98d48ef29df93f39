//! JSON API over the poem generator.
//!
//! - `POST /api/generate`: `{prompt, form, strict?, seed?}` returns the poem,
//!   its validation report and the masked template.
//! - `GET /api/forms`: every registry form with its template.
//! - `POST /api/validate`: `{poem, form}` returns a validation report.
//!
//! Decoding is CPU-bound and runs on the blocking pool, at most
//! `concurrency` sessions at a time.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{rejection::JsonRejection, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use poetgen_core::decoding::{
    Backend, BackendError, DecodeError, DecodePolicy, Decoder, GenerationRequest, StopReason,
};
use poetgen_core::forms::{Category, FormRegistry};
use poetgen_core::validation::{ValidationReport, Validator};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;
use tracing::{info, info_span, warn};
use uuid::Uuid;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_prompt_chars: usize,
    pub concurrency: usize,
    /// Base policy; each request sets the seed and strictness.
    pub policy: DecodePolicy,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
    /// Directory of static UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_prompt_chars: 2000,
            concurrency: 8,
            policy: DecodePolicy::default(),
            cors_origins: Vec::new(),
            static_dir: None,
        }
    }
}

/// Shared, read-only service state.
#[derive(Clone)]
pub struct AppState {
    registry: Arc<FormRegistry>,
    decoder: Decoder,
    backend: Arc<dyn Backend>,
    validator: Arc<Validator>,
    config: Arc<ServiceConfig>,
    permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(
        registry: FormRegistry,
        decoder: Decoder,
        backend: Arc<dyn Backend>,
        validator: Validator,
        config: ServiceConfig,
    ) -> Self {
        Self {
            registry: Arc::new(registry),
            decoder,
            backend,
            validator: Arc::new(validator),
            permits: Arc::new(Semaphore::new(config.concurrency.max(1))),
            config: Arc::new(config),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub form: String,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub poem: String,
    pub report: ValidationReport,
    pub masked_template: String,
    pub timing_ms: u64,
    pub stop_reason: StopReason,
    pub seed: u64,
    pub request_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormInfo {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zh_name: Option<String>,
    pub category: Category,
    pub total_chars: usize,
    pub line_counts: Vec<usize>,
    pub masked_template: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub poem: String,
    pub form: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                partial: None,
            },
        }
    }

    fn bad_request(error: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        Self::bad_request(rejection.body_text())
    }
}

impl From<DecodeError> for ApiError {
    fn from(err: DecodeError) -> Self {
        let status = match &err {
            DecodeError::Prompt(_) => StatusCode::BAD_REQUEST,
            DecodeError::Backend {
                source: BackendError::Unavailable(_),
                ..
            } => StatusCode::SERVICE_UNAVAILABLE,
            DecodeError::Backend { .. } | DecodeError::AllForbidden { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            body: ErrorBody {
                error: err.to_string(),
                partial: err.partial_text().map(String::from),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let cors = if state.config.cors_origins.is_empty() {
        CorsLayer::new().allow_origin(Any)
    } else {
        let origins: Vec<HeaderValue> = state
            .config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        CorsLayer::new().allow_origin(AllowOrigin::list(origins))
    }
    .allow_methods(Any)
    .allow_headers(Any);

    let mut app = Router::new()
        .route("/api/generate", post(generate))
        .route("/api/forms", get(forms))
        .route("/api/validate", post(validate))
        .route("/api/health", get(|| async { "ok" }));
    if let Some(dir) = &state.config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors).with_state(state)
}

async fn forms(State(state): State<AppState>) -> Json<Vec<FormInfo>> {
    Json(
        state
            .registry
            .forms()
            .iter()
            .map(|f| FormInfo {
                name: f.name.clone(),
                zh_name: f.zh_name.clone(),
                category: f.category,
                total_chars: f.total_chars,
                line_counts: f.line_counts(),
                masked_template: f.masked_template().to_string(),
            })
            .collect(),
    )
}

async fn validate(
    State(state): State<AppState>,
    body: Result<Json<ValidateRequest>, JsonRejection>,
) -> Result<Json<ValidationReport>, ApiError> {
    let Json(req) = body?;
    let form = state
        .registry
        .get(&req.form)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(state.validator.validate_poem(&req.poem, form)))
}

async fn generate(
    State(state): State<AppState>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(req) = body?;
    let request_id = Uuid::new_v4();
    let span = info_span!("generate", id = %request_id, form = %req.form, strict = req.strict);
    let _guard = span.enter();

    let form = state
        .registry
        .get(&req.form)
        .map_err(|e| ApiError::bad_request(e.to_string()))?
        .clone();
    let chars = req.prompt.chars().count();
    if chars > state.config.max_prompt_chars {
        return Err(ApiError::bad_request(format!(
            "prompt has {chars} characters; the limit is {}",
            state.config.max_prompt_chars
        )));
    }
    if req.prompt.trim().is_empty() {
        return Err(ApiError::bad_request("the prompt is empty"));
    }
    let seed = req.seed.unwrap_or_else(|| request_id.as_u64_pair().0);
    let policy = DecodePolicy {
        template_enforce: req.strict,
        seed,
        ..state.config.policy
    };

    let started = Instant::now();
    let _permit = state
        .permits
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "service is shutting down"))?;
    let task_state = state.clone();
    let task_form = form.clone();
    let prompt = req.prompt;
    let result = tokio::task::spawn_blocking(move || {
        let request = GenerationRequest {
            user_prompt: &prompt,
            form: &task_form,
        };
        task_state
            .decoder
            .generate(&request, task_state.backend.as_ref(), &policy)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("decode task failed: {e}")))?;

    let result = result.inspect_err(|e| warn!(error = %e, "decode failed"))?;
    let report = state.validator.validate_poem(&result.text, &form);
    let timing_ms = started.elapsed().as_millis() as u64;
    info!(
        timing_ms,
        passes = report.passes,
        steps = result.steps.len(),
        "generated"
    );
    Ok(Json(GenerateResponse {
        poem: result.text,
        report,
        masked_template: form.masked_template().to_string(),
        timing_ms,
        stop_reason: result.stop_reason,
        seed,
        request_id: request_id.to_string(),
    }))
}

/// Serves until Ctrl-C.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

//! HTTP routes, shared state and session logs.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use liesensor::cnn::{load_weights, WEIGHTS_FORMAT_VERSION};
use liesensor::textclf::TextClassifier;
use liesensor::verifier::{LieSensor, VerificationResult};
use liesensor::vision::{default_frontal_face, load_cascade, DetectParams, GrayImage};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVersions {
    /// The bundle's version string, verbatim.
    pub text: String,
    pub face: String,
    pub cascade: String,
}

pub struct Models {
    pub sensor: LieSensor,
    pub versions: ModelVersions,
}

impl Models {
    pub fn new(sensor: LieSensor, text_version: String) -> Self {
        let [h, w, c] = sensor.face_network.input_shape();
        let versions = ModelVersions {
            text: text_version,
            face: format!(
                "cnn {h}x{w}x{c}, {} parameters, weights format v{WEIGHTS_FORMAT_VERSION}",
                sensor.face_network.param_count()
            ),
            cascade: format!(
                "haar {}x{}, {} stages, {} weak classifiers",
                sensor.cascade.window_width,
                sensor.cascade.window_height,
                sensor.cascade.stages.len(),
                sensor.cascade.weak_count()
            ),
        };
        Models { sensor, versions }
    }
}

/// Loads the bundle, weights and cascade named in `config`.
pub fn load_models(config: &ServiceConfig) -> liesensor::Result<Models> {
    let text_model = TextClassifier::load(&config.bundle)?;
    let face_network = load_weights(&config.weights)?;
    let cascade = match &config.cascade {
        Some(path) => load_cascade(path)?,
        None => default_frontal_face(),
    };
    let version = text_model.version.clone();
    let sensor = LieSensor {
        text_model,
        face_network,
        cascade,
        detect: DetectParams::default(),
    };
    Ok(Models::new(sensor, version))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    pub max_image_bytes: usize,
    pub request_timeout: Duration,
    pub history_log: Option<PathBuf>,
}

impl From<&ServiceConfig> for Limits {
    fn from(c: &ServiceConfig) -> Self {
        Limits {
            max_image_bytes: c.max_image_bytes,
            request_timeout: c.request_timeout,
            history_log: c.history_log.clone(),
        }
    }
}

struct Sessions {
    logs: HashMap<String, Vec<VerificationResult>>,
    history_file: Option<File>,
}

pub struct AppState {
    models: OnceLock<Arc<Models>>,
    sessions: Mutex<Sessions>,
    limits: Limits,
    error_seq: AtomicU64,
}

impl AppState {
    /// State with no models yet; verify and health answer 503 until
    /// [`AppState::install`] is called.
    pub fn new(limits: Limits) -> std::io::Result<Arc<Self>> {
        let history_file = match &limits.history_log {
            Some(path) => Some(OpenOptions::new().create(true).append(true).open(path)?),
            None => None,
        };
        Ok(Arc::new(AppState {
            models: OnceLock::new(),
            sessions: Mutex::new(Sessions {
                logs: HashMap::new(),
                history_file,
            }),
            limits,
            error_seq: AtomicU64::new(0),
        }))
    }

    /// Installs the models; returns false if models were already present.
    pub fn install(&self, models: Models) -> bool {
        self.models.set(Arc::new(models)).is_ok()
    }

    /// Assigns the next message id and appends under one lock, so
    /// concurrent requests never share or skip an id.
    fn append(&self, session: &str, mut result: VerificationResult) -> VerificationResult {
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let log = sessions.logs.entry(session.to_string()).or_default();
        result.message_id = log.len() as u64 + 1;
        log.push(result.clone());
        if let Some(file) = sessions.history_file.as_mut() {
            if let Err(e) = writeln!(file, "{session} {}", result.to_record()) {
                tracing::warn!("history log write failed: {e}");
            }
        }
        result
    }

    fn history(&self, session: &str) -> Vec<VerificationResult> {
        let sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        sessions.logs.get(session).cloned().unwrap_or_default()
    }

    fn internal(&self, detail: impl std::fmt::Display) -> ApiError {
        let id = format!(
            "err-{:06}",
            self.error_seq.fetch_add(1, Ordering::Relaxed) + 1
        );
        tracing::error!(error_id = %id, "{detail}");
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: "internal error".into(),
            id: Some(id),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub session_id: String,
    pub text: String,
    /// Base64 of a binary PGM; empty when no frame was captured.
    pub image_pgm_b64: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_versions: Option<ModelVersions>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    id: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            id: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.into(),
            message: self.message,
            id: self.id,
        };
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    // Base64 inflates by 4/3; leave room for the text and JSON framing.
    let body_limit = state.limits.max_image_bytes / 3 * 4 + 64 * 1024;
    Router::new()
        .route("/api/v1/verify", post(verify))
        .route("/api/v1/sessions/:id/history", get(history))
        .route("/api/v1/health", get(health))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

fn decode_image(b64: &str, max_bytes: usize) -> Result<GrayImage, ApiError> {
    let too_large = || {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image_too_large",
            format!("image exceeds {max_bytes} bytes"),
        )
    };
    if b64.len() / 4 * 3 > max_bytes + 3 {
        return Err(too_large());
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image_encoding", e.to_string()))?;
    if bytes.len() > max_bytes {
        return Err(too_large());
    }
    GrayImage::from_pgm(&bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", e.to_string()))
}

async fn verify(
    State(state): State<Arc<AppState>>,
    body: Result<Json<VerifyRequest>, JsonRejection>,
) -> Result<Json<VerificationResult>, ApiError> {
    let Json(req) = body.map_err(|r| {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "image_too_large",
                r.body_text(),
            )
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", r.body_text())
        }
    })?;
    if req.session_id.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed_body",
            "session_id is empty",
        ));
    }
    if req.text.trim().is_empty() && req.image_pgm_b64.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_message",
            "both text and image are empty",
        ));
    }
    let models = state.models.get().cloned().ok_or_else(|| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "not_ready",
            "models are still loading",
        )
    })?;
    // No frame means no face; the empty image yields that outcome.
    let image = if req.image_pgm_b64.trim().is_empty() {
        GrayImage::filled(0, 0, 0)
    } else {
        decode_image(&req.image_pgm_b64, state.limits.max_image_bytes)?
    };
    let text = req.text;
    let job = tokio::task::spawn_blocking(move || models.sensor.verify(&text, &image));
    let result = match tokio::time::timeout(state.limits.request_timeout, job).await {
        Err(_) => return Err(state.internal("verification timed out")),
        Ok(Err(join)) => return Err(state.internal(format!("verification task failed: {join}"))),
        Ok(Ok(Err(e))) => return Err(state.internal(format!("verification failed: {e}"))),
        Ok(Ok(Ok(r))) => r,
    };
    Ok(Json(state.append(&req.session_id, result)))
}

async fn history(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Json<Vec<VerificationResult>> {
    Json(state.history(&id))
}

async fn health(State(state): State<Arc<AppState>>) -> (StatusCode, Json<Health>) {
    match state.models.get() {
        Some(m) => (
            StatusCode::OK,
            Json(Health {
                status: "ok".into(),
                model_versions: Some(m.versions.clone()),
            }),
        ),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "loading".into(),
                model_versions: None,
            }),
        ),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot load models: {0}")]
    Models(#[from] liesensor::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Loads every model (refusing to start on failure), binds and serves
/// until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let state = AppState::new(Limits::from(&config))?;
    let loader = config.clone();
    let models = tokio::task::spawn_blocking(move || load_models(&loader))
        .await
        .map_err(std::io::Error::other)??;
    tracing::info!(text = %models.versions.text, face = %models.versions.face, "models loaded");
    state.install(models);
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

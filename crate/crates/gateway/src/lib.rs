//! HTTP front end: model listing, image prediction and the browser UI's
//! static files.
//!
//! | method | path           | body                                 |
//! |--------|----------------|--------------------------------------|
//! | GET    | `/api/health`  |                                      |
//! | GET    | `/api/models`  |                                      |
//! | POST   | `/api/predict` | multipart: `image` file, `model` id  |
//!
//! Errors are `{"error": {"code": ..., "message": ...}}` with codes
//! `undecodable-image` (400), `invalid-multipart` (400), `unknown-model`
//! (404), `not-found` (404), `payload-too-large` (413), `missing-field`
//! (422) and `inference-failed` (500).

mod registry;

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use base64::Engine as _;
use edgeclass_core::bundle::to_hex;
use edgeclass_core::engine::predict;
use edgeclass_core::EngineError;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tower_http::services::{ServeDir, ServeFile};

pub use registry::{Entry, Registry, RegistryError};

/// Largest accepted image upload.
pub const MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;
/// Multipart framing allowance on top of the image limit.
const BODY_SLACK: usize = 64 * 1024;

/// Server settings. Flags override `EDGECLASS_*` environment variables,
/// which override the defaults.
#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    /// Address to bind.
    #[arg(long, env = "EDGECLASS_HOST", default_value = "0.0.0.0")]
    pub host: String,
    /// Port to bind; 0 picks a free port.
    #[arg(long, env = "EDGECLASS_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Directory whose subdirectories are model bundles.
    #[arg(long, env = "EDGECLASS_MODELS_DIR", default_value = "models")]
    pub models_dir: PathBuf,
    /// Upper bound on simultaneous inferences.
    #[arg(long, env = "EDGECLASS_MAX_CONCURRENT", default_value_t = 2,
          value_parser = clap::value_parser!(u32).range(1..))]
    pub max_concurrent: u32,
    /// Built UI assets served under `/`.
    #[arg(long, env = "EDGECLASS_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    /// Append one line per prediction (timestamp, image SHA-256, model,
    /// label, confidence). Images themselves are never stored.
    #[arg(long, env = "EDGECLASS_AUDIT_LOG")]
    pub audit_log: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("static directory {0} does not exist")]
    StaticDir(PathBuf),
    #[error("cannot open audit log {path}: {source}")]
    AuditLog {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

#[derive(Clone)]
pub struct AppState {
    registry: Arc<Registry>,
    limiter: Arc<Semaphore>,
    audit: Option<Arc<Mutex<File>>>,
}

impl AppState {
    pub fn new(registry: Registry, max_concurrent: usize) -> Self {
        AppState {
            registry: Arc::new(registry),
            limiter: Arc::new(Semaphore::new(max_concurrent.max(1))),
            audit: None,
        }
    }

    pub fn with_audit_log(mut self, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| GatewayError::AuditLog {
                path: path.to_path_buf(),
                source,
            })?;
        self.audit = Some(Arc::new(Mutex::new(file)));
        Ok(self)
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn missing(field: &str) -> Self {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "missing-field",
            format!("multipart field `{field}` is required"),
        )
    }

    fn too_large() -> Self {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload-too-large",
            format!("images are limited to {MAX_IMAGE_BYTES} bytes"),
        )
    }

    fn multipart(e: axum::extract::multipart::MultipartError) -> Self {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::too_large()
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid-multipart", e.body_text())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub id: &'static str,
    pub precision: &'static str,
    pub size_bytes: usize,
    pub payload_bytes: usize,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictResponse {
    pub label: String,
    pub confidence: f32,
    pub model: &'static str,
    pub latency_ms: f64,
    /// `data:` URL of the uploaded image when the request sets `echo=true`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_echo: Option<String>,
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "service": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "variants": st.registry.len(),
    }))
}

async fn models(State(st): State<AppState>) -> Json<Vec<ModelInfo>> {
    Json(
        st.registry
            .entries()
            .iter()
            .map(|e| ModelInfo {
                id: e.id,
                precision: e.variant.tag(),
                size_bytes: e.size.container_bytes,
                payload_bytes: e.size.payload_bytes,
                classes: e.bundle.metadata.classes.clone(),
            })
            .collect(),
    )
}

fn mime_of(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        "image/png"
    } else {
        "image/jpeg"
    }
}

async fn predict_handler(
    State(st): State<AppState>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let mut multipart =
        multipart.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid-multipart", e.body_text()))?;
    let (mut image, mut model, mut echo) = (None, None, false);
    while let Some(field) = multipart.next_field().await.map_err(ApiError::multipart)? {
        match field.name() {
            Some("image") => {
                let bytes = field.bytes().await.map_err(ApiError::multipart)?;
                if bytes.len() > MAX_IMAGE_BYTES {
                    return Err(ApiError::too_large());
                }
                image = Some(bytes);
            }
            Some("model") => model = Some(field.text().await.map_err(ApiError::multipart)?),
            Some("echo") => echo = matches!(field.text().await.map_err(ApiError::multipart)?.as_str(), "true" | "1"),
            _ => {}
        }
    }
    let image = image.filter(|b| !b.is_empty()).ok_or_else(|| ApiError::missing("image"))?;
    let model = model.filter(|m| !m.is_empty()).ok_or_else(|| ApiError::missing("model"))?;
    let entry = st
        .registry
        .get(&model)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown-model", format!("no model `{model}`")))?;

    let permit = st.limiter.clone().acquire_owned().await.expect("semaphore is never closed");
    let bundle = entry.bundle.clone();
    let bytes = image.clone();
    let result = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        predict(&bundle, &bytes)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "inference-failed", e.to_string()))?;
    let pred = result.map_err(|e| match e {
        EngineError::Preprocess(p) => ApiError::new(StatusCode::BAD_REQUEST, "undecodable-image", p.to_string()),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "inference-failed", other.to_string()),
    })?;

    if let Some(log) = &st.audit {
        let line = format!(
            "{}\t{}\t{}\t{}\t{:.6}\n",
            chrono::Utc::now().to_rfc3339(),
            to_hex(&Sha256::digest(&image)),
            entry.id,
            pred.label,
            pred.confidence
        );
        if let Err(e) = log.lock().expect("audit lock").write_all(line.as_bytes()) {
            log::warn!("audit log write failed: {e}");
        }
    }
    let image_echo = echo.then(|| {
        format!(
            "data:{};base64,{}",
            mime_of(&image),
            base64::engine::general_purpose::STANDARD.encode(&image)
        )
    });
    Ok(Json(PredictResponse {
        label: pred.label,
        confidence: pred.confidence,
        model: entry.id,
        latency_ms: pred.latency_ms,
        image_echo,
    }))
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint")
}

const PLACEHOLDER_INDEX: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>edgeclass</title></head>\n<body><h1>edgeclass</h1><p>No UI assets configured. The API is available under <code>/api</code>.</p></body></html>\n";

async fn placeholder_index() -> Html<&'static str> {
    Html(PLACEHOLDER_INDEX)
}

/// All routes. Unknown non-API paths fall back to `index.html` in
/// `static_dir` so client-side routes resolve.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/models", get(models))
        .route(
            "/api/predict",
            post(predict_handler).layer(DefaultBodyLimit::max(MAX_IMAGE_BYTES + BODY_SLACK)),
        )
        .route("/api/{*rest}", any(api_not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => api.route("/", get(placeholder_index)).fallback(api_not_found),
    }
}

/// A bound listener and its application, ready to run.
pub struct Server {
    listener: TcpListener,
    app: Router,
    registry_len: usize,
}

impl Server {
    /// Loads the registry (refusing to start without one) and binds.
    pub async fn bind(args: &ServeArgs) -> Result<Server, GatewayError> {
        let registry = Registry::load(&args.models_dir)?;
        if let Some(dir) = &args.static_dir {
            if !dir.is_dir() {
                return Err(GatewayError::StaticDir(dir.clone()));
            }
        }
        let registry_len = registry.len();
        let mut state = AppState::new(registry, args.max_concurrent as usize);
        if let Some(path) = &args.audit_log {
            state = state.with_audit_log(path)?;
        }
        let addr = format!("{}:{}", args.host, args.port);
        let listener = TcpListener::bind(&addr)
            .await
            .map_err(|source| GatewayError::Bind { addr, source })?;
        Ok(Server {
            listener,
            app: router(state, args.static_dir.as_deref()),
            registry_len,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn variant_count(&self) -> usize {
        self.registry_len
    }

    /// Serves until Ctrl-C.
    pub async fn run(self) -> Result<(), GatewayError> {
        axum::serve(self.listener, self.app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(GatewayError::Serve)
    }
}

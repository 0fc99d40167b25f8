//! HTTP API over the replicator core: templates, computations, datasets,
//! metadata crosswalks and the dataset to web-app connector.

pub mod config;
pub mod contract;
pub mod error;
mod handlers;
pub mod session;
pub mod store;

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection, QueryRejection};
use axum::extract::DefaultBodyLimit;
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use replicator_core::backend::{Backend, BackendConfig};
use replicator_core::registry::Registry;
use serde::de::DeserializeOwned;
use thiserror::Error;

pub use config::Config;
pub use contract::{openapi_document, ContractChecker, Violation};
pub use error::{ApiError, ErrorCode};
pub use store::TemplateStore;

/// Everything handlers share. Handlers themselves keep no state.
#[derive(Clone)]
pub struct AppState {
    pub templates: Arc<TemplateStore>,
    pub backend: Arc<Backend>,
    pub registry: Arc<Registry>,
    pub static_dir: Option<PathBuf>,
    pub max_body_bytes: usize,
    /// Response checking, on in tests.
    pub contract: Option<Arc<ContractChecker>>,
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Templates(#[from] store::StoreError),
    #[error("job backend: {0}")]
    Backend(#[from] replicator_core::backend::BackendError),
    #[error("registry: {0}")]
    Registry(#[from] replicator_core::registry::RegistryError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl AppState {
    pub fn new(templates: TemplateStore, backend: Backend, registry: Registry) -> Self {
        Self {
            templates: Arc::new(templates),
            backend: Arc::new(backend),
            registry: Arc::new(registry),
            static_dir: None,
            max_body_bytes: Config::default().max_body_bytes,
            contract: None,
        }
    }

    pub fn from_config(c: &Config) -> Result<Self, StartupError> {
        let templates = match &c.templates_dir {
            Some(dir) => TemplateStore::load_dir(dir)?,
            None => TemplateStore::new(),
        };
        let mut bc = BackendConfig::new(&c.work_root);
        bc.workers = c.worker_count();
        bc.engine = c.engine.clone();
        let backend = Backend::new(bc)?;
        let registry = Registry::open(&c.registry_root)?;
        let mut state = Self::new(templates, backend, registry);
        state.static_dir = c.static_dir.clone();
        state.max_body_bytes = c.max_body_bytes;
        if std::env::var_os("REPLICATOR_SCHEMA_CHECK").is_some_and(|v| v == "1") {
            state.contract = Some(Arc::new(ContractChecker::new()));
        }
        Ok(state)
    }

    /// Turns on response checking.
    pub fn with_contract_checking(mut self) -> Self {
        self.contract = Some(Arc::new(ContractChecker::new()));
        self
    }
}

pub fn router(state: AppState) -> Router {
    let contract = state.contract.clone();
    let limit = state.max_body_bytes;
    let app = Router::new()
        .route("/api/health", get(handlers::health))
        .route("/api/openapi.json", get(handlers::openapi))
        .route("/api/templates", get(handlers::list_templates))
        .route("/api/templates/{id}", get(handlers::get_template))
        .route("/api/computations", get(handlers::list_jobs).post(handlers::submit))
        .route("/api/computations/{id}", get(handlers::job_status).delete(handlers::cancel_job))
        .route("/api/computations/{id}/files/{*path}", get(handlers::job_file))
        .route("/api/computations/{id}/logs/{stream}", get(handlers::job_log))
        .route("/api/datasets", get(handlers::list_datasets).post(handlers::create_dataset))
        .route("/api/datasets/{pid}", get(handlers::get_dataset).patch(handlers::update_dataset))
        .route("/api/datasets/{pid}/versions", get(handlers::dataset_versions))
        .route("/api/datasets/{pid}/files", axum::routing::post(handlers::add_file))
        .route("/api/datasets/{pid}/files/{*path}", get(handlers::dataset_file).delete(handlers::remove_file))
        .route("/api/datasets/{pid}/links", axum::routing::post(handlers::add_link))
        .route("/api/datasets/{pid}/verifications", axum::routing::post(handlers::add_verification))
        .route("/api/datasets/{pid}/draft", axum::routing::post(handlers::open_draft))
        .route("/api/datasets/{pid}/publish", axum::routing::post(handlers::publish))
        .route("/api/datasets/{pid}/review", get(handlers::review))
        .route("/api/datasets/{pid}/ladder", get(handlers::ladder))
        .route("/api/datasets/{pid}/dataverse", get(handlers::dataverse))
        .route("/api/datasets/{pid}/verify", axum::routing::post(handlers::verify))
        .route("/api/pids/{pid}", get(handlers::resolve_pid))
        .route("/api/pids/{pid}/content", get(handlers::pid_content))
        .route("/api/metadata/crosswalk", axum::routing::post(handlers::crosswalk))
        .route("/explore", get(handlers::explore))
        .route("/api/sessions/{token}", get(handlers::get_session))
        .route("/app", get(handlers::app_index))
        .route("/app/{*path}", get(handlers::app_asset))
        .fallback(handlers::not_found)
        .method_not_allowed_fallback(handlers::method_not_allowed)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    match contract {
        Some(c) => app.layer(axum::middleware::from_fn_with_state(c, contract::check_responses)),
        None => app,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, bind: std::net::SocketAddr) -> Result<(), StartupError> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub(crate) fn parse_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." { String::new() } else { format!(" at `{path}`") };
        ApiError::bad_request(format!("invalid request body{at}: {}", e.inner()))
    })
}

pub(crate) fn body(b: Result<Bytes, BytesRejection>) -> Result<Bytes, ApiError> {
    b.map_err(|r| {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(ErrorCode::PayloadTooLarge, "request body is too large")
        } else {
            ApiError::bad_request(r.body_text())
        }
    })
}

pub(crate) fn query_rejected(r: QueryRejection) -> ApiError {
    ApiError::bad_request(r.body_text())
}

pub(crate) fn path_rejected(r: PathRejection) -> ApiError {
    ApiError::bad_request(r.body_text())
}

/// Runs registry or backend work off the async threads.
pub(crate) async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker task failed: {e}")))?
}

pub(crate) fn raw(media_type: &str, bytes: Vec<u8>) -> Response {
    let mut r = bytes.into_response();
    if let Ok(v) = HeaderValue::from_str(media_type) {
        r.headers_mut().insert(CONTENT_TYPE, v);
    }
    r
}

/// Percent-encodes a path segment.
pub fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~:@".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use replicator_core::backend::BackendError;
use replicator_core::crosswalk::CrosswalkError;
use replicator_core::registry::RegistryError;
use replicator_core::template::TemplateError;
use replicator_core::Finding;
use serde::Serialize;

/// Machine-readable error codes. Each code has exactly one HTTP status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    InvalidPath,
    UnknownScheme,
    NotFound,
    Unresolvable,
    MethodNotAllowed,
    NotReady,
    FrozenDataset,
    DuplicatePid,
    PayloadTooLarge,
    ValidationFailed,
    ReviewFailed,
    InvalidTemplate,
    ParseError,
    MissingRequired,
    CoercionError,
    InvalidMapping,
    Internal,
    RunnerUnavailable,
    SchemaViolation,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 20] = [
        Self::BadRequest,
        Self::InvalidPath,
        Self::UnknownScheme,
        Self::NotFound,
        Self::Unresolvable,
        Self::MethodNotAllowed,
        Self::NotReady,
        Self::FrozenDataset,
        Self::DuplicatePid,
        Self::PayloadTooLarge,
        Self::ValidationFailed,
        Self::ReviewFailed,
        Self::InvalidTemplate,
        Self::ParseError,
        Self::MissingRequired,
        Self::CoercionError,
        Self::InvalidMapping,
        Self::Internal,
        Self::RunnerUnavailable,
        Self::SchemaViolation,
    ];

    pub fn status(self) -> StatusCode {
        use ErrorCode::*;
        match self {
            BadRequest | InvalidPath | UnknownScheme => StatusCode::BAD_REQUEST,
            NotFound | Unresolvable => StatusCode::NOT_FOUND,
            MethodNotAllowed => StatusCode::METHOD_NOT_ALLOWED,
            NotReady | FrozenDataset | DuplicatePid => StatusCode::CONFLICT,
            PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            ValidationFailed | ReviewFailed | InvalidTemplate | ParseError | MissingRequired | CoercionError
            | InvalidMapping => StatusCode::UNPROCESSABLE_ENTITY,
            Internal | SchemaViolation => StatusCode::INTERNAL_SERVER_ERROR,
            RunnerUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        }
    }

    pub fn as_str(self) -> &'static str {
        use ErrorCode::*;
        match self {
            BadRequest => "bad_request",
            InvalidPath => "invalid_path",
            UnknownScheme => "unknown_scheme",
            NotFound => "not_found",
            Unresolvable => "unresolvable",
            MethodNotAllowed => "method_not_allowed",
            NotReady => "not_ready",
            FrozenDataset => "frozen_dataset",
            DuplicatePid => "duplicate_pid",
            PayloadTooLarge => "payload_too_large",
            ValidationFailed => "validation_failed",
            ReviewFailed => "review_failed",
            InvalidTemplate => "invalid_template",
            ParseError => "parse_error",
            MissingRequired => "missing_required",
            CoercionError => "coercion_error",
            InvalidMapping => "invalid_mapping",
            Internal => "internal",
            RunnerUnavailable => "runner_unavailable",
            SchemaViolation => "schema_violation",
        }
    }
}

/// JSON error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    pub status: u16,
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<Finding>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { status: code.status().as_u16(), code, message: message.into(), details: Vec::new() }
    }

    pub fn with_details(mut self, details: Vec<Finding>) -> Self {
        self.details = details;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status, self.code.as_str(), self.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.code.status().is_server_error() {
            log::error!("{self}");
        }
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        use ErrorCode::*;
        let message = e.to_string();
        match e {
            RegistryError::DuplicatePid(_) => Self::new(DuplicatePid, message),
            RegistryError::FrozenDataset { .. } => Self::new(FrozenDataset, message),
            RegistryError::ReviewFailed(findings) => Self::new(ReviewFailed, message).with_details(findings),
            RegistryError::UnknownDataset(_) | RegistryError::UnknownVersion { .. } | RegistryError::UnknownFile { .. } => {
                Self::new(NotFound, message)
            }
            RegistryError::UnknownScheme(_) => Self::new(UnknownScheme, message),
            RegistryError::Unresolvable { .. } => Self::new(Unresolvable, message),
            RegistryError::InvalidRequest(_) => Self::new(BadRequest, message),
            RegistryError::Io { .. } | RegistryError::Corrupt { .. } => Self::new(Internal, message),
        }
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        use ErrorCode::*;
        let message = e.to_string();
        match e {
            BackendError::ValidationFailed(findings) => Self::new(ValidationFailed, message).with_details(findings),
            BackendError::RunnerUnavailable(_) => Self::new(RunnerUnavailable, message),
            BackendError::UnknownJob(_) | BackendError::OutputNotFound(_) => Self::new(NotFound, message),
            BackendError::PathRejected(_) => Self::new(InvalidPath, message),
            BackendError::Render(_) => Self::new(ValidationFailed, message),
            BackendError::Io { .. } => Self::new(Internal, message),
        }
    }
}

impl From<CrosswalkError> for ApiError {
    fn from(e: CrosswalkError) -> Self {
        let message = e.to_string();
        let (code, rule) = match &e {
            CrosswalkError::ParseError { .. } => (ErrorCode::ParseError, "parse-error"),
            CrosswalkError::MissingRequired { .. } => (ErrorCode::MissingRequired, "missing-required"),
            CrosswalkError::CoercionError { .. } => (ErrorCode::CoercionError, "coercion-error"),
            CrosswalkError::InvalidMapping(_) => (ErrorCode::InvalidMapping, "invalid-mapping"),
        };
        let location = e.field().map(|f| format!("$.fields.{f}")).unwrap_or_else(|| "$".into());
        Self::new(code, &message).with_details(vec![Finding::error(rule, location, message)])
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        let message = e.to_string();
        Self::new(ErrorCode::InvalidTemplate, &message).with_details(vec![e.to_finding()])
    }
}

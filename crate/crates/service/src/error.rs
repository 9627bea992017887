use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// An HTTP error with a machine-readable code.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            axis: None,
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "busy", "a job is running on this session")
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", message)
    }
}

impl From<tapmobo::Error> for ApiError {
    fn from(e: tapmobo::Error) -> Self {
        use tapmobo::Error as E;
        let message = e.to_string();
        match e {
            E::InvalidAxis { axis, .. } | E::OutOfBounds { axis, .. } => Self {
                axis: Some(axis),
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_axis", message)
            },
            E::InvalidConfig(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", message),
            E::InvalidInput(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", message),
            E::Parse(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "parse_error", message),
            E::SchemaVersion { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "schema_version", message),
            E::Infeasible(_) => Self::new(StatusCode::CONFLICT, "infeasible", message),
            E::InvalidState { .. } => Self::new(StatusCode::CONFLICT, "invalid_state", message),
            E::UnsupportedDimension(_) | E::NotPositiveDefinite { .. } | E::Io(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

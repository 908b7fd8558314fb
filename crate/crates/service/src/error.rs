use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use leveler_core::alignment::AlignError;
use leveler_core::harness::HarnessError;
use serde::{Deserialize, Serialize};

use crate::session::SessionError;

/// Error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} {id:?}"))
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::LockViolation(_) | SessionError::Align(AlignError::LockViolation(_)) => {
                Self::conflict("lock_violation", msg)
            }
            SessionError::NothingToUndo => Self::conflict("nothing_to_undo", msg),
            SessionError::Align(AlignError::InvalidLock { .. }) => Self::bad_request("invalid_lock", msg),
            SessionError::Align(AlignError::UnknownLink(_)) => Self::bad_request("unknown_link", msg),
            SessionError::Align(AlignError::OverlappingReplacements(_)) => {
                Self::bad_request("overlapping_replacements", msg)
            }
            SessionError::Align(AlignError::StaleAlignment(_)) => Self::conflict("stale_alignment", msg),
            SessionError::Align(AlignError::TooFewSentences(_)) => Self::bad_request("too_few_sentences", msg),
        }
    }
}

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        let msg = e.to_string();
        match e {
            HarnessError::UnknownRun(id) => Self::not_found("run", &id),
            HarnessError::UnknownCandidate(id) => Self::not_found("candidate", &id),
            HarnessError::InvalidSpec(_) | HarnessError::EmptySample | HarnessError::SampleTooLarge { .. } => {
                Self::bad_request("invalid_request", msg)
            }
            HarnessError::Provider(_) => Self::bad_request("provider_config", msg),
            _ => Self::internal(msg),
        }
    }
}

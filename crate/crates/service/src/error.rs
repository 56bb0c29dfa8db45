use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use modavg::error::Error;
use serde_json::{json, Value};

/// An error rendered as `{"error": code, "detail": message, ...}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
    /// Extra machine-readable fields merged into the body.
    pub extra: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        Self { status, code, detail: detail.into(), extra: None }
    }

    pub fn invalid(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_input", detail)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`"))
    }

    pub fn archive(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_archive", detail)
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use StatusCode as S;
        let detail = e.to_string();
        let (status, code, extra) = match &e {
            Error::InvalidInput(_) => (S::BAD_REQUEST, "invalid_input", None),
            Error::Parse(_) => (S::BAD_REQUEST, "parse_error", None),
            Error::EmptyInput => (S::BAD_REQUEST, "empty_input", None),
            Error::EmptyTestedSet => (S::BAD_REQUEST, "empty_tested_set", None),
            Error::UnknownVariables(v) => (S::BAD_REQUEST, "unknown_variables", Some(json!({ "variables": v }))),
            Error::ZeroVarianceColumn(c) => (S::UNPROCESSABLE_ENTITY, "zero_variance_column", Some(json!({ "column": c }))),
            Error::RankDeficient { rank, cols, .. } => {
                (S::UNPROCESSABLE_ENTITY, "rank_deficient", Some(json!({ "rank": rank, "cols": cols })))
            }
            Error::DegenerateVariance { .. } => (S::UNPROCESSABLE_ENTITY, "degenerate_variance", None),
            Error::TooManyVariables { nu, cap } => {
                (S::UNPROCESSABLE_ENTITY, "too_many_variables", Some(json!({ "nu": nu, "cap": cap })))
            }
            Error::InadmissibleGroup { block } => {
                (S::UNPROCESSABLE_ENTITY, "inadmissible_group", Some(json!({ "block": block })))
            }
            Error::SearchBudgetExceeded { budget } => {
                (S::UNPROCESSABLE_ENTITY, "search_budget_exceeded", Some(json!({ "budget": budget })))
            }
            Error::ConvergenceFailure(_) => (S::INTERNAL_SERVER_ERROR, "convergence_failure", None),
        };
        Self { status, code, detail, extra }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "detail": self.detail });
        if let (Some(Value::Object(extra)), Value::Object(map)) = (self.extra, &mut body) {
            map.extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

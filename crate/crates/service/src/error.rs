use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use crate::schema::ServerMessage;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServiceError {
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    /// The requested checkpoint or baseline could not be built.
    #[error("controller: {0}")]
    Controller(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Controller(_) => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (
            self.status(),
            Json(ServerMessage::error(None, self.to_string())),
        )
            .into_response()
    }
}

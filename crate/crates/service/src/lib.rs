//! Live simulation sessions over HTTP and WebSocket.

pub mod error;
pub mod schema;
pub mod server;
pub mod session;

pub use error::ServiceError;
pub use server::{router, serve, AppState};
pub use session::{ServiceConfig, SessionCore, SessionDefaults};

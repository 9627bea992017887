//! HTTP steering service and command-line driver for `tapmobo` sessions.

pub mod api;
pub mod cli;
pub mod error;

pub use api::{router, AppState};
pub use error::{ApiError, ApiResult};

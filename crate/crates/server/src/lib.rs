//! Storage service for system outputs and its HTTP API.

pub mod http;
pub mod store;

pub use http::{router, serve, ApiError};
pub use store::{AnalysisRequest, Fault, Store, StoreError, SystemEntry};

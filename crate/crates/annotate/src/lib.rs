//! Annotation service for blind human review of candidate SQL queries.

pub mod protocol;
pub mod service;
pub mod store;

pub use protocol::{AccuracyReport, Label, Round, Session};
pub use service::{router, serve, Service, ServiceConfig};

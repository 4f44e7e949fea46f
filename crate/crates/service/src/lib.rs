//! HTTP facade over the GI-bleeding risk engine.
//!
//! The service loads one model artifact and one guideline store at startup and
//! treats both as immutable snapshots. Sessions bind a patient record to a chat
//! transcript; prediction, what-if and plot endpoints are stateless.

pub mod app;
pub mod config;
pub mod error;
pub mod patients;
pub mod remote;
pub mod session;

pub use config::{BackendKind, RemoteConfig, ServiceConfig};
pub use error::{ServiceError, ServiceResult};

//! HTTP verification service and command-line front end.

pub mod cli;
pub mod config;
pub mod server;

pub use config::{ConfigError, ServiceConfig};
pub use server::{load_models, router, serve, AppState, Limits, Models, VerifyRequest};

//! Discovery sessions: configuration, the end-to-end pipeline, evaluation
//! commands, and an HTTP service hosting the interactive labeling protocol.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod service;
pub mod store;

pub use config::{OracleMode, SessionConfig};

//! HTTP API and operator CLI for the harmlens annotation platform.

pub mod api;
pub mod auth;
pub mod cli;
pub mod config;
pub mod reports;

//! Configuration, dataset ingestion and metrics persistence.

pub mod config;
pub mod idx;
pub mod metrics;
pub mod synthetic;

//! Batch tooling around `platoon-fd-core`: dataset ingestion, CSV tables,
//! SVG plots, and the pipeline behind the `platoon-fd` binary.

pub mod config;
pub mod ingest;
pub mod pipeline;
pub mod plot;
pub mod schema;
pub mod tables;

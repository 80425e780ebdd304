//! File formats, ingestion, training and evaluation drivers, and the HTTP
//! generation service built on `motion-core`.

pub mod align;
pub mod bvh;
pub mod checkpoint;
pub mod clip;
pub mod config;
pub mod corpus;
pub mod evaluate;
pub mod fixtures;
pub mod generate;
pub mod ingest;
pub mod request;
pub mod service;
pub mod retarget;
pub mod store;
pub mod train;

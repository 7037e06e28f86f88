//! Trace-driven simulator for SLC caching schemes on 3D TLC flash.

pub mod flash;
pub mod ftl;
pub mod op;
pub mod policy;
pub mod workload;
pub mod engine;
pub mod metrics;
pub mod suites;
pub mod cli;

//! Everything around the engines: data ingestion, synthetic data,
//! per-image baselines and benchmark orchestration.

pub mod baseline;
pub mod bench;
pub mod dataset;
pub mod synth;

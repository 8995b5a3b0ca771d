//! Benchmark harness for prompt-guided zero-shot object detectors.
//!
//! Ground truth and detections use COCO conventions. Detections come from a
//! built-in synthetic detector or from an external adapter process speaking
//! newline-delimited JSON; see [`adapter`].

pub mod adapter;
pub mod cascade;
pub mod cli;
pub mod coco;
pub mod crossover;
pub mod geometry;
pub mod harness;
pub mod matcher;
pub mod metrics;
pub mod mock;
pub mod plot;
pub mod report;
pub mod rng;
pub mod stats;

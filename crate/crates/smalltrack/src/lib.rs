//! Benchmark toolkit and candidate-association tracker for small,
//! fast-moving targets.
//!
//! The crate bundles everything needed to study the problem end to end on
//! synthetic data:
//!
//! * [`geometry`] — box arithmetic: IoU, center error, relative speed
//! * [`dataset`] — sequence bundles, attribute rules, benchmark statistics
//! * [`metrics`] — one-pass evaluation: precision/success curves, PRC, AUC
//! * [`tinynet`] — dense layers, attention, reverse-mode gradients, Adam
//! * [`matcher`] — dual-branch candidate association with dustbin-augmented
//!   entropic assignment
//! * [`tracker`] — the online loop: candidate extraction, object database,
//!   target selection
//! * [`sim`] — synthetic small/fast-target sequence generator
//! * [`cli`] — the command pipelines behind the `smalltrack` binary
//!
//! See the crate examples for one runnable program per capability.

pub mod cli;
pub mod dataset;
pub mod geometry;
pub mod matcher;
pub mod metrics;
pub mod sim;
pub mod tinynet;
pub mod tracker;

//! Deterministic desk-scale MLP training engine instrumented with
//! activation-balance observables.
//!
//! The crate trains small feed-forward ReLU networks with exact,
//! reproducible arithmetic and watches the *internal* activation structure
//! while it trains: a per-module balance indicator in [0, 1], dead-unit
//! fractions, and an activation-pattern convergence observable on a fixed
//! probe batch. On top of the single-run engine sit a hyperparameter
//! screening harness (how early do runs become distinguishable from the
//! indicator alone?) and an online controller that adapts per-layer weight
//! decay from the indicator.

pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod data;
pub mod error;
pub mod logio;
pub mod metric;
pub mod network;
pub mod observers;
pub mod plot;
pub mod screening;
pub mod train;

pub use error::{Error, Result};

//! Design of `k` bus lines over a fixed metro skeleton, maximizing
//! bottom-quantile public-transport accessibility.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`territory`] — the study area: centroid grid, points of interest,
//!   metro lines, candidate bus stops; synthetic generation and JSON
//!   persistence.
//! * [`transit_graph`] — the multi-modal, time-weighted router graph for a
//!   scenario plus a set of bus lines (walking, boarding, riding,
//!   alighting edges).
//! * [`accessibility`] — shortest travel times and the accessibility
//!   metrics: per-centroid, global, and bottom-quantile.
//! * [`mdp`] — the deterministic search space: states are partitions of the
//!   candidate stops into lines, actions move one stop to another line,
//!   rewards are quantile-accessibility deltas.
//! * [`qnet`] — a message-passing network that scores actions with
//!   Q-values, with hand-written gradients and SGD updates.
//! * [`optimizers`] — online Q-learning search, random search, and a
//!   genetic algorithm, all under matched budgets.
//! * [`stats`] — improvement ratios, one-sample t-test, empirical CDFs.
//! * [`heatmap`] — per-centroid improvement export (CSV / GeoJSON).
//!
//! All core math is generic over the floating-point [`Scalar`]; concrete
//! `f64` and `f32` aliases for the main types live at the crate root.

pub mod accessibility;
pub mod error;
pub mod heatmap;
pub mod mdp;
pub mod optimizers;
pub mod qnet;
mod rng;
mod scalar;
pub mod stats;
pub mod territory;
pub mod transit_graph;

pub use error::{Error, Result};
pub use rng::sub_seed;
pub use scalar::Scalar;

/// Double-precision aliases; the CLI and tests use these.
pub type Scenario64 = territory::Scenario<f64>;
pub type BusLine64 = transit_graph::BusLine<f64>;
pub type RouterGraph64 = transit_graph::RouterGraph<f64>;
pub type AccessibilityReport64 = accessibility::AccessibilityReport<f64>;
pub type QNetworkParams64 = qnet::QNetworkParams<f64>;
pub type OptimizerResult64 = optimizers::OptimizerResult<f64>;

/// Single-precision aliases.
pub type Scenario32 = territory::Scenario<f32>;
pub type BusLine32 = transit_graph::BusLine<f32>;
pub type RouterGraph32 = transit_graph::RouterGraph<f32>;
pub type AccessibilityReport32 = accessibility::AccessibilityReport<f32>;
pub type QNetworkParams32 = qnet::QNetworkParams<f32>;
pub type OptimizerResult32 = optimizers::OptimizerResult<f32>;

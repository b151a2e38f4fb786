//! Auction-based allocation of upload bandwidth to layered video streams
//! in a peer-to-peer overlay.
//!
//! Upstream peers sell their upload layer by layer, base layer first.
//! Downstream peers bid for each subscribed layer across all their upstream
//! links, splitting demand so as to equalize price plus marginal congestion
//! cost, and raise their price on links that under-serve them up to a
//! class-specific reference price. Runs are deterministic given a seed.

pub mod auction;
pub mod bidder;
pub mod config;
pub mod cost;
pub mod error;
pub mod metrics;
pub mod overlay;
pub mod runner;
pub mod simulation;
pub mod trace;
pub mod units;

pub use config::{Mode, ScenarioConfig};
pub use error::{AuctionError, ConfigError, CostError, RunError, SimulationError};
pub use overlay::{generate_overlay, Overlay, PeerId};
pub use simulation::{run_baseline, run_mode, run_scenario, ScenarioResult, SimulationParams};
pub use units::{Bandwidth, Payment, Price};

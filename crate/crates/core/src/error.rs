use std::path::PathBuf;

use thiserror::Error;

use crate::overlay::PeerId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("bandwidth {b} kbps is outside the cost domain [0, {capacity}) kbps")]
    Domain { b: f64, capacity: f64 },
    #[error("cost curve capacity must be positive, got {0}")]
    Capacity(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum AuctionError {
    #[error("auction for {phase} did not reach a fixed point within {max_rounds} rounds")]
    NonConvergence { phase: String, max_rounds: u32 },
    #[error("upstream {upstream} granted {granted} units to peer {downstream} which requested {requested}")]
    OverGrant {
        upstream: PeerId,
        downstream: PeerId,
        granted: u64,
        requested: u64,
    },
    #[error("ledger of upstream {upstream}: {reason}")]
    Ledger { upstream: PeerId, reason: String },
    #[error("conservation violated: {0}")]
    Conservation(String),
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error("overlay is invalid: {0}")]
    InvalidOverlay(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run seed={seed} mode={mode} failed: {source}")]
    Simulation {
        seed: u64,
        mode: String,
        #[source]
        source: SimulationError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

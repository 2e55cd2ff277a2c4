//! Simulation and learning core for semantic state synchronization between an
//! access point (AP) that forwards tasks and a service node (SN) that reports
//! its resource state.
//!
//! The crate is organised bottom-up: [`sim`] is the event engine, [`workload`],
//! [`node`] and [`link`] model the physical system, [`semantics`] and
//! [`policies`] hold the learned and rule-based decision makers, [`system`]
//! wires everything into a closed-loop episode, [`ctde`] produces and fits the
//! training data and [`harness`] runs configured experiments.

pub mod ctde;
pub mod harness;
pub mod link;
pub mod model;
pub mod node;
pub mod par;
pub mod policies;
pub mod semantics;
pub mod sim;
pub mod system;
pub mod workload;

use semsync_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event scheduled at {time} before the clock {clock}")]
    Causality { time: f64, clock: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("learned policy selected but no parameters available: {0}")]
    MissingParams(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

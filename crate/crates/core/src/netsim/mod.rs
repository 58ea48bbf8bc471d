//! Deterministic trace-driven simulation: link traces, synthetic trace
//! generation, path probing and experiment orchestration.

mod experiment;
mod generator;
mod probe;
pub mod scenarios;
mod trace;

use thiserror::Error;

use crate::agent::AgentError;
use crate::overlay::{NodeId, OverlayError};
use crate::rnn::RnnError;

pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentOutput, PairOutcome, PairSelection, TraceSource,
    DEFAULT_PROBING_BUDGET,
};
pub use generator::{generate_trace, BaseLatency, GeneratorSpec, LinkRtt, RandomFamily, TraceEvent};
pub use probe::{path_rtt, probe_path, ProbeRecord};
pub use trace::{LinkSample, LinkTrace, OutageTracker, OUTAGE_LOSS_RUN, ROUND_SECONDS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("round {round} outside trace of {rounds} rounds")]
    RoundOutOfRange { round: u32, rounds: u32 },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("probing budget exceeded: {charged} links charged, budget {budget}")]
    BudgetViolation { charged: u32, budget: u32 },
    #[error("agent {src}->{dst}: {source}")]
    Agent {
        src: NodeId,
        dst: NodeId,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] Box<crate::ingest::IngestError>),
}

impl SimError {
    /// True when the failure is a fixed point that did not converge.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SimError::Agent {
                source: AgentError::Rnn(RnnError::NonConvergence { .. }),
                ..
            }
        )
    }
}

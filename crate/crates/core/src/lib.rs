//! Overlay routing with a random-neural-network reinforcement-learning agent,
//! driven by recorded or synthetic link-latency traces.

pub mod agent;
pub mod cli;
pub mod ingest;
pub mod metrics;
pub mod netsim;
pub mod oracle;
pub mod overlay;
pub mod rnn;

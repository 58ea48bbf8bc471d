//! Overlay topology, path enumeration, the SMART header codec and proxy
//! forwarding.

mod header;
mod path;
mod proxy;
mod topology;

use thiserror::Error;

pub use header::{HeaderError, SmartHeader, FIXED_LEN, MAGIC, PER_HOP_LEN, VERSION};
pub use path::{enumerate_paths, enumerate_paths_n, OverlayPath, DEFAULT_MAX_HOPS};
pub use proxy::{
    path_rtd_from_segments, stamp_return, DropReason, ForwardAction, PathRtd, Proxy, StampedProbe,
};
pub use topology::{NodeId, NodeInfo, OverlayTopology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OverlayError {
    #[error("invalid pair: source and destination are both {0}")]
    InvalidPair(NodeId),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("incomplete probe: {0}")]
    IncompleteProbe(String),
    #[error(transparent)]
    Header(#[from] HeaderError),
}

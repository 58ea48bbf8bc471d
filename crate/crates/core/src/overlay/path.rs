use std::fmt;

use serde::{Deserialize, Serialize};

use super::{NodeId, OverlayError, OverlayTopology};

/// Default cap on overlay hops.
pub const DEFAULT_MAX_HOPS: usize = 4;

/// Source-routed overlay path. An empty `vias` list is the direct IP route.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "PathRepr")]
pub struct OverlayPath {
    src: NodeId,
    dst: NodeId,
    vias: Vec<NodeId>,
}

#[derive(Deserialize)]
struct PathRepr {
    src: NodeId,
    dst: NodeId,
    #[serde(default)]
    vias: Vec<NodeId>,
}

impl TryFrom<PathRepr> for OverlayPath {
    type Error = OverlayError;
    fn try_from(r: PathRepr) -> Result<Self, OverlayError> {
        OverlayPath::new(r.src, r.dst, r.vias)
    }
}

impl OverlayPath {
    pub fn new(src: NodeId, dst: NodeId, vias: Vec<NodeId>) -> Result<Self, OverlayError> {
        if src == dst {
            return Err(OverlayError::InvalidPair(src));
        }
        for (k, v) in vias.iter().enumerate() {
            if *v == src || *v == dst || vias[..k].contains(v) {
                return Err(OverlayError::InvalidPath(format!(
                    "via {v} repeats a node of {src}->{dst}"
                )));
            }
        }
        if vias.len() + 1 > u8::MAX as usize {
            return Err(OverlayError::InvalidPath("too many hops".into()));
        }
        Ok(Self { src, dst, vias })
    }

    pub fn direct(src: NodeId, dst: NodeId) -> Result<Self, OverlayError> {
        Self::new(src, dst, Vec::new())
    }

    pub fn src(&self) -> NodeId {
        self.src
    }

    pub fn dst(&self) -> NodeId {
        self.dst
    }

    pub fn vias(&self) -> &[NodeId] {
        &self.vias
    }

    pub fn is_direct(&self) -> bool {
        self.vias.is_empty()
    }

    /// Number of proxy-to-proxy IP segments.
    pub fn hop_count(&self) -> usize {
        self.vias.len() + 1
    }

    /// Every node visited, source first.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::once(self.src)
            .chain(self.vias.iter().copied())
            .chain(std::iter::once(self.dst))
    }

    /// Ordered (from, to) segments.
    pub fn segments(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        let nodes: Vec<NodeId> = self.nodes().collect();
        (0..nodes.len() - 1).map(move |k| (nodes[k], nodes[k + 1]))
    }

    /// Nodes listed in the SMART header: the vias followed by the destination.
    pub fn header_hops(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.vias.iter().copied().chain(std::iter::once(self.dst))
    }
}

impl fmt::Display for OverlayPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for node in self.nodes() {
            if !first {
                f.write_str(">")?;
            }
            write!(f, "{node}")?;
            first = false;
        }
        Ok(())
    }
}

/// All simple overlay paths from `src` to `dst` with at most `max_hops`
/// segments: the direct route first, then the via sequences in lexicographic
/// order.
pub fn enumerate_paths(
    topo: &OverlayTopology,
    src: NodeId,
    dst: NodeId,
    max_hops: usize,
) -> Result<Vec<OverlayPath>, OverlayError> {
    enumerate_paths_n(topo.len(), src, dst, max_hops)
}

/// As [`enumerate_paths`] over nodes `0..n`.
pub fn enumerate_paths_n(
    n: usize,
    src: NodeId,
    dst: NodeId,
    max_hops: usize,
) -> Result<Vec<OverlayPath>, OverlayError> {
    if src == dst {
        return Err(OverlayError::InvalidPair(src));
    }
    if max_hops == 0 {
        return Err(OverlayError::InvalidPath("max_hops must be at least 1".into()));
    }
    for node in [src, dst] {
        if node.index() >= n {
            return Err(OverlayError::UnknownNode(node));
        }
    }
    let relays: Vec<NodeId> = (0..n as u32)
        .map(NodeId)
        .filter(|&v| v != src && v != dst)
        .collect();
    let mut paths = vec![OverlayPath::direct(src, dst)?];
    let mut stack = Vec::new();
    extend_vias(&relays, max_hops - 1, &mut stack, &mut |vias| {
        paths.push(OverlayPath {
            src,
            dst,
            vias: vias.to_vec(),
        });
    });
    Ok(paths)
}

// Depth-first in relay order, emitting each prefix before its extensions,
// which yields lexicographic order.
fn extend_vias(
    relays: &[NodeId],
    remaining: usize,
    stack: &mut Vec<NodeId>,
    emit: &mut impl FnMut(&[NodeId]),
) {
    if remaining == 0 {
        return;
    }
    for &v in relays {
        if stack.contains(&v) {
            continue;
        }
        stack.push(v);
        emit(stack);
        extend_vias(relays, remaining - 1, stack, emit);
        stack.pop();
    }
}

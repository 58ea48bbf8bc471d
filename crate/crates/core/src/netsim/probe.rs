use serde::{Deserialize, Serialize};

use super::LinkTrace;
use crate::overlay::OverlayPath;

/// Measurement of one probed path in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub round: u32,
    pub path: OverlayPath,
    /// Per-segment RTT, `None` for a lost segment.
    pub segment_rtts: Vec<Option<u32>>,
    pub total_rtt: Option<u64>,
    pub lost: bool,
    pub links_charged: u32,
}

impl ProbeRecord {
    /// Record for a path whose segments had the given RTTs.
    pub fn from_segments(round: u32, path: OverlayPath, segment_rtts: Vec<Option<u32>>) -> Self {
        let total_rtt = segment_rtts
            .iter()
            .try_fold(0u64, |acc, s| s.map(|v| acc + u64::from(v)));
        let links_charged = path.hop_count() as u32;
        Self {
            round,
            path,
            segment_rtts,
            lost: total_rtt.is_none(),
            total_rtt,
            links_charged,
        }
    }

    /// Probe that was lost outright.
    pub fn lost(round: u32, path: OverlayPath) -> Self {
        let segments = vec![None; path.hop_count()];
        Self::from_segments(round, path, segments)
    }
}

/// Probes `path` against the trace: every segment contributes its round-trip
/// sample for `round`, and the path is lost if any segment is.
pub fn probe_path(trace: &LinkTrace, round: u32, path: &OverlayPath) -> ProbeRecord {
    let segments = path
        .segments()
        .map(|(a, b)| trace.rtt(round, a, b))
        .collect();
    ProbeRecord::from_segments(round, path.clone(), segments)
}

/// Path RTT without building a record.
#[inline]
pub fn path_rtt(trace: &LinkTrace, round: u32, path: &OverlayPath) -> Option<u64> {
    let mut total = 0u64;
    for (a, b) in path.segments() {
        total += u64::from(trace.rtt(round, a, b)?);
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::NodeId;

    fn trace() -> LinkTrace {
        let mut t = LinkTrace::all_lost(3, 2).unwrap();
        t.set(0, NodeId(0), NodeId(2), Some(400_000)).unwrap();
        t.set(0, NodeId(0), NodeId(1), Some(100_000)).unwrap();
        t.set(0, NodeId(1), NodeId(2), Some(150_000)).unwrap();
        t.set(1, NodeId(0), NodeId(1), Some(100_000)).unwrap();
        t
    }

    #[test]
    fn direct_probe() {
        let p = probe_path(&trace(), 0, &OverlayPath::direct(NodeId(0), NodeId(2)).unwrap());
        assert_eq!(p.total_rtt, Some(400_000));
        assert_eq!(p.links_charged, 1);
        assert!(!p.lost);
    }

    #[test]
    fn two_hop_probe_adds_segments() {
        let path = OverlayPath::new(NodeId(0), NodeId(2), vec![NodeId(1)]).unwrap();
        let p = probe_path(&trace(), 0, &path);
        assert_eq!(p.total_rtt, Some(250_000));
        assert_eq!(p.segment_rtts, vec![Some(100_000), Some(150_000)]);
        assert_eq!(p.links_charged, 2);
        assert_eq!(path_rtt(&trace(), 0, &path), Some(250_000));
    }

    #[test]
    fn lost_segment_loses_probe() {
        let path = OverlayPath::new(NodeId(0), NodeId(2), vec![NodeId(1)]).unwrap();
        let p = probe_path(&trace(), 1, &path);
        assert!(p.lost);
        assert_eq!(p.total_rtt, None);
        assert_eq!(p.segment_rtts, vec![Some(100_000), None]);
        assert_eq!(p.links_charged, 2);
    }
}

//! Brute-force optimal paths: the benchmark every routing decision is scored
//! against.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{path_rtt, LinkTrace, ROUND_SECONDS};
use crate::overlay::{
    enumerate_paths_n, path_rtd_from_segments, stamp_return, ForwardAction, NodeId, OverlayError,
    OverlayPath, Proxy, SmartHeader, StampedProbe,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no usable path from {src} to {dst} at round {round}")]
    NoPath { src: NodeId, dst: NodeId, round: u32 },
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleChoice {
    pub path: OverlayPath,
    pub rtt_us: u64,
}

/// Preference between two measured paths: lower RTT, then fewer hops, then
/// the lexicographically smaller via sequence.
pub fn compare_paths(a: (&OverlayPath, u64), b: (&OverlayPath, u64)) -> Ordering {
    a.1.cmp(&b.1)
        .then(a.0.hop_count().cmp(&b.0.hop_count()))
        .then_with(|| a.0.vias().cmp(b.0.vias()))
}

/// Best candidate at `round`, as an index into `candidates` with its RTT.
pub fn optimal_among(trace: &LinkTrace, round: u32, candidates: &[OverlayPath]) -> Option<(usize, u64)> {
    let mut best: Option<(usize, u64)> = None;
    for (k, path) in candidates.iter().enumerate() {
        let Some(rtt) = path_rtt(trace, round, path) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((b, b_rtt)) => compare_paths((path, rtt), (&candidates[b], b_rtt)) == Ordering::Less,
        };
        if better {
            best = Some((k, rtt));
        }
    }
    best
}

/// Minimum RTT among candidates with exactly h hops, for h = 1..=max_hops.
pub fn hop_class_minima(
    trace: &LinkTrace,
    round: u32,
    candidates: &[OverlayPath],
    max_hops: usize,
) -> Vec<Option<u64>> {
    let mut minima = vec![None; max_hops];
    for path in candidates {
        let h = path.hop_count();
        if h > max_hops {
            continue;
        }
        if let Some(rtt) = path_rtt(trace, round, path) {
            let slot = &mut minima[h - 1];
            *slot = Some(slot.map_or(rtt, |m: u64| m.min(rtt)));
        }
    }
    minima
}

/// Exhaustive minimum-RTT path with at most `max_hops` overlay hops.
pub fn optimal_path(
    trace: &LinkTrace,
    round: u32,
    src: NodeId,
    dst: NodeId,
    max_hops: usize,
) -> Result<OracleChoice, OracleError> {
    let candidates = enumerate_paths_n(trace.nodes(), src, dst, max_hops)?;
    optimal_among(trace, round, &candidates)
        .map(|(k, rtt_us)| OracleChoice {
            path: candidates[k].clone(),
            rtt_us,
        })
        .ok_or(OracleError::NoPath { src, dst, round })
}

/// Sends a time-stamped probe along `path` through simulated proxies and
/// returns what the source sees. Each segment's round-trip sample is split
/// into a forward half and a return half; a lost segment loses the probe.
pub fn stamped_probe(trace: &LinkTrace, round: u32, path: &OverlayPath) -> StampedProbe {
    let sent_at_us = u64::from(round) * ROUND_SECONDS * 1_000_000 + 1;
    let header = SmartHeader::for_path(path, u64::from(round));
    let mut packet = header.encode().expect("paths produce valid headers");
    let hops: Vec<NodeId> = path.header_hops().collect();
    let mut segment_rtts = Vec::with_capacity(hops.len());

    let mut now = sent_at_us;
    let mut prev = path.src();
    for (k, &hop) in hops.iter().enumerate() {
        let Some(rtt) = trace.rtt(round, prev, hop) else {
            return StampedProbe {
                sent_at_us,
                returned_at_us: None,
                header: SmartHeader::decode(&packet).expect("valid in flight"),
            };
        };
        let rtt = u64::from(rtt);
        segment_rtts.push(rtt);
        now += rtt / 2;
        let action = Proxy::new(hop).forward_bytes(&mut packet, now);
        let expected = if k + 1 < hops.len() {
            ForwardAction::SendTo(hops[k + 1])
        } else {
            ForwardAction::DeliverToRA
        };
        assert_eq!(action, expected, "simulated proxies follow the header");
        prev = hop;
    }

    let mut header = SmartHeader::decode(&packet).expect("valid after delivery");
    for k in (0..hops.len()).rev() {
        stamp_return(&mut header, k, now).expect("hop in range");
        let rtt = segment_rtts[k];
        now += rtt - rtt / 2;
    }
    StampedProbe {
        sent_at_us,
        returned_at_us: Some(now),
        header,
    }
}

/// Second, independent route to the optimum: every candidate is scored from
/// the stamps of a probe forwarded hop by hop through encoded headers.
pub fn optimal_path_via_probes(
    trace: &LinkTrace,
    round: u32,
    src: NodeId,
    dst: NodeId,
    max_hops: usize,
) -> Result<OracleChoice, OracleError> {
    let candidates = enumerate_paths_n(trace.nodes(), src, dst, max_hops)?;
    let mut best: Option<OracleChoice> = None;
    for path in candidates {
        let probe = stamped_probe(trace, round, &path);
        let rtt = match path_rtd_from_segments(&probe) {
            Ok(rtd) => {
                debug_assert_eq!(rtd.segments_us.iter().sum::<u64>(), rtd.total_us);
                rtd.total_us
            }
            Err(OverlayError::IncompleteProbe(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let better = best
            .as_ref()
            .map_or(true, |b| compare_paths((&path, rtt), (&b.path, b.rtt_us)) == Ordering::Less);
        if better {
            best = Some(OracleChoice { path, rtt_us: rtt });
        }
    }
    best.ok_or(OracleError::NoPath { src, dst, round })
}

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::overlay::NodeId;

/// Consecutive losses after which a source is considered disconnected from
/// a destination.
pub const OUTAGE_LOSS_RUN: u32 = 5;

/// Length of one measurement round in seconds.
pub const ROUND_SECONDS: u64 = 120;

/// One round-trip measurement of an ordered node pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSample {
    pub t: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub rtt_us: Option<u32>,
    pub lost: bool,
}

/// Dense per-round RTT samples for every ordered pair of nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkTrace {
    nodes: usize,
    rounds: u32,
    // round-major, then src, then dst; 0 marks a lost sample
    rtt_us: Vec<u32>,
}

impl LinkTrace {
    /// A trace in which every sample is lost.
    pub fn all_lost(nodes: usize, rounds: u32) -> Result<Self, SimError> {
        if nodes < 2 {
            return Err(SimError::InvalidTrace(format!("need at least 2 nodes, got {nodes}")));
        }
        Ok(Self {
            nodes,
            rounds,
            rtt_us: vec![0; nodes * nodes * rounds as usize],
        })
    }

    /// Builds a trace from samples that must cover every ordered pair in
    /// every round exactly once.
    pub fn from_samples(
        nodes: usize,
        rounds: u32,
        samples: impl IntoIterator<Item = LinkSample>,
    ) -> Result<Self, SimError> {
        let mut trace = Self::all_lost(nodes, rounds)?;
        let mut seen = vec![false; trace.rtt_us.len()];
        let mut count = 0usize;
        for s in samples {
            let idx = trace.checked_index(s.t, s.src, s.dst)?;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(SimError::InvalidTrace(format!(
                    "duplicate sample for round {} {}->{}",
                    s.t, s.src, s.dst
                )));
            }
            if s.lost != s.rtt_us.is_none() || s.rtt_us == Some(0) {
                return Err(SimError::InvalidTrace(format!(
                    "inconsistent sample for round {} {}->{}",
                    s.t, s.src, s.dst
                )));
            }
            trace.rtt_us[idx] = s.rtt_us.unwrap_or(0);
            count += 1;
        }
        let expected = trace.sample_count();
        if count != expected {
            return Err(SimError::InvalidTrace(format!(
                "trace has {count} samples, expected {expected}"
            )));
        }
        Ok(trace)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    /// Number of samples: rounds × ordered pairs.
    pub fn sample_count(&self) -> usize {
        self.rounds as usize * self.nodes * (self.nodes - 1)
    }

    fn checked_index(&self, round: u32, src: NodeId, dst: NodeId) -> Result<usize, SimError> {
        if round >= self.rounds {
            return Err(SimError::RoundOutOfRange { round, rounds: self.rounds });
        }
        for node in [src, dst] {
            if node.index() >= self.nodes {
                return Err(SimError::UnknownNode(node));
            }
        }
        if src == dst {
            return Err(SimError::InvalidTrace(format!("self pair {src}->{dst}")));
        }
        Ok(self.index(round, src, dst))
    }

    #[inline]
    fn index(&self, round: u32, src: NodeId, dst: NodeId) -> usize {
        (round as usize * self.nodes + src.index()) * self.nodes + dst.index()
    }

    /// RTT of `src → dst` at `round`, `None` when the sample was lost.
    ///
    /// Panics if the round or nodes are out of range.
    #[inline]
    pub fn rtt(&self, round: u32, src: NodeId, dst: NodeId) -> Option<u32> {
        assert!(round < self.rounds && src.index() < self.nodes && dst.index() < self.nodes);
        match self.rtt_us[self.index(round, src, dst)] {
            0 => None,
            v => Some(v),
        }
    }

    pub fn set(&mut self, round: u32, src: NodeId, dst: NodeId, rtt_us: Option<u32>) -> Result<(), SimError> {
        let idx = self.checked_index(round, src, dst)?;
        if rtt_us == Some(0) {
            return Err(SimError::InvalidTrace("rtt must be positive".into()));
        }
        self.rtt_us[idx] = rtt_us.unwrap_or(0);
        Ok(())
    }

    pub fn sample(&self, round: u32, src: NodeId, dst: NodeId) -> LinkSample {
        let rtt_us = self.rtt(round, src, dst);
        LinkSample {
            t: round,
            src,
            dst,
            rtt_us,
            lost: rtt_us.is_none(),
        }
    }

    /// All samples in canonical (round, src, dst) order.
    pub fn samples(&self) -> impl Iterator<Item = LinkSample> + '_ {
        let n = self.nodes as u32;
        (0..self.rounds).flat_map(move |t| {
            (0..n).flat_map(move |s| {
                (0..n)
                    .filter(move |d| *d != s)
                    .map(move |d| self.sample(t, NodeId(s), NodeId(d)))
            })
        })
    }

    pub fn lost_count(&self) -> usize {
        self.samples().filter(|s| s.lost).count()
    }

    /// True when the five samples ending at `round` were all lost.
    pub fn is_disconnected(&self, round: u32, src: NodeId, dst: NodeId) -> bool {
        let run = OUTAGE_LOSS_RUN - 1;
        round >= run && (round - run..=round).all(|t| self.rtt(t, src, dst).is_none())
    }
}

/// Streaming form of the outage rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutageTracker {
    consecutive_losses: u32,
}

impl OutageTracker {
    /// Feeds one sample; returns whether the pair is now disconnected.
    pub fn observe(&mut self, lost: bool) -> bool {
        if lost {
            self.consecutive_losses = self.consecutive_losses.saturating_add(1);
        } else {
            self.consecutive_losses = 0;
        }
        self.is_disconnected()
    }

    pub fn is_disconnected(&self) -> bool {
        self.consecutive_losses >= OUTAGE_LOSS_RUN
    }

    pub fn consecutive_losses(&self) -> u32 {
        self.consecutive_losses
    }
}

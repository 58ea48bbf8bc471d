//! Ready-made generator specs for the reference experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BaseLatency, GeneratorSpec, LinkRtt, RandomFamily, TraceEvent};
use crate::overlay::NodeId;

/// One long-haul pair with a single good relay among many mediocre ones.
///
/// Node 0 routes to node 1. The direct route costs `direct_ms`, the path
/// through `relay` costs `best_ms` and every other relay costs between
/// `decoy_min_ms` and `decoy_max_ms`, except `runner_up` which, when set,
/// costs `runner_up_ms`. Links that no 0→1 path uses get
/// `filler_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayScenario {
    pub nodes: usize,
    pub rounds: u32,
    pub direct_ms: f64,
    pub best_ms: f64,
    pub decoy_min_ms: f64,
    pub decoy_max_ms: f64,
    pub filler_ms: f64,
    pub jitter_pct: f64,
    pub relay: NodeId,
    pub runner_up: Option<NodeId>,
    pub runner_up_ms: f64,
}

impl Default for RelayScenario {
    fn default() -> Self {
        Self {
            nodes: 20,
            rounds: 3600,
            direct_ms: 400.0,
            best_ms: 250.0,
            decoy_min_ms: 300.0,
            decoy_max_ms: 450.0,
            filler_ms: 150.0,
            jitter_pct: 2.0,
            relay: NodeId(3),
            runner_up: None,
            runner_up_ms: 300.0,
        }
    }
}

pub const RELAY_SRC: NodeId = NodeId(0);
pub const RELAY_DST: NodeId = NodeId(1);

fn set_sym(m: &mut [Vec<f64>], a: NodeId, b: NodeId, v: f64) {
    m[a.index()][b.index()] = v;
    m[b.index()][a.index()] = v;
}

// Splits a two-segment total into a first leg of 40-60% and the remainder.
fn split(rng: &mut ChaCha8Rng, total: f64) -> (f64, f64) {
    let first = total * rng.gen_range(0.4..0.6);
    (first, total - first)
}

impl RelayScenario {
    /// Base RTT matrix; decoy costs and segment splits are drawn from `seed`.
    pub fn matrix(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.nodes;
        let mut m = vec![vec![self.filler_ms; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        set_sym(&mut m, RELAY_SRC, RELAY_DST, self.direct_ms);
        for v in 2..n as u32 {
            let v = NodeId(v);
            let drawn = rng.gen_range(self.decoy_min_ms..=self.decoy_max_ms);
            let total = if v == self.relay {
                self.best_ms
            } else if Some(v) == self.runner_up {
                self.runner_up_ms
            } else {
                drawn
            };
            let (a, b) = split(&mut rng, total);
            set_sym(&mut m, RELAY_SRC, v, a);
            set_sym(&mut m, v, RELAY_DST, b);
        }
        m
    }

    pub fn spec(&self, seed: u64) -> GeneratorSpec {
        GeneratorSpec::stationary(self.matrix(seed), self.rounds, self.jitter_pct)
    }

    /// As [`RelayScenario::spec`], with the relay and the runner-up trading
    /// places from `shift_round` on.
    ///
    /// # Panics
    /// If `runner_up` is unset.
    pub fn shifted_spec(&self, seed: u64, shift_round: u32) -> GeneratorSpec {
        let runner_up = self.runner_up.expect("a shift needs a runner-up");
        let m = self.matrix(seed);
        let scale = |v: NodeId, total: f64| {
            let (a, b) = (m[RELAY_SRC.index()][v.index()], m[v.index()][RELAY_DST.index()]);
            let k = total / (a + b);
            [(RELAY_SRC, v, a * k), (v, RELAY_DST, b * k)]
        };
        let links = scale(runner_up, self.best_ms)
            .into_iter()
            .chain(scale(self.relay, self.runner_up_ms))
            .map(|(src, dst, rtt_ms)| LinkRtt {
                src,
                dst,
                rtt_ms,
                symmetric: true,
            })
            .collect();
        GeneratorSpec::stationary(m, self.rounds, self.jitter_pct).with_event(TraceEvent::Shift {
            round: shift_round,
            links,
        })
    }
}

/// Random 20-node family in which roughly half of the ordered pairs have a
/// relayed path faster than the direct route.
pub fn random_family(rounds: u32) -> GeneratorSpec {
    GeneratorSpec {
        rounds,
        base: BaseLatency::Random(RandomFamily {
            nodes: 20,
            floor_ms: 10.0,
            span_ms: 200.0,
            detour_prob: RANDOM_DETOUR_PROB,
            detour_min: 1.3,
            detour_max: 2.5,
        }),
        jitter_pct: 5.0,
        loss_prob: 0.002,
        events: Vec::new(),
    }
}

pub const RANDOM_DETOUR_PROB: f64 = 0.65;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LinkTrace, SimError};
use crate::overlay::NodeId;

/// Base RTT matrix of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseLatency {
    /// Explicit matrix in milliseconds; row = source. Diagonal ignored.
    Matrix { rtt_ms: Vec<Vec<f64>> },
    /// Every ordered pair has the same RTT.
    Uniform { nodes: usize, rtt_ms: f64 },
    /// Random planar embedding with detoured IP routes, drawn from the seed.
    Random(RandomFamily),
}

/// Nodes scattered uniformly in a unit square. The RTT of a pair is
/// `floor_ms + span_ms * distance`; with probability `detour_prob` a pair's
/// IP route is inflated by a factor drawn from `[detour_min, detour_max]`,
/// which is what makes relayed paths worthwhile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFamily {
    pub nodes: usize,
    #[serde(default = "RandomFamily::default_floor")]
    pub floor_ms: f64,
    #[serde(default = "RandomFamily::default_span")]
    pub span_ms: f64,
    #[serde(default)]
    pub detour_prob: f64,
    #[serde(default = "RandomFamily::default_detour_min")]
    pub detour_min: f64,
    #[serde(default = "RandomFamily::default_detour_max")]
    pub detour_max: f64,
}

impl RandomFamily {
    fn default_floor() -> f64 {
        10.0
    }
    fn default_span() -> f64 {
        200.0
    }
    fn default_detour_min() -> f64 {
        1.3
    }
    fn default_detour_max() -> f64 {
        2.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRtt {
    pub src: NodeId,
    pub dst: NodeId,
    pub rtt_ms: f64,
    #[serde(default = "yes")]
    pub symmetric: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    /// From `round` on, the listed links take new base RTTs.
    Shift { round: u32, links: Vec<LinkRtt> },
    /// Every sample of the pair is lost during `start..start + duration`.
    Outage {
        src: NodeId,
        dst: NodeId,
        start: u32,
        duration: u32,
        #[serde(default = "yes")]
        symmetric: bool,
    },
}

/// Synthetic trace description: a base latency matrix, multiplicative
/// uniform jitter of ±`jitter_pct` percent, independent random loss and a
/// list of scripted events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub rounds: u32,
    pub base: BaseLatency,
    #[serde(default)]
    pub jitter_pct: f64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub events: Vec<TraceEvent>,
}

impl GeneratorSpec {
    pub fn stationary(rtt_ms: Vec<Vec<f64>>, rounds: u32, jitter_pct: f64) -> Self {
        Self {
            rounds,
            base: BaseLatency::Matrix { rtt_ms },
            jitter_pct,
            loss_prob: 0.0,
            events: Vec::new(),
        }
    }

    pub fn with_event(mut self, event: TraceEvent) -> Self {
        self.events.push(event);
        self
    }

    pub fn node_count(&self) -> usize {
        match &self.base {
            BaseLatency::Matrix { rtt_ms } => rtt_ms.len(),
            BaseLatency::Uniform { nodes, .. } => *nodes,
            BaseLatency::Random(f) => f.nodes,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidSpec(msg));
        let n = self.node_count();
        if n < 2 {
            return bad(format!("need at least 2 nodes, got {n}"));
        }
        if !(0.0..100.0).contains(&self.jitter_pct) {
            return bad(format!("jitter_pct {} outside [0, 100)", self.jitter_pct));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return bad(format!("loss_prob {} outside [0, 1]", self.loss_prob));
        }
        match &self.base {
            BaseLatency::Matrix { rtt_ms } => {
                for (i, row) in rtt_ms.iter().enumerate() {
                    if row.len() != n {
                        return bad(format!("matrix row {i} has {} entries, expected {n}", row.len()));
                    }
                    for (j, &v) in row.iter().enumerate() {
                        if i != j && !(v > 0.0 && v.is_finite()) {
                            return bad(format!("rtt_ms[{i}][{j}] = {v} must be positive"));
                        }
                    }
                }
            }
            BaseLatency::Uniform { rtt_ms, .. } => {
                if !(*rtt_ms > 0.0 && rtt_ms.is_finite()) {
                    return bad(format!("uniform rtt {rtt_ms} must be positive"));
                }
            }
            BaseLatency::Random(f) => {
                if !(f.floor_ms > 0.0 && f.span_ms >= 0.0) {
                    return bad("random family needs floor_ms > 0 and span_ms >= 0".into());
                }
                if !(0.0..=1.0).contains(&f.detour_prob) || !(1.0 <= f.detour_min && f.detour_min <= f.detour_max) {
                    return bad("random family detour parameters out of range".into());
                }
            }
        }
        for event in &self.events {
            match event {
                TraceEvent::Shift { links, .. } => {
                    for l in links {
                        check_pair(n, l.src, l.dst)?;
                        if !(l.rtt_ms > 0.0 && l.rtt_ms.is_finite()) {
                            return bad(format!("shift rtt {} must be positive", l.rtt_ms));
                        }
                    }
                }
                TraceEvent::Outage { src, dst, .. } => check_pair(n, *src, *dst)?,
            }
        }
        Ok(())
    }
}

fn check_pair(n: usize, src: NodeId, dst: NodeId) -> Result<(), SimError> {
    if src.index() >= n || dst.index() >= n || src == dst {
        return Err(SimError::InvalidSpec(format!("invalid pair {src}->{dst}")));
    }
    Ok(())
}

fn base_matrix(base: &BaseLatency, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match base {
        BaseLatency::Matrix { rtt_ms } => rtt_ms.clone(),
        BaseLatency::Uniform { nodes, rtt_ms } => vec![vec![*rtt_ms; *nodes]; *nodes],
        BaseLatency::Random(f) => {
            let points: Vec<(f64, f64)> = (0..f.nodes).map(|_| (rng.gen(), rng.gen())).collect();
            let mut m = vec![vec![0.0; f.nodes]; f.nodes];
            for i in 0..f.nodes {
                for j in i + 1..f.nodes {
                    let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                    let mut rtt = f.floor_ms + f.span_ms * (dx * dx + dy * dy).sqrt();
                    let detour: f64 = rng.gen();
                    let factor = rng.gen_range(f.detour_min..=f.detour_max);
                    if detour < f.detour_prob {
                        rtt *= factor;
                    }
                    m[i][j] = rtt;
                    m[j][i] = rtt;
                }
            }
            m
        }
    }
}

/// Draws a trace for `spec`. The same spec and seed always give the same
/// trace.
pub fn generate_trace(spec: &GeneratorSpec, seed: u64) -> Result<LinkTrace, SimError> {
    spec.validate()?;
    let n = spec.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = base_matrix(&spec.base, &mut rng);
    let mut shifts: Vec<(u32, &LinkRtt)> = spec
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Shift { round, links } => Some(links.iter().map(move |l| (*round, l))),
            _ => None,
        })
        .flatten()
        .collect();
    shifts.sort_by_key(|(round, _)| *round);
    let mut pending = shifts.into_iter().peekable();

    let jitter = spec.jitter_pct / 100.0;
    let mut trace = LinkTrace::all_lost(n, spec.rounds)?;
    for t in 0..spec.rounds {
        while let Some((_, link)) = pending.next_if(|(round, _)| *round <= t) {
            base[link.src.index()][link.dst.index()] = link.rtt_ms;
            if link.symmetric {
                base[link.dst.index()][link.src.index()] = link.rtt_ms;
            }
        }
        for s in 0..n {
            for d in 0..n {
                if s == d {
                    continue;
                }
                let u: f64 = rng.gen_range(-1.0..=1.0);
                let loss: f64 = rng.gen();
                let rtt_us = (base[s][d] * 1000.0 * (1.0 + jitter * u)).round().max(1.0);
                let sample = if loss < spec.loss_prob {
                    None
                } else {
                    Some(rtt_us.min(u32::MAX as f64) as u32)
                };
                trace.set(t, NodeId(s as u32), NodeId(d as u32), sample)?;
            }
        }
    }
    for event in &spec.events {
        if let TraceEvent::Outage {
            src,
            dst,
            start,
            duration,
            symmetric,
        } = event
        {
            let end = start.saturating_add(*duration).min(spec.rounds);
            for t in *start..end {
                trace.set(t, *src, *dst, None)?;
                if *symmetric {
                    trace.set(t, *dst, *src, None)?;
                }
            }
        }
    }
    Ok(trace)
}

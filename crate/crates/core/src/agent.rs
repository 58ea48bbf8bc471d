//! Reinforcement-learning routing agent of a source proxy.
//!
//! Each candidate path owns one neuron of a random neural network. Every
//! round the agent probes the K paths whose neurons are most excited,
//! installs the fastest one, and feeds the reward 1/RTD back into the
//! network weights against an exponentially averaged threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::ProbeRecord;
use crate::overlay::{OverlayError, OverlayPath};
use crate::rnn::{RatePolicy, RnnError, RnnState, DEFAULT_MAX_ITER, DEFAULT_TOL};

// q values closer than this are treated as tied and ranked by index.
const Q_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("threshold is uninitialized")]
    UninitializedThreshold,
    #[error("invalid round: {0}")]
    InvalidRound(String),
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub beta: f64,
    pub k_select: usize,
    pub explore_prob: f64,
    pub init_weight: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            beta: 0.8,
            k_select: 2,
            explore_prob: 0.05,
            init_weight: 1.0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self, paths: usize) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta {} outside (0, 1)", self.beta));
        }
        if !(0.0..1.0).contains(&self.explore_prob) {
            return bad(format!("explore_prob {} outside [0, 1)", self.explore_prob));
        }
        if paths < 2 {
            return bad(format!("need at least 2 candidate paths, got {paths}"));
        }
        if self.k_select == 0 || self.k_select > paths {
            return bad(format!("k_select {} outside 1..={paths}", self.k_select));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("solver tolerance and iteration cap must be positive".into());
        }
        Ok(())
    }
}

/// What happened in one learning round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round_index: u32,
    pub probed: Vec<(usize, ProbeRecord)>,
    /// Reward 1/RTD in 1/s per probed path; zero for lost probes.
    pub rewards: Vec<(usize, f64)>,
    /// Index of the probed path with the largest reward; `None` when every
    /// probe was lost.
    pub winner: Option<usize>,
    pub chosen_path: OverlayPath,
    pub all_lost: bool,
    pub threshold: f64,
}

/// Reward of a probe: the inverse of its round-trip delay in seconds, or zero
/// when the probe was lost.
pub fn reward_from_probe(probe: &ProbeRecord) -> Result<f64, AgentError> {
    if probe.lost {
        return Ok(0.0);
    }
    match probe.total_rtt {
        Some(0) => Err(AgentError::InvalidMeasurement(format!(
            "zero RTT on path {}",
            probe.path
        ))),
        Some(us) => Ok(1e6 / us as f64),
        None => Err(AgentError::InvalidMeasurement(format!(
            "probe on {} is neither lost nor timed",
            probe.path
        ))),
    }
}

/// Weight update for neuron `j` given the reward ratio `nu = R / T`, before
/// renormalization.
///
/// When `nu >= 1` the excitatory weights into `j` grow by `(nu - 1)` of their
/// value and the increment is spread as inhibition over the other neurons;
/// otherwise the inhibitory weights into `j` grow by `(1 - nu)` and the
/// increment is spread as excitation. Self-connections are skipped, so each
/// row spreads over exactly N − 2 columns. With N = 2 there is nothing to
/// spread to.
pub fn update_weights(rnn: &mut RnnState, j: usize, nu: f64) {
    let n = rnn.n();
    let spill_div = if n > 2 { (n - 2) as f64 } else { 0.0 };
    let (w_plus, w_minus) = rnn.weights_mut();
    let (grow, spill) = if nu >= 1.0 {
        (w_plus, w_minus)
    } else {
        (w_minus, w_plus)
    };
    let factor = (nu - 1.0).abs();
    for i in 0..n {
        if i == j {
            continue;
        }
        let delta = factor * grow[(i, j)];
        grow[(i, j)] += delta;
        if spill_div > 0.0 {
            let share = delta / spill_div;
            for k in 0..n {
                if k != j && k != i {
                    spill[(i, k)] += share;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoutingAgent {
    rnn: RnnState,
    paths: Vec<OverlayPath>,
    direct: OverlayPath,
    threshold: f64,
    beta: f64,
    k_select: usize,
    explore_prob: f64,
    tol: f64,
    max_iter: usize,
    rng: ChaCha8Rng,
}

impl RoutingAgent {
    /// Agent over `paths` (all for the same source and destination). The
    /// initial fixed point is solved before returning.
    pub fn new(paths: Vec<OverlayPath>, config: &AgentConfig) -> Result<Self, AgentError> {
        Self::with_stream(paths, config, 0)
    }

    /// As [`RoutingAgent::new`] with the random stream selected by `stream`,
    /// so that agents sharing a seed draw independent sequences.
    pub fn with_stream(paths: Vec<OverlayPath>, config: &AgentConfig, stream: u64) -> Result<Self, AgentError> {
        config.validate(paths.len())?;
        let (src, dst) = (paths[0].src(), paths[0].dst());
        if let Some(p) = paths.iter().find(|p| p.src() != src || p.dst() != dst) {
            return Err(AgentError::InvalidConfig(format!(
                "path {p} does not join {src} and {dst}"
            )));
        }
        let mut rnn = RnnState::new(paths.len(), config.init_weight, RatePolicy::SumOfWeights)?;
        rnn.solve_fixed_point(config.tol, config.max_iter)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        Ok(Self {
            rnn,
            direct: OverlayPath::direct(src, dst)?,
            paths,
            threshold: 0.0,
            beta: config.beta,
            k_select: config.k_select,
            explore_prob: config.explore_prob,
            tol: config.tol,
            max_iter: config.max_iter,
            rng,
        })
    }

    pub fn rnn(&self) -> &RnnState {
        &self.rnn
    }

    pub fn paths(&self) -> &[OverlayPath] {
        &self.paths
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn k_select(&self) -> usize {
        self.k_select
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.threshold = threshold.max(0.0);
    }

    pub fn set_explore_prob(&mut self, p: f64) {
        self.explore_prob = p.clamp(0.0, 1.0);
    }

    /// Indices of the K most excited neurons, ties going to the lower index.
    /// With probability `explore_prob` the last one is swapped for a
    /// uniformly drawn path that was not selected.
    pub fn select_paths(&mut self) -> Vec<usize> {
        let mut selected = top_k(self.rnn.q(), self.k_select);
        let explore = self.rng.gen::<f64>() < self.explore_prob;
        let n = self.paths.len();
        if explore && selected.len() < n {
            let others: Vec<usize> = (0..n).filter(|i| !selected.contains(i)).collect();
            let pick = others[self.rng.gen_range(0..others.len())];
            *selected.last_mut().expect("k_select >= 1") = pick;
        }
        selected
    }

    /// Rewards or punishes neuron `j`, renormalizes and re-solves.
    pub fn apply_reinforcement(&mut self, j: usize, reward: f64) -> Result<(), AgentError> {
        if !(self.threshold > 0.0) {
            return Err(AgentError::UninitializedThreshold);
        }
        if j >= self.paths.len() {
            return Err(AgentError::InvalidRound(format!("path index {j} out of range")));
        }
        if !(reward >= 0.0 && reward.is_finite()) {
            return Err(AgentError::InvalidMeasurement(format!("reward {reward}")));
        }
        update_weights(&mut self.rnn, j, reward / self.threshold);
        self.rnn.renormalize()?;
        self.rnn.solve_fixed_point(self.tol, self.max_iter)?;
        Ok(())
    }

    /// T ← βT + (1 − β)R.
    pub fn update_threshold(&mut self, reward: f64) -> f64 {
        self.threshold = self.beta * self.threshold + (1.0 - self.beta) * reward;
        self.threshold
    }

    /// One full round: rewards, winner, per-path reinforcement in ascending
    /// index order with a threshold update after each successful probe.
    ///
    /// The threshold starts at the first successful reward, so the first
    /// update is neutral. Lost probes are punished with zero reward and leave
    /// the threshold alone. If every probe was lost, nothing is learnt and
    /// the direct route is installed.
    pub fn learning_round(
        &mut self,
        round: u32,
        probes: &[(usize, ProbeRecord)],
    ) -> Result<RoundOutcome, AgentError> {
        if probes.is_empty() {
            return Err(AgentError::InvalidRound("no probes".into()));
        }
        let mut order: Vec<(usize, &ProbeRecord)> = probes.iter().map(|(j, p)| (*j, p)).collect();
        order.sort_by_key(|(j, _)| *j);
        if order.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(AgentError::InvalidRound("path probed twice".into()));
        }
        for (j, probe) in &order {
            match self.paths.get(*j) {
                Some(p) if *p == probe.path => {}
                _ => {
                    return Err(AgentError::InvalidRound(format!(
                        "probe on {} does not match path index {j}",
                        probe.path
                    )))
                }
            }
        }
        let rewards = order
            .iter()
            .map(|(j, p)| reward_from_probe(p).map(|r| (*j, r)))
            .collect::<Result<Vec<_>, _>>()?;

        let mut winner: Option<(usize, f64)> = None;
        for (&(j, r), (_, p)) in rewards.iter().zip(&order) {
            if !p.lost && winner.map_or(true, |(_, best)| r > best) {
                winner = Some((j, r));
            }
        }
        let probed = order.iter().map(|(j, p)| (*j, (*p).clone())).collect();
        let Some((winner, _)) = winner else {
            return Ok(RoundOutcome {
                round_index: round,
                probed,
                rewards,
                winner: None,
                chosen_path: self.direct.clone(),
                all_lost: true,
                threshold: self.threshold,
            });
        };

        if self.threshold == 0.0 {
            let first = order
                .iter()
                .zip(&rewards)
                .find(|((_, p), _)| !p.lost)
                .map(|(_, (_, r))| *r)
                .expect("a winner exists");
            self.threshold = first;
        }
        for (&(j, r), (_, p)) in rewards.iter().zip(&order) {
            self.apply_reinforcement(j, r)?;
            if !p.lost {
                self.update_threshold(r);
            }
        }
        Ok(RoundOutcome {
            round_index: round,
            probed,
            rewards,
            winner: Some(winner),
            chosen_path: self.paths[winner].clone(),
            all_lost: false,
            threshold: self.threshold,
        })
    }
}

/// Indices of the `k` largest values, ties going to the lower index.
fn top_k(q: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; q.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k.min(q.len()) {
        let mut best: Option<usize> = None;
        for (i, &qi) in q.iter().enumerate() {
            if taken[i] {
                continue;
            }
            match best {
                Some(b) if qi <= q[b] + Q_TIE_EPS => {}
                _ => best = Some(i),
            }
        }
        let b = best.expect("fewer than q.len() taken");
        taken[b] = true;
        out.push(b);
    }
    out
}

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_trace, path_rtt, probe_path, GeneratorSpec, LinkTrace, SimError};
use crate::agent::{AgentConfig, RoundOutcome, RoutingAgent};
use crate::metrics::RoundReport;
use crate::oracle::{hop_class_minima, optimal_among};
use crate::overlay::{enumerate_paths_n, NodeId, OverlayPath};

/// Links a source may measure per routed pair per round.
pub const DEFAULT_PROBING_BUDGET: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceSource {
    File { file: PathBuf },
    Generate { generate: GeneratorSpec, seed: u64 },
}

impl TraceSource {
    /// Loads or generates the trace; relative file names resolve against
    /// `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<LinkTrace, SimError> {
        match self {
            TraceSource::File { file } => {
                let path = base_dir.join(file);
                let f = std::fs::File::open(&path).map_err(|source| SimError::Io {
                    context: path.display().to_string(),
                    source,
                })?;
                crate::ingest::load_trace(std::io::BufReader::new(f)).map_err(|e| SimError::Ingest(Box::new(e)))
            }
            TraceSource::Generate { generate, seed } => generate_trace(generate, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSelection {
    /// The keyword `"all"`: every ordered pair.
    Keyword(String),
    List(Vec<(NodeId, NodeId)>),
}

impl Default for PairSelection {
    fn default() -> Self {
        PairSelection::Keyword("all".into())
    }
}

impl PairSelection {
    pub fn resolve(&self, nodes: usize) -> Result<Vec<(NodeId, NodeId)>, SimError> {
        match self {
            PairSelection::Keyword(k) if k == "all" => {
                let n = nodes as u32;
                Ok((0..n)
                    .flat_map(|s| (0..n).filter(move |d| *d != s).map(move |d| (NodeId(s), NodeId(d))))
                    .collect())
            }
            PairSelection::Keyword(k) => Err(SimError::InvalidConfig(format!("unknown pair selection {k:?}"))),
            PairSelection::List(pairs) => {
                for (k, &(s, d)) in pairs.iter().enumerate() {
                    if s == d || s.index() >= nodes || d.index() >= nodes {
                        return Err(SimError::InvalidConfig(format!("invalid pair {s}-{d}")));
                    }
                    if pairs[..k].contains(&(s, d)) {
                        return Err(SimError::InvalidConfig(format!("pair {s}-{d} listed twice")));
                    }
                }
                Ok(pairs.clone())
            }
        }
    }
}

fn default_max_hops() -> usize {
    2
}

fn default_budget() -> u32 {
    DEFAULT_PROBING_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional topology file, used for node names only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<PathBuf>,
    pub trace: TraceSource,
    #[serde(default)]
    pub pairs: PairSelection,
    #[serde(default = "default_max_hops")]
    pub max_hops: usize,
    /// Hop limit of the optimal-path oracle; defaults to `max_hops`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_max_hops: Option<usize>,
    #[serde(default)]
    pub agent: AgentConfig,
    /// Rounds to simulate; defaults to the trace length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u32>,
    #[serde(default = "default_budget")]
    pub probing_budget: u32,
}

impl ExperimentConfig {
    pub fn new(trace: TraceSource) -> Self {
        Self {
            topology: None,
            trace,
            pairs: PairSelection::default(),
            max_hops: default_max_hops(),
            oracle_max_hops: None,
            agent: AgentConfig::default(),
            rounds: None,
            probing_budget: DEFAULT_PROBING_BUDGET,
        }
    }

    pub fn oracle_hops(&self) -> usize {
        self.oracle_max_hops.unwrap_or(self.max_hops)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(flatten)]
    pub outcome: RoundOutcome,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    /// Ordered by round, then by pair in configuration order.
    pub reports: Vec<RoundReport>,
    /// Agent outcomes, in the same order as `reports`.
    pub outcomes: Vec<PairOutcome>,
}

/// Runs every routed pair over the trace. Pairs are independent and run in
/// parallel; the merged output is ordered and fully determined by the
/// configuration.
pub fn run_experiment(config: &ExperimentConfig, trace: &LinkTrace) -> Result<ExperimentOutput, SimError> {
    let rounds = config.rounds.unwrap_or(trace.rounds());
    if rounds > trace.rounds() {
        return Err(SimError::InvalidConfig(format!(
            "{rounds} rounds requested but the trace has {}",
            trace.rounds()
        )));
    }
    if config.max_hops == 0 || config.oracle_hops() < config.max_hops {
        return Err(SimError::InvalidConfig(
            "max_hops must be positive and no larger than oracle_max_hops".into(),
        ));
    }
    let worst = config.agent.k_select as u64 * config.max_hops as u64;
    if worst > u64::from(config.probing_budget) {
        return Err(SimError::BudgetViolation {
            charged: worst.min(u32::MAX as u64) as u32,
            budget: config.probing_budget,
        });
    }
    let pairs = config.pairs.resolve(trace.nodes())?;

    let per_pair = pairs
        .par_iter()
        .map(|&(src, dst)| run_pair(config, trace, rounds, src, dst))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = ExperimentOutput::default();
    let mut iters: Vec<_> = per_pair.into_iter().map(|v| v.into_iter()).collect();
    for _ in 0..rounds {
        for it in iters.iter_mut() {
            let (report, outcome) = it.next().expect("one entry per round");
            out.reports.push(report);
            out.outcomes.push(outcome);
        }
    }
    Ok(out)
}

fn run_pair(
    config: &ExperimentConfig,
    trace: &LinkTrace,
    rounds: u32,
    src: NodeId,
    dst: NodeId,
) -> Result<Vec<(RoundReport, PairOutcome)>, SimError> {
    let n = trace.nodes();
    let wrap = |source| SimError::Agent { src, dst, source };
    let paths = enumerate_paths_n(n, src, dst, config.max_hops)?;
    let oracle_hops = config.oracle_hops();
    let oracle_candidates: Vec<OverlayPath> = if oracle_hops == config.max_hops {
        paths.clone()
    } else {
        enumerate_paths_n(n, src, dst, oracle_hops)?
    };
    let stream = src.0 as u64 * n as u64 + dst.0 as u64;
    let mut agent = RoutingAgent::with_stream(paths, &config.agent, stream).map_err(wrap)?;
    let direct = OverlayPath::direct(src, dst)?;

    let mut out = Vec::with_capacity(rounds as usize);
    for round in 0..rounds {
        let selected = agent.select_paths();
        let probes: Vec<_> = selected
            .iter()
            .map(|&j| (j, probe_path(trace, round, &agent.paths()[j])))
            .collect();
        let charged: u32 = probes.iter().map(|(_, p)| p.links_charged).sum();
        if charged > config.probing_budget {
            return Err(SimError::BudgetViolation {
                charged,
                budget: config.probing_budget,
            });
        }
        let outcome = agent.learning_round(round, &probes).map_err(wrap)?;
        let oracle = optimal_among(trace, round, &oracle_candidates);
        let report = RoundReport {
            round,
            src,
            dst,
            chosen_rtt_us: path_rtt(trace, round, &outcome.chosen_path),
            chosen_path: outcome.chosen_path.clone(),
            direct_rtt_us: path_rtt(trace, round, &direct),
            direct_disconnected: trace.is_disconnected(round, src, dst),
            oracle_path: oracle.map(|(k, _)| oracle_candidates[k].clone()),
            oracle_rtt_us: oracle.map(|(_, rtt)| rtt),
            hop_class_min_us: hop_class_minima(trace, round, &oracle_candidates, oracle_hops),
            probed: selected,
            links_charged: charged,
            all_lost: outcome.all_lost,
        };
        out.push((report, PairOutcome { src, dst, outcome }));
    }
    Ok(out)
}

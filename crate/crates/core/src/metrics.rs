//! Per-round reports and the aggregate statistics computed from them:
//! non-optimality rates, gaps above the minimum, the hop-count mix of optimal
//! paths and convergence times.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::overlay::{NodeId, OverlayPath};

/// Relative band within which an RTT counts as optimal.
pub const OPTIMAL_REL_TOL: f64 = 0.001;
/// Relative distance to the optimum tolerated by the convergence criterion.
pub const CONVERGENCE_REL_TOL: f64 = 0.05;
/// Rounds the chosen path must stay near-optimal to count as converged.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown pair {0}-{1}")]
    UnknownPair(NodeId, NodeId),
}

/// Outcome of one routed pair in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub chosen_path: OverlayPath,
    pub chosen_rtt_us: Option<u64>,
    pub direct_rtt_us: Option<u64>,
    pub direct_disconnected: bool,
    pub oracle_path: Option<OverlayPath>,
    pub oracle_rtt_us: Option<u64>,
    /// Best RTT among paths with exactly h hops, at index h − 1.
    pub hop_class_min_us: Vec<Option<u64>>,
    pub probed: Vec<usize>,
    pub links_charged: u32,
    pub all_lost: bool,
}

impl RoundReport {
    /// Best RTT among paths of at most two hops.
    pub fn best_two_hop_us(&self) -> Option<u64> {
        self.hop_class_min_us.iter().take(2).flatten().copied().min()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConvergence {
    pub src: NodeId,
    pub dst: NodeId,
    pub round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub reports: usize,
    /// Reports without any usable path, left out of every statistic.
    pub excluded_no_path: usize,
    pub pct_nonoptimal_direct: f64,
    pub pct_nonoptimal_chosen: f64,
    pub avg_gap_direct: f64,
    pub avg_gap_chosen: f64,
    /// Reports whose direct (chosen) RTT was lost, counted as non-optimal
    /// but left out of the gap average.
    pub lost_direct: usize,
    pub lost_chosen: usize,
    /// Share of oracle paths by hop count, in percent.
    pub hop_histogram: BTreeMap<usize, f64>,
    pub avg_two_hop_gap: f64,
    pub convergence_round: Vec<PairConvergence>,
}

/// Relative gap above the optimum in percent.
pub fn gap_pct(rtt: u64, optimum: u64) -> f64 {
    (rtt as f64 - optimum as f64) / optimum as f64 * 100.0
}

fn is_nonoptimal(rtt: Option<u64>, optimum: u64) -> bool {
    match rtt {
        None => true,
        Some(v) => v as f64 > optimum as f64 * (1.0 + OPTIMAL_REL_TOL),
    }
}

fn near_optimal(rtt: Option<u64>, optimum: Option<u64>) -> bool {
    match (rtt, optimum) {
        (Some(v), Some(o)) => v as f64 <= o as f64 * (1.0 + CONVERGENCE_REL_TOL),
        _ => false,
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// First round from which the chosen path stays within 5% of the oracle for
/// ten consecutive rounds. `reports` must belong to one pair, in round order.
pub fn convergence_round<'a>(reports: impl IntoIterator<Item = &'a RoundReport>) -> Option<u32> {
    let mut run_start: Option<u32> = None;
    let mut run = 0;
    for r in reports {
        if near_optimal(r.chosen_rtt_us, r.oracle_rtt_us) {
            if run == 0 {
                run_start = Some(r.round);
            }
            run += 1;
            if run >= CONVERGENCE_WINDOW {
                return run_start;
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Pairs in order of first appearance.
pub fn pairs_of(reports: &[RoundReport]) -> Vec<(NodeId, NodeId)> {
    let mut pairs = Vec::new();
    for r in reports {
        if !pairs.contains(&(r.src, r.dst)) {
            pairs.push((r.src, r.dst));
        }
    }
    pairs
}

pub fn aggregate(reports: &[RoundReport]) -> Result<AggregateStats, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::InvalidInput("no round reports".into()));
    }
    let mut usable = 0usize;
    let mut excluded = 0usize;
    let (mut nonopt_direct, mut nonopt_chosen) = (0usize, 0usize);
    let (mut lost_direct, mut lost_chosen) = (0usize, 0usize);
    let (mut gaps_direct, mut gaps_chosen, mut gaps_two_hop) = (Vec::new(), Vec::new(), Vec::new());
    let mut hops: BTreeMap<usize, usize> = BTreeMap::new();

    for r in reports {
        let (Some(opt), Some(opt_path)) = (r.oracle_rtt_us, r.oracle_path.as_ref()) else {
            excluded += 1;
            continue;
        };
        usable += 1;
        *hops.entry(opt_path.hop_count()).or_default() += 1;
        nonopt_direct += is_nonoptimal(r.direct_rtt_us, opt) as usize;
        nonopt_chosen += is_nonoptimal(r.chosen_rtt_us, opt) as usize;
        match r.direct_rtt_us {
            Some(v) => gaps_direct.push(gap_pct(v, opt)),
            None => lost_direct += 1,
        }
        match r.chosen_rtt_us {
            Some(v) => gaps_chosen.push(gap_pct(v, opt)),
            None => lost_chosen += 1,
        }
        if let Some(v) = r.best_two_hop_us() {
            gaps_two_hop.push(gap_pct(v, opt));
        }
    }

    let pct = |count: usize| {
        if usable == 0 {
            0.0
        } else {
            count as f64 / usable as f64 * 100.0
        }
    };
    let hop_histogram = hops.into_iter().map(|(h, c)| (h, pct(c))).collect();
    let convergence_round = pairs_of(reports)
        .into_iter()
        .map(|(src, dst)| PairConvergence {
            src,
            dst,
            round: convergence_round(reports.iter().filter(|r| r.src == src && r.dst == dst)),
        })
        .collect();

    Ok(AggregateStats {
        reports: reports.len(),
        excluded_no_path: excluded,
        pct_nonoptimal_direct: pct(nonopt_direct),
        pct_nonoptimal_chosen: pct(nonopt_chosen),
        avg_gap_direct: mean(&gaps_direct),
        avg_gap_chosen: mean(&gaps_chosen),
        lost_direct,
        lost_chosen,
        hop_histogram,
        avg_two_hop_gap: mean(&gaps_two_hop),
        convergence_round,
    })
}

/// `hops,percent` rows of the oracle hop-count distribution.
pub fn hop_histogram_csv(stats: &AggregateStats) -> String {
    let mut out = String::from("hops,percent\n");
    for (h, p) in &stats.hop_histogram {
        writeln!(out, "{h},{p:.6}").unwrap();
    }
    out
}

/// Empirical CDF of the gap above the optimum for the direct route and the
/// chosen path: `series,gap_pct,cdf`.
pub fn gap_cdf_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from("series,gap_pct,cdf\n");
    for (name, pick) in [
        ("direct", (|r: &RoundReport| r.direct_rtt_us) as fn(&RoundReport) -> Option<u64>),
        ("chosen", |r: &RoundReport| r.chosen_rtt_us),
    ] {
        let mut gaps: Vec<f64> = reports
            .iter()
            .filter_map(|r| Some(gap_pct(pick(r)?, r.oracle_rtt_us?)))
            .collect();
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len() as f64;
        for (k, g) in gaps.iter().enumerate() {
            writeln!(out, "{name},{g:.6},{:.6}", (k + 1) as f64 / n).unwrap();
        }
    }
    out
}

/// `round,direct_ms,chosen_ms,optimal_ms` for one pair; lost values are left
/// empty.
pub fn timeseries_csv(reports: &[RoundReport], src: NodeId, dst: NodeId) -> Result<String, MetricsError> {
    let ms = |v: Option<u64>| v.map(|us| format!("{:.3}", us as f64 / 1000.0)).unwrap_or_default();
    let mut out = String::from("round,direct_ms,chosen_ms,optimal_ms\n");
    let mut found = false;
    for r in reports.iter().filter(|r| r.src == src && r.dst == dst) {
        found = true;
        writeln!(
            out,
            "{},{},{},{}",
            r.round,
            ms(r.direct_rtt_us),
            ms(r.chosen_rtt_us),
            ms(r.oracle_rtt_us)
        )
        .unwrap();
    }
    if !found {
        return Err(MetricsError::UnknownPair(src, dst));
    }
    Ok(out)
}

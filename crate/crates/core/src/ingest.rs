//! Trace persistence and raw ping-log import.
//!
//! Canonical trace CSV: `round,src,dst,rtt_us,lost`, one row per ordered pair
//! per round in (round, src, dst) order, `rtt_us` empty when `lost` is 1.
//!
//! Raw ping logs: `timestamp,src,dst,rtt_ms,success` with epoch-second
//! timestamps and node names from the topology.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{LinkSample, LinkTrace, ROUND_SECONDS};
use crate::overlay::{NodeId, OverlayTopology};

pub const TRACE_HEADER: &str = "round,src,dst,rtt_us,lost";
pub const PING_HEADER: &str = "timestamp,src,dst,rtt_ms,success";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unknown node {name:?}")]
    UnknownNode { line: u64, name: String },
    #[error("input contains no records")]
    Empty,
    #[error("invalid trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed(line: u64, message: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        line,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        other => malformed(line, format!("{other:?}")),
    }
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &str) -> Result<(), IngestError> {
    let header = reader.headers().map_err(csv_error)?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found.join(",") != expected {
        return Err(malformed(1, format!("expected header `{expected}`, found `{}`", found.join(","))));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<T, IngestError> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(line, format!("invalid {what} {field:?}")))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input)
}

/// Writes the trace in canonical CSV form.
pub fn export_trace(trace: &LinkTrace, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for s in trace.samples() {
        match s.rtt_us {
            Some(v) => writeln!(out, "{},{},{},{},0", s.t, s.src, s.dst, v)?,
            None => writeln!(out, "{},{},{},,1", s.t, s.src, s.dst)?,
        }
    }
    out.flush()
}

pub fn export_trace_string(trace: &LinkTrace) -> String {
    let mut buf = Vec::new();
    export_trace(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Reads a trace CSV. Rows may come in any order but must cover every
/// ordered pair in every round exactly once.
pub fn load_trace(input: impl Read) -> Result<LinkTrace, IngestError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, TRACE_HEADER)?;
    let mut samples = Vec::new();
    let (mut max_node, mut max_round) = (0u32, 0u32);
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let t: u32 = parse(&record[0], "round", line)?;
        let src: u32 = parse(&record[1], "src", line)?;
        let dst: u32 = parse(&record[2], "dst", line)?;
        let rtt_field = record[3].trim();
        let lost = match record[4].trim() {
            "0" => false,
            "1" => true,
            other => return Err(malformed(line, format!("lost must be 0 or 1, found {other:?}"))),
        };
        let rtt_us = match (lost, rtt_field.is_empty()) {
            (true, true) => None,
            (true, false) => return Err(malformed(line, "rtt_us present on a lost sample")),
            (false, true) => return Err(malformed(line, "rtt_us missing on a received sample")),
            (false, false) => {
                let v: u32 = parse(rtt_field, "rtt_us", line)?;
                if v == 0 {
                    return Err(malformed(line, "rtt_us must be positive"));
                }
                Some(v)
            }
        };
        if src == dst {
            return Err(malformed(line, "src equals dst"));
        }
        max_node = max_node.max(src).max(dst);
        max_round = max_round.max(t);
        samples.push(LinkSample {
            t,
            src: NodeId(src),
            dst: NodeId(dst),
            rtt_us,
            lost,
        });
    }
    if samples.is_empty() {
        return Err(IngestError::Empty);
    }
    LinkTrace::from_samples(max_node as usize + 1, max_round + 1, samples)
        .map_err(|e| IngestError::Trace(e.to_string()))
}

/// One line of a raw ping log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPingRecord {
    pub timestamp: f64,
    pub src: String,
    pub dst: String,
    pub rtt_ms: Option<f64>,
    pub success: bool,
}

/// Data-quality summary of an import.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub records: usize,
    pub rounds: u32,
    pub ordered_pairs: usize,
    /// Share of (pair, round) cells that received at least one record.
    pub coverage_pct: f64,
    /// Cells without any record, filled in as lost.
    pub gap_count: usize,
    pub lost_samples: usize,
}

pub fn read_ping_log(input: impl Read) -> Result<Vec<(u64, RawPingRecord)>, IngestError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, PING_HEADER)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let timestamp: f64 = parse(&record[0], "timestamp", line)?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(malformed(line, "timestamp must be a non-negative number"));
        }
        let success = match record[4].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(malformed(line, format!("invalid success flag {other:?}"))),
        };
        let rtt_ms = match record[3].trim() {
            "" => None,
            f => Some(parse::<f64>(f, "rtt_ms", line)?),
        };
        if success && !rtt_ms.is_some_and(|v| v > 0.0 && v.is_finite()) {
            return Err(malformed(line, "successful ping needs a positive rtt_ms"));
        }
        out.push((
            line,
            RawPingRecord {
                timestamp,
                src: record[1].trim().to_string(),
                dst: record[2].trim().to_string(),
                rtt_ms,
                success,
            },
        ));
    }
    Ok(out)
}

/// Buckets a ping log into rounds of `round_seconds`, counted from the
/// earliest timestamp. Within a bucket the latest record wins (file order
/// breaks timestamp ties); buckets without a record become lost samples.
pub fn import_ping_log(
    input: impl Read,
    topology: &OverlayTopology,
    round_seconds: u64,
) -> Result<(LinkTrace, ImportReport), IngestError> {
    if round_seconds == 0 {
        return Err(malformed(0, "round_seconds must be positive"));
    }
    let mut records = Vec::new();
    for (line, rec) in read_ping_log(input)? {
        let resolve = |name: &str| {
            topology.by_name(name).ok_or_else(|| IngestError::UnknownNode {
                line,
                name: name.to_string(),
            })
        };
        let (src, dst) = (resolve(&rec.src)?, resolve(&rec.dst)?);
        if src == dst {
            return Err(malformed(line, "src equals dst"));
        }
        records.push((src, dst, rec));
    }
    if records.is_empty() {
        return Err(IngestError::Empty);
    }
    records.sort_by(|a, b| a.2.timestamp.total_cmp(&b.2.timestamp));
    let t0 = records[0].2.timestamp.floor();
    let bucket = |ts: f64| ((ts - t0) / round_seconds as f64).floor() as u32;
    let rounds = bucket(records.last().expect("non-empty").2.timestamp) + 1;

    let n = topology.len();
    let mut trace = LinkTrace::all_lost(n, rounds).map_err(|e| IngestError::Trace(e.to_string()))?;
    let mut seen = vec![false; rounds as usize * n * n];
    for (src, dst, rec) in &records {
        let t = bucket(rec.timestamp);
        seen[(t as usize * n + src.index()) * n + dst.index()] = true;
        let rtt = if rec.success {
            rec.rtt_ms.map(|ms| (ms * 1000.0).round().clamp(1.0, u32::MAX as f64) as u32)
        } else {
            None
        };
        trace
            .set(t, *src, *dst, rtt)
            .map_err(|e| IngestError::Trace(e.to_string()))?;
    }
    let cells = trace.sample_count();
    let observed = seen.iter().filter(|s| **s).count();
    let report = ImportReport {
        records: records.len(),
        rounds,
        ordered_pairs: n * (n - 1),
        coverage_pct: observed as f64 / cells as f64 * 100.0,
        gap_count: cells - observed,
        lost_samples: trace.lost_count(),
    };
    Ok((trace, report))
}

/// Default bucket width for [`import_ping_log`].
pub const DEFAULT_ROUND_SECONDS: u64 = ROUND_SECONDS;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{generate_trace, BaseLatency, GeneratorSpec};
    use proptest::prelude::*;

    fn two_nodes() -> OverlayTopology {
        serde_json::from_str(r#"[{"id":0,"name":"tokyo"},{"id":1,"name":"santiago"}]"#).unwrap()
    }

    #[test]
    fn full_coverage_import() {
        let mut log = String::from("timestamp,src,dst,rtt_ms,success\n");
        for k in 0..10 {
            let ts = 1_700_000_000 + 120 * k;
            log += &format!("{ts},tokyo,santiago,400.5,1\n{ts},santiago,tokyo,399,1\n");
        }
        let (trace, report) = import_ping_log(log.as_bytes(), &two_nodes(), 120).unwrap();
        assert_eq!(trace.rounds(), 10);
        assert_eq!(report.coverage_pct, 100.0);
        assert_eq!(report.gap_count, 0);
        assert_eq!(trace.rtt(3, NodeId(0), NodeId(1)), Some(400_500));
    }

    #[test]
    fn missing_bucket_is_lost() {
        let mut log = String::from("timestamp,src,dst,rtt_ms,success\n");
        for k in 0..10 {
            let ts = 120 * k;
            log += &format!("{ts},santiago,tokyo,300,1\n");
            if k != 4 {
                log += &format!("{ts},tokyo,santiago,300,1\n");
            }
        }
        let (trace, report) = import_ping_log(log.as_bytes(), &two_nodes(), 120).unwrap();
        assert_eq!(trace.rtt(4, NodeId(0), NodeId(1)), None);
        assert_eq!(report.gap_count, 1);
        assert!(report.coverage_pct < 100.0);
    }

    #[test]
    fn last_record_in_bucket_wins_regardless_of_file_order() {
        let a = "timestamp,src,dst,rtt_ms,success\n10,tokyo,santiago,300,1\n50,tokyo,santiago,0,0\n30,tokyo,santiago,250,1\n";
        let b = "timestamp,src,dst,rtt_ms,success\n30,tokyo,santiago,250,1\n50,tokyo,santiago,,0\n10,tokyo,santiago,300,1\n";
        let (ta, _) = import_ping_log(a.as_bytes(), &two_nodes(), 120).unwrap();
        let (tb, _) = import_ping_log(b.as_bytes(), &two_nodes(), 120).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(ta.rtt(0, NodeId(0), NodeId(1)), None);
        let (again, _) = import_ping_log(a.as_bytes(), &two_nodes(), 120).unwrap();
        assert_eq!(again, ta);
    }

    #[test]
    fn import_errors() {
        let unknown = "timestamp,src,dst,rtt_ms,success\n0,tokyo,oslo,10,1\n";
        assert!(matches!(
            import_ping_log(unknown.as_bytes(), &two_nodes(), 120),
            Err(IngestError::UnknownNode { line: 2, .. })
        ));
        let empty = "timestamp,src,dst,rtt_ms,success\n";
        assert!(matches!(import_ping_log(empty.as_bytes(), &two_nodes(), 120), Err(IngestError::Empty)));
        assert!(matches!(import_ping_log("".as_bytes(), &two_nodes(), 120), Err(IngestError::Malformed { .. })));
        let no_rtt = "timestamp,src,dst,rtt_ms,success\n0,tokyo,santiago,,1\n";
        assert!(import_ping_log(no_rtt.as_bytes(), &two_nodes(), 120).is_err());
    }

    #[test]
    fn malformed_trace_rows_report_line() {
        let csv = "round,src,dst,rtt_us,lost\n0,0,1,500,0\n0,1,0,700,1\n";
        match load_trace(csv.as_bytes()) {
            Err(IngestError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let csv = "round,src,dst,rtt_us,lost\n0,0,1,abc,0\n";
        assert!(matches!(load_trace(csv.as_bytes()), Err(IngestError::Malformed { line: 2, .. })));
        let csv = "round,src,dst,rtt_us,lost\n0,0,1,5,0\n";
        assert!(matches!(load_trace(csv.as_bytes()), Err(IngestError::Trace(_))));
        assert!(matches!(load_trace("round,src,dst,rtt_us,lost\n".as_bytes()), Err(IngestError::Empty)));
    }

    #[test]
    fn large_file_reexports_identically() {
        // 10 nodes x 90 ordered pairs x 1112 rounds > 1e5 rows.
        let spec = GeneratorSpec {
            rounds: 1112,
            base: BaseLatency::Uniform { nodes: 10, rtt_ms: 80.0 },
            jitter_pct: 10.0,
            loss_prob: 0.05,
            events: vec![],
        };
        let trace = generate_trace(&spec, 4).unwrap();
        let text = export_trace_string(&trace);
        assert!(text.lines().count() > 100_000);
        let back = load_trace(text.as_bytes()).unwrap();
        assert_eq!(back, trace);
        assert_eq!(export_trace_string(&back), text);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn load_inverts_export(nodes in 2usize..6, rounds in 1u32..20, seed: u64, loss in 0.0f64..0.5) {
            let spec = GeneratorSpec {
                rounds,
                base: BaseLatency::Uniform { nodes, rtt_ms: 40.0 },
                jitter_pct: 20.0,
                loss_prob: loss,
                events: vec![],
            };
            let trace = generate_trace(&spec, seed).unwrap();
            let text = export_trace_string(&trace);
            prop_assert_eq!(load_trace(text.as_bytes()).unwrap(), trace);
        }
    }
}

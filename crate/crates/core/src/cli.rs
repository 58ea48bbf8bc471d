//! Command-line front end: `generate`, `import`, `run` and `report`.
//!
//! Exit codes: 0 on success, 2 for usage and input errors, 3 when a fixed
//! point fails to converge.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, LevelFilter};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{export_trace, import_ping_log};
use crate::metrics::{aggregate, gap_cdf_csv, hop_histogram_csv, pairs_of, timeseries_csv, RoundReport};
use crate::netsim::{generate_trace, run_experiment, ExperimentConfig, GeneratorSpec, LinkTrace, SimError, ROUND_SECONDS};
use crate::overlay::{NodeId, OverlayTopology};

/// Environment variable naming the default output directory of `run`.
pub const OUT_DIR_ENV: &str = "SMART_OVERLAY_OUT";
const FALLBACK_OUT_DIR: &str = "out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(format!("{e:?}"))
        } else {
            CliError::Input(e.to_string())
        }
    }
}

fn input_err(context: impl std::fmt::Display) -> impl FnOnce(Box<dyn std::error::Error>) -> CliError {
    move |e| CliError::Input(format!("{context}: {e}"))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(path.display())(e.into()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| input_err(path.display())(e.into()))
}

/// An experiment plus where its artifacts go. Any run can be repeated from
/// the `config.json` it leaves in its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Map<String, serde_json::Value>")]
pub struct CliConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// 0 = warnings only, 1 = info, 2 = debug, 3 = trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbosity: Option<u8>,
}

// Flattening would swallow unknown keys, so the two CLI-only fields are
// split off by hand and the rest goes through the strict experiment schema.
impl TryFrom<serde_json::Map<String, serde_json::Value>> for CliConfig {
    type Error = serde_json::Error;

    fn try_from(mut map: serde_json::Map<String, serde_json::Value>) -> Result<Self, Self::Error> {
        let out_dir = map.remove("out_dir").map(serde_json::from_value).transpose()?;
        let verbosity = map.remove("verbosity").map(serde_json::from_value).transpose()?;
        Ok(Self {
            experiment: serde_json::from_value(serde_json::Value::Object(map))?,
            out_dir,
            verbosity,
        })
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        serde_json::from_str(&read_file(path)?).map_err(|e| input_err(path.display())(e.into()))
    }
}

pub fn level_for(verbosity: u8) -> LevelFilter {
    match verbosity {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        2 => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    }
}

#[derive(Debug, Parser)]
#[command(name = "smart-overlay", version, about = "Overlay routing with a reinforcement-learning neural critic")]
pub struct Cli {
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic link trace from a JSON spec.
    Generate {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Convert a raw ping log into a link trace.
    Import {
        log: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, default_value_t = ROUND_SECONDS)]
        round_seconds: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Overrides the config's `out_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides the agent seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of rounds.
        #[arg(long)]
        rounds: Option<u32>,
    },
    /// Print plot-ready CSV computed from a report stream.
    Report {
        reports: PathBuf,
        /// `hops`, `gap` or `timeseries:SRC-DST`.
        #[arg(long)]
        figure: String,
        /// Topology used to resolve node names in `timeseries:`.
        #[arg(long)]
        topology: Option<PathBuf>,
    },
}

/// Runs a parsed command; whatever it prints goes to `stdout`.
pub fn dispatch(cli: Cli, stdout: &mut impl Write) -> Result<(), CliError> {
    let text = match cli.command {
        Command::Generate { spec, seed, out } => cmd_generate(&spec, seed, &out)?,
        Command::Import {
            log,
            topology,
            round_seconds,
            out,
        } => cmd_import(&log, &topology, round_seconds, &out)?,
        Command::Run {
            config,
            out_dir,
            seed,
            rounds,
        } => {
            let mut cfg = CliConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            cfg.out_dir = cfg.out_dir.map(|d| base.join(d));
            if let Some(seed) = seed {
                cfg.experiment.agent.seed = seed;
            }
            if rounds.is_some() {
                cfg.experiment.rounds = rounds;
            }
            if out_dir.is_some() {
                cfg.out_dir = out_dir;
            }
            if cli.verbose == 0 {
                if let Some(v) = cfg.verbosity {
                    log::set_max_level(level_for(v));
                }
            }
            let dir = cmd_run(&cfg, base)?;
            format!("outputs written to {}\n", dir.display())
        }
        Command::Report {
            reports,
            figure,
            topology,
        } => {
            let topology = topology.map(|p| load_topology(&p)).transpose()?;
            cmd_report(&reports, &figure, topology.as_ref())?
        }
    };
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Input(format!("stdout: {e}")))
}

fn load_topology(path: &Path) -> Result<OverlayTopology, CliError> {
    OverlayTopology::load(path).map_err(|e| input_err(path.display())(e.into()))
}

fn write_trace(trace: &LinkTrace, out: &Path) -> Result<(), CliError> {
    let file = fs::File::create(out).map_err(|e| input_err(out.display())(e.into()))?;
    let mut w = BufWriter::new(file);
    export_trace(trace, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| input_err(out.display())(e.into()))
}

/// Writes the trace generated from `spec` and returns a summary line.
pub fn cmd_generate(spec: &Path, seed: u64, out: &Path) -> Result<String, CliError> {
    let spec: GeneratorSpec =
        serde_json::from_str(&read_file(spec)?).map_err(|e| input_err(spec.display())(e.into()))?;
    let trace = generate_trace(&spec, seed)?;
    write_trace(&trace, out)?;
    Ok(format!(
        "nodes={} rounds={} samples={} lost={}\n",
        trace.nodes(),
        trace.rounds(),
        trace.sample_count(),
        trace.lost_count()
    ))
}

/// Converts a ping log and returns the import report as JSON.
pub fn cmd_import(log: &Path, topology: &Path, round_seconds: u64, out: &Path) -> Result<String, CliError> {
    let topology = load_topology(topology)?;
    let file = fs::File::open(log).map_err(|e| input_err(log.display())(e.into()))?;
    let (trace, report) =
        import_ping_log(BufReader::new(file), &topology, round_seconds).map_err(|e| input_err(log.display())(e.into()))?;
    write_trace(&trace, out)?;
    Ok(serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
}

fn ndjson<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable");
        out.push(b'\n');
    }
    out
}

/// Output directory: the config's, else `$SMART_OVERLAY_OUT`, else `out`.
pub fn resolve_out_dir(config: &CliConfig) -> PathBuf {
    config
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

/// Runs the experiment and writes `config.json`, `reports.ndjson`,
/// `outcomes.ndjson`, `aggregate.json`, `hop_histogram.csv`, `gap_cdf.csv`
/// and one `rtd_timeseries_<src>-<dst>.csv` per pair. Relative paths in the
/// config resolve against `base_dir`. Returns the output directory.
///
/// The report streams are written before aggregation, so a run with zero
/// rounds leaves empty streams behind and then fails.
pub fn cmd_run(config: &CliConfig, base_dir: &Path) -> Result<PathBuf, CliError> {
    let dir = resolve_out_dir(config);
    fs::create_dir_all(&dir).map_err(|e| input_err(dir.display())(e.into()))?;
    let exp = &config.experiment;
    if let Some(topo) = &exp.topology {
        load_topology(&base_dir.join(topo))?;
    }
    let trace = exp.trace.load(base_dir)?;
    info!("trace: {} nodes, {} rounds", trace.nodes(), trace.rounds());
    let output = run_experiment(exp, &trace)?;
    info!("{} reports", output.reports.len());

    let mut saved = config.clone();
    saved.out_dir = None;
    saved.verbosity = None;
    let mut cfg_json = serde_json::to_vec_pretty(&saved).expect("config serializes");
    cfg_json.push(b'\n');
    write_file(&dir.join("config.json"), &cfg_json)?;
    write_file(&dir.join("reports.ndjson"), &ndjson(&output.reports))?;
    write_file(&dir.join("outcomes.ndjson"), &ndjson(&output.outcomes))?;

    let stats = aggregate(&output.reports).map_err(|e| CliError::Input(e.to_string()))?;
    let mut stats_json = serde_json::to_vec_pretty(&stats).expect("stats serialize");
    stats_json.push(b'\n');
    write_file(&dir.join("aggregate.json"), &stats_json)?;
    write_file(&dir.join("hop_histogram.csv"), hop_histogram_csv(&stats).as_bytes())?;
    write_file(&dir.join("gap_cdf.csv"), gap_cdf_csv(&output.reports).as_bytes())?;
    for (src, dst) in pairs_of(&output.reports) {
        let csv = timeseries_csv(&output.reports, src, dst).map_err(|e| CliError::Input(e.to_string()))?;
        write_file(&dir.join(format!("rtd_timeseries_{src}-{dst}.csv")), csv.as_bytes())?;
    }
    Ok(dir)
}

pub fn read_reports(path: &Path) -> Result<Vec<RoundReport>, CliError> {
    read_file(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), k + 1)))
        })
        .collect()
}

fn parse_node(s: &str, topology: Option<&OverlayTopology>) -> Option<NodeId> {
    if let Ok(id) = s.parse::<u32>() {
        return Some(NodeId(id));
    }
    topology?.by_name(s)
}

/// CSV for one figure: `hops`, `gap` or `timeseries:SRC-DST` where SRC and
/// DST are node ids or, given a topology, node names.
pub fn cmd_report(reports: &Path, figure: &str, topology: Option<&OverlayTopology>) -> Result<String, CliError> {
    let reports = read_reports(reports)?;
    match figure {
        "hops" => {
            let stats = aggregate(&reports).map_err(|e| CliError::Input(e.to_string()))?;
            Ok(hop_histogram_csv(&stats))
        }
        "gap" => Ok(gap_cdf_csv(&reports)),
        _ => {
            let pair = figure
                .strip_prefix("timeseries:")
                .ok_or_else(|| CliError::Input(format!("unknown figure {figure:?}")))?;
            let (src, dst) = pair
                .split_once('-')
                .and_then(|(a, b)| Some((parse_node(a, topology)?, parse_node(b, topology)?)))
                .ok_or_else(|| CliError::Input(format!("bad pair {pair:?}, expected SRC-DST")))?;
            timeseries_csv(&reports, src, dst).map_err(|e| CliError::Input(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{BaseLatency, PairSelection, TraceEvent, TraceSource};

    fn uniform_spec(rounds: u32) -> GeneratorSpec {
        GeneratorSpec {
            rounds,
            base: BaseLatency::Uniform { nodes: 3, rtt_ms: 20.0 },
            jitter_pct: 0.0,
            loss_prob: 0.0,
            events: vec![],
        }
    }

    fn config(dir: &Path, rounds: u32) -> CliConfig {
        let mut experiment = ExperimentConfig::new(TraceSource::Generate {
            generate: uniform_spec(rounds),
            seed: 1,
        });
        experiment.pairs = PairSelection::List(vec![(NodeId(0), NodeId(1))]);
        CliConfig {
            experiment,
            out_dir: Some(dir.to_path_buf()),
            verbosity: None,
        }
    }

    #[test]
    fn config_round_trips_with_extras() {
        let mut c = config(Path::new("x"), 4);
        c.verbosity = Some(2);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<CliConfig>(&json).unwrap(), c);
        let bad = json.replacen('{', r#"{"typo": 1,"#, 1);
        assert!(serde_json::from_str::<CliConfig>(&bad).is_err());
    }

    #[test]
    fn generate_counts_rows_and_losses() {
        let dir = tempfile::tempdir().unwrap();
        let spec = uniform_spec(10).with_event(TraceEvent::Outage {
            src: NodeId(0),
            dst: NodeId(1),
            start: 2,
            duration: 3,
            symmetric: true,
        });
        let spec_path = dir.path().join("spec.json");
        fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
        let out = dir.path().join("t.csv");
        let summary = cmd_generate(&spec_path, 5, &out).unwrap();
        assert_eq!(summary, "nodes=3 rounds=10 samples=60 lost=6\n");
        let rows = fs::read_to_string(&out).unwrap().lines().count();
        assert_eq!(rows, 1 + 60);
        let again = dir.path().join("u.csv");
        cmd_generate(&spec_path, 5, &again).unwrap();
        assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn bad_spec_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec_path = dir.path().join("spec.json");
        fs::write(&spec_path, r#"{"rounds": 3, "base": {"kind": "uniform", "nodes": 1, "rtt_ms": 5}}"#).unwrap();
        let err = cmd_generate(&spec_path, 0, &dir.path().join("t.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = cmd_generate(&dir.path().join("missing.json"), 0, &dir.path().join("t.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn zero_rounds_writes_empty_streams_then_fails() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_run(&config(dir.path(), 0), dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!(fs::read(dir.path().join("reports.ndjson")).unwrap(), b"");
        assert!(!dir.path().join("aggregate.json").exists());
    }

    #[test]
    fn run_writes_every_artifact_and_reports_read_back() {
        let dir = tempfile::tempdir().unwrap();
        cmd_run(&config(dir.path(), 12), dir.path()).unwrap();
        for f in [
            "config.json",
            "reports.ndjson",
            "outcomes.ndjson",
            "aggregate.json",
            "hop_histogram.csv",
            "gap_cdf.csv",
            "rtd_timeseries_0-1.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let stats: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("aggregate.json")).unwrap()).unwrap();
        for key in [
            "pct_nonoptimal_direct",
            "pct_nonoptimal_chosen",
            "avg_gap_direct",
            "avg_gap_chosen",
            "hop_histogram",
            "avg_two_hop_gap",
            "convergence_round",
        ] {
            assert!(stats.get(key).is_some(), "{key}");
        }

        let reports = dir.path().join("reports.ndjson");
        assert_eq!(read_reports(&reports).unwrap().len(), 12);
        // Uniform links: the direct route is always optimal.
        assert_eq!(cmd_report(&reports, "hops", None).unwrap(), "hops,percent\n1,100.000000\n");
        let ts = cmd_report(&reports, "timeseries:0-1", None).unwrap();
        assert_eq!(ts.lines().count(), 13);
        assert!(ts.lines().all(|l| l.split(',').count() == 4));
        assert_eq!(cmd_report(&reports, "timeseries:1-0", None).unwrap_err().exit_code(), 2);
        assert_eq!(cmd_report(&reports, "pie", None).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn out_dir_precedence() {
        let mut c = config(Path::new("cfg"), 1);
        assert_eq!(resolve_out_dir(&c), PathBuf::from("cfg"));
        c.out_dir = None;
        let fallback = resolve_out_dir(&c);
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) => assert_eq!(fallback, PathBuf::from(v)),
            None => assert_eq!(fallback, PathBuf::from(FALLBACK_OUT_DIR)),
        }
    }
}

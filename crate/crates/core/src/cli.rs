//! The `netcpd` command line.
//!
//! Each subcommand reads a JSON config, writes JSON reports and CSV tables
//! into `--out`, and echoes its config and seed into the report. On failure
//! a `FAILED` file holding the error message is left in the output
//! directory and the process exits with status 1.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundsInput, BoundsReport};
use crate::datagen::ModelSpec;
use crate::detector::{self, Monitor, RunSettings, Stopping};
use crate::experiments::{
    self, CalibrateConfig, EddSweepConfig, IsolationBenchConfig, TailCheckConfig, ZeroThresholdConfig,
};
use crate::isolation::{self, Membership, Method};
use crate::similarity::SimilarityKind;
use crate::snapshot::{build_snapshot, EdgeMask, SimilaritySnapshot, SnapshotJson};
use crate::stream::{self, ObservationFrame, WindowBank};

pub const FAILURE_MARKER: &str = "FAILED";

#[derive(Debug, Parser)]
#[command(
    name = "netcpd",
    version,
    about = "Change-point detection over sensor similarity networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; required by every command that draws random numbers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Monte Carlo worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a sensor stream CSV from a trend or covariance model.
    Simulate,
    /// Find the threshold matching a target ARL.
    Calibrate,
    /// Run the stopping rule over a stream CSV.
    Detect {
        /// Stream CSV with header `t,s1,...,sN`; empty cells are missing readings.
        #[arg(long)]
        input: PathBuf,
    },
    /// EDD across post-change slopes of the trend model.
    EddSweep,
    /// Split a snapshot into normal and anomalous nodes.
    Isolate {
        /// Snapshot JSON `{t, n, y}` where `y[i][j]` is null for masked pairs.
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluate the delay and tail bounds, or estimate sigma2 from a stream.
    Bounds {
        /// Stream CSV whose `[from, to]` stretch is treated as stationary.
        #[arg(long, requires_all = ["window", "from", "to"])]
        estimate_sigma2: Option<PathBuf>,
        /// Window length used to build the snapshots.
        #[arg(long)]
        window: Option<usize>,
        /// First tick of the stationary stretch.
        #[arg(long)]
        from: Option<u64>,
        /// Last tick of the stationary stretch.
        #[arg(long)]
        to: Option<u64>,
    },
    /// Synthetic validation experiments.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    /// Covariance change at threshold 0: timely detection and histograms.
    ZeroThreshold,
    /// Per-tick alarm rates against the zero-threshold tail bounds.
    TailCheck,
    /// Spectral isolation against brute force on planted instances.
    IsolationBench,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0} requires --seed")]
    MissingSeed(&'static str),
    #[error("{0} requires --config")]
    MissingConfig(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Run(String),
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub model: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSidecar {
    pub config: SimulateConfig,
    pub seed: u64,
    pub rows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub w: usize,
    #[serde(default)]
    pub kind: SimilarityKind,
    #[serde(default)]
    pub mask: Option<Vec<Vec<bool>>>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub config: DetectConfig,
    pub seed: Option<u64>,
    pub input: PathBuf,
    pub stopping: Stopping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolateConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    /// Threshold for the naive per-node rule.
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn default_method() -> Method {
    Method::SpectralRefine
}

impl Default for IsolateConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolateReport {
    pub config: IsolateConfig,
    pub seed: Option<u64>,
    pub input: PathBuf,
    pub t: u64,
    #[serde(flatten)]
    pub membership: Membership,
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsCommandReport {
    pub config: BoundsInput,
    #[serde(flatten)]
    pub report: BoundsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    pub input: PathBuf,
    pub w: usize,
    pub from: u64,
    pub to: u64,
    pub snapshots: usize,
    pub sigma2: Option<f64>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(run_err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

impl Cli {
    fn seed(&self, command: &'static str) -> Result<u64, CliError> {
        self.seed.ok_or(CliError::MissingSeed(command))
    }

    fn config<T: DeserializeOwned>(&self, command: &'static str) -> Result<T, CliError> {
        read_json(self.config.as_deref().ok_or(CliError::MissingConfig(command))?)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Runs the parsed command. Returns the paths written.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let threads = cli.parallel.max(1);
    match &cli.command {
        Command::Simulate => {
            let seed = cli.seed("simulate")?;
            let config: SimulateConfig = cli.config("simulate")?;
            let model = config.model.build().map_err(run_err)?;
            let csv_path = cli.out("stream.csv");
            stream::write_csv(create(&csv_path)?, model.frames(seed), model.n_sensors()).map_err(run_err)?;
            let sidecar = cli.out("spec.json");
            let rows = model.horizon();
            write_json(&sidecar, &SimulateSidecar { config, seed, rows })?;
            Ok(vec![csv_path, sidecar])
        }
        Command::Calibrate => {
            let seed = cli.seed("calibrate")?;
            let config: CalibrateConfig = cli.config("calibrate")?;
            let report = experiments::run_calibration(&config, seed, threads).map_err(run_err)?;
            let path = cli.out("calibration.json");
            write_json(&path, &report)?;
            Ok(vec![path])
        }
        Command::Detect { input } => {
            let config: DetectConfig = cli.config("detect")?;
            let frames = File::open(input)
                .map_err(|source| CliError::Io {
                    path: input.clone(),
                    source,
                })
                .and_then(|f| stream::read_csv(BufReader::new(f)).map_err(run_err))?;
            let edge_mask = config
                .mask
                .as_deref()
                .map(EdgeMask::from_matrix)
                .transpose()
                .map_err(run_err)?;
            let settings = RunSettings {
                w: config.w,
                kind: config.kind,
                edge_mask,
                b: config.b,
            };
            let outcome = detector::run(frames.iter().cloned(), &settings, true).map_err(run_err)?;
            let trace_path = cli.out("trace.csv");
            detector::write_trace_csv(create(&trace_path)?, &outcome.trace).map_err(run_err)?;
            let mut written = vec![trace_path];
            if let Some(t) = outcome.stopping.alarm_time() {
                let snap = snapshot_at(&frames, &settings, t)?;
                let path = cli.out("alarm_snapshot.json");
                write_json(&path, &snap.to_json())?;
                written.push(path);
            }
            let report_path = cli.out("detection.json");
            write_json(
                &report_path,
                &DetectReport {
                    config,
                    seed: cli.seed,
                    input: input.clone(),
                    stopping: outcome.stopping,
                },
            )?;
            written.push(report_path);
            Ok(written)
        }
        Command::EddSweep => {
            let seed = cli.seed("edd-sweep")?;
            let config: EddSweepConfig = cli.config("edd-sweep")?;
            let (report, outcomes) = experiments::run_edd_sweep(&config, seed, threads).map_err(run_err)?;
            let table = cli.out("edd_sweep.csv");
            write_csv_rows(&table, &report.rows)?;
            let replicas = cli.out("edd_replicas.csv");
            write_csv_rows(&replicas, &outcomes)?;
            let json = cli.out("edd_sweep.json");
            write_json(&json, &report)?;
            Ok(vec![table, replicas, json])
        }
        Command::Isolate { input } => {
            let config: IsolateConfig = match &cli.config {
                Some(path) => read_json(path)?,
                None => IsolateConfig::default(),
            };
            let doc: SnapshotJson = read_json(input)?;
            let snap = SimilaritySnapshot::from_json(&doc).map_err(run_err)?;
            let membership = isolate(&snap, &config, cli)?;
            let path = cli.out("isolation.json");
            write_json(
                &path,
                &IsolateReport {
                    config,
                    seed: cli.seed,
                    input: input.clone(),
                    t: snap.t,
                    permutation: membership.permutation(),
                    membership,
                },
            )?;
            Ok(vec![path])
        }
        Command::Bounds {
            estimate_sigma2: Some(input),
            window,
            from,
            to,
        } => {
            let estimate = sigma2_from_stream(input, window.unwrap_or(0), from.unwrap_or(0), to.unwrap_or(0))?;
            let path = cli.out("sigma2_estimate.json");
            write_json(&path, &estimate)?;
            Ok(vec![path])
        }
        Command::Bounds { .. } => {
            let config: BoundsInput = cli.config("bounds")?;
            let report = bounds::evaluate(&config).map_err(run_err)?;
            let path = cli.out("bounds.json");
            write_json(&path, &BoundsCommandReport { config, report })?;
            Ok(vec![path])
        }
        Command::Experiment { kind } => {
            let seed = cli.seed("experiment")?;
            let path = match kind {
                ExperimentKind::ZeroThreshold => {
                    let config: ZeroThresholdConfig = cli.config("experiment")?;
                    let report = experiments::run_zero_threshold(&config, seed, threads).map_err(run_err)?;
                    let path = cli.out("zero_threshold.json");
                    write_json(&path, &report)?;
                    path
                }
                ExperimentKind::TailCheck => {
                    let config: TailCheckConfig = cli.config("experiment")?;
                    let report = experiments::run_tail_check(&config, seed, threads).map_err(run_err)?;
                    let path = cli.out("tail_check.json");
                    write_json(&path, &report)?;
                    path
                }
                ExperimentKind::IsolationBench => {
                    let config: IsolationBenchConfig = cli.config("experiment")?;
                    let report = experiments::run_isolation_bench(&config, seed, threads).map_err(run_err)?;
                    let path = cli.out("isolation_bench.json");
                    write_json(&path, &report)?;
                    path
                }
            };
            Ok(vec![path])
        }
    }
}

/// Replays `frames` up to tick `t` and returns the snapshot the detector saw there.
fn snapshot_at(frames: &[ObservationFrame], settings: &RunSettings, t: u64) -> Result<SimilaritySnapshot, CliError> {
    let n = frames.first().map_or(0, |f| f.n());
    let mut monitor = Monitor::new(n, settings.w, settings.kind, settings.edge_mask.clone()).map_err(run_err)?;
    for frame in frames.iter().take_while(|f| f.t <= t) {
        if let Some(snap) = monitor.observe(frame).map_err(run_err)? {
            if frame.t == t {
                return Ok(snap);
            }
        }
    }
    Err(CliError::Run(format!("no snapshot at alarm tick {t}")))
}

fn isolate(snap: &SimilaritySnapshot, config: &IsolateConfig, cli: &Cli) -> Result<Membership, CliError> {
    match config.method {
        Method::BruteForce => isolation::brute_force_membership(snap).map_err(run_err),
        Method::Spectral => {
            isolation::spectral_membership(snap, cli.seed("isolate with spectral methods")?).map_err(run_err)
        }
        Method::SpectralRefine => {
            isolation::spectral_refine_membership(snap, cli.seed("isolate with spectral methods")?).map_err(run_err)
        }
        Method::LocalSearch => {
            let start = vec![-1; snap.n()];
            isolation::local_search_refine(snap, &start).map_err(run_err)
        }
        Method::Naive => {
            let threshold = config
                .threshold
                .ok_or_else(|| CliError::Run("the naive method needs a threshold".into()))?;
            let s = isolation::naive_isolation(snap, threshold);
            let x: Vec<i8> = (0..snap.n()).map(|i| if s.contains(&i) { 1 } else { -1 }).collect();
            Ok(Membership {
                method: Method::Naive,
                objective: isolation::objective(snap, &x).map_err(run_err)?,
                x,
                s,
                eigengap: None,
                flips: None,
                warning: None,
            })
        }
    }
}

fn sigma2_from_stream(input: &Path, w: usize, from: u64, to: u64) -> Result<Sigma2Estimate, CliError> {
    let frames = File::open(input)
        .map_err(|source| CliError::Io {
            path: input.to_owned(),
            source,
        })
        .and_then(|f| stream::read_csv(BufReader::new(f)).map_err(run_err))?;
    let n = frames.first().map_or(0, |f| f.n());
    let mut bank = WindowBank::new(n, w).map_err(run_err)?;
    let mut stretch = Vec::new();
    for frame in &frames {
        bank.push(frame).map_err(run_err)?;
        if (from..=to).contains(&frame.t) {
            if let Ok(snap) = build_snapshot(&bank, SimilarityKind::Pearson, None) {
                stretch.push(snap);
            }
        }
    }
    Ok(Sigma2Estimate {
        input: input.to_owned(),
        w,
        from,
        to,
        snapshots: stretch.len(),
        sigma2: bounds::estimate_sigma2(&stretch),
    })
}

/// Parses arguments, runs, and maintains the failure marker. Returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let marker = cli.out.join(FAILURE_MARKER);
    let result = fs::create_dir_all(&cli.out)
        .map_err(|source| CliError::Io {
            path: cli.out.clone(),
            source,
        })
        .and_then(|()| {
            if marker.exists() {
                fs::remove_file(&marker).map_err(|source| CliError::Io {
                    path: marker.clone(),
                    source,
                })?;
            }
            execute(&cli)
        });
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Ok(mut f) = File::create(&marker) {
                let _ = writeln!(f, "{e}");
            }
            1
        }
    }
}

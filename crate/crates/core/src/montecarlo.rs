//! Monte Carlo estimation of average run length (ARL) and expected detection
//! delay (EDD), and threshold calibration to a target ARL.
//!
//! Replica `r` of an experiment with root seed `s` always draws from the
//! stream seeded by `derive(s, [REPLICA, r])`, whatever the thread count.
//! Per-replica outcomes are collected in replica order and reduced with
//! pairwise summation, so every reported number is a pure function of the
//! inputs.
//!
//! Calibration uses common random numbers: each replica's path is simulated
//! once and its record sequence of running maxima of `max_i rho_i` is kept,
//! which gives the exact stopping time `T_r(b)` for every `b` already
//! covered by the simulated prefix. `T_r(b)` is nondecreasing in `b`, so the
//! estimated ARL is too, and bisection over `b` is well defined.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Model, ModelStream};
use crate::detector::{argmax, node_statistics, DetectorError, Monitor};
use crate::seed::{self, tag};
use crate::similarity::SimilarityKind;
use crate::snapshot::EdgeMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("need at least one replica")]
    NoReplicas,
    #[error("model has no change point; EDD needs kappa")]
    NoChange,
    #[error("kappa = {kappa} precedes the first evaluable tick w = {w}")]
    EarlyChange { kappa: u64, w: usize },
    #[error("target ARL {target} must exceed the window length {w}")]
    TargetTooSmall { target: f64, w: usize },
    #[error(
        "calibration failed: {reason} (bracket [{lo}, {hi}], ARL there {arl_lo:.2} / {arl_hi:.2}, target {target})"
    )]
    Calibration {
        reason: String,
        lo: f64,
        hi: f64,
        arl_lo: f64,
        arl_hi: f64,
        target: f64,
    },
}

/// Pairwise (cascade) summation; the result depends only on the slice order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and standard error (sample standard deviation over √n).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

pub fn replica_seed(root: u64, replica: usize) -> u64 {
    seed::derive(root, &[tag::REPLICA, replica as u64])
}

/// Window length, similarity measure, and edge mask shared by all replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSetup {
    pub w: usize,
    #[serde(default)]
    pub kind: SimilarityKind,
    /// Adjacency matrix; absent means the complete graph.
    #[serde(default)]
    pub mask: Option<Vec<Vec<bool>>>,
}

impl DetectionSetup {
    pub fn new(w: usize, kind: SimilarityKind) -> Self {
        Self { w, kind, mask: None }
    }

    pub fn edge_mask(&self) -> Result<Option<EdgeMask>, MonteCarloError> {
        self.mask
            .as_deref()
            .map(EdgeMask::from_matrix)
            .transpose()
            .map_err(|e| MonteCarloError::Detector(e.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    Alarm(u64),
    Censored,
    Pending,
}

/// One replica's simulated path with its record sequence of running maxima.
pub struct ReplicaPath<'m> {
    stream: ModelStream<'m>,
    monitor: Monitor,
    /// `(t, M_t)` at each tick where `M_t = max_i rho_it` sets a new record.
    records: Vec<(u64, f64)>,
    argmax_nodes: Vec<usize>,
    t: u64,
}

impl<'m> ReplicaPath<'m> {
    pub fn new(
        model: &'m Model,
        setup: &DetectionSetup,
        mask: Option<EdgeMask>,
        seed: u64,
    ) -> Result<Self, MonteCarloError> {
        Ok(Self {
            stream: model.stream(seed),
            monitor: Monitor::new(model.n_sensors(), setup.w, setup.kind, mask)?,
            records: Vec::new(),
            argmax_nodes: Vec::new(),
            t: 0,
        })
    }

    /// Ticks simulated so far.
    pub fn simulated(&self) -> u64 {
        self.t
    }

    fn known(&self, b: f64) -> Option<usize> {
        let k = self.records.partition_point(|&(_, m)| m <= b);
        (k < self.records.len()).then_some(k)
    }

    /// Stopping time and argmax node at threshold `b` if the alarm lies in
    /// the simulated prefix.
    pub fn alarm(&self, b: f64) -> Option<(u64, usize)> {
        self.known(b).map(|k| (self.records[k].0, self.argmax_nodes[k]))
    }

    /// Simulates at most `budget` more ticks looking for the alarm at `b`.
    pub fn extend(&mut self, b: f64, horizon: u64, budget: u64) -> Result<PathStatus, MonteCarloError> {
        if let Some((t, _)) = self.alarm(b) {
            return Ok(if t <= horizon {
                PathStatus::Alarm(t)
            } else {
                PathStatus::Censored
            });
        }
        let stop = horizon.min(self.t.saturating_add(budget));
        while self.t < stop {
            let frame = self.stream.next().expect("model streams are unbounded");
            self.t = frame.t;
            if let Some(snap) = self.monitor.observe(&frame)? {
                if let Some((node, m)) = argmax(&node_statistics(&snap)) {
                    if self.records.last().is_none_or(|&(_, best)| m > best) {
                        self.records.push((self.t, m));
                        self.argmax_nodes.push(node);
                        if m > b {
                            return Ok(PathStatus::Alarm(self.t));
                        }
                    }
                }
            }
        }
        Ok(if self.t >= horizon {
            PathStatus::Censored
        } else {
            PathStatus::Pending
        })
    }

    pub fn stopping_time(&mut self, b: f64, horizon: u64) -> Result<Option<u64>, MonteCarloError> {
        match self.extend(b, horizon, u64::MAX)? {
            PathStatus::Alarm(t) => Ok(Some(t)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub b: f64,
    pub seed: u64,
    pub replicas: usize,
    pub horizon: u64,
    /// Mean run length, censored runs counted at the horizon.
    pub arl: Option<f64>,
    /// Mean of `(T - kappa + 1)^+` over replicas that alarmed.
    pub edd: Option<f64>,
    /// Standard error of whichever estimate is present.
    pub se: Option<f64>,
    pub censored: usize,
    pub false_alarms: usize,
    pub alarmed: usize,
}

fn check_replicas(replicas: usize) -> Result<(), MonteCarloError> {
    if replicas == 0 {
        Err(MonteCarloError::NoReplicas)
    } else {
        Ok(())
    }
}

fn make_paths<'m>(
    model: &'m Model,
    setup: &DetectionSetup,
    replicas: usize,
    root: u64,
) -> Result<Vec<ReplicaPath<'m>>, MonteCarloError> {
    let mask = setup.edge_mask()?;
    (0..replicas)
        .map(|r| ReplicaPath::new(model, setup, mask.clone(), replica_seed(root, r)))
        .collect()
}

fn arl_metrics(b: f64, seed: u64, horizon: u64, times: &[Option<u64>]) -> RunMetrics {
    let lengths: Vec<f64> = times.iter().map(|t| t.unwrap_or(horizon) as f64).collect();
    let (mean, se) = mean_and_se(&lengths);
    let censored = times.iter().filter(|t| t.is_none()).count();
    RunMetrics {
        b,
        seed,
        replicas: times.len(),
        horizon,
        arl: Some(mean),
        edd: None,
        se: Some(se),
        censored,
        false_alarms: times.len() - censored,
        alarmed: times.len() - censored,
    }
}

/// ARL of the stopping rule under a (null) model.
pub fn estimate_arl(
    model: &Model,
    setup: &DetectionSetup,
    b: f64,
    replicas: usize,
    horizon: u64,
    seed: u64,
    threads: usize,
) -> Result<RunMetrics, MonteCarloError> {
    check_replicas(replicas)?;
    let mut paths = make_paths(model, setup, replicas, seed)?;
    let times = with_threads(threads, || {
        paths
            .par_iter_mut()
            .map(|p| p.stopping_time(b, horizon))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(arl_metrics(b, seed, horizon, &times))
}

/// Per-replica outcome of a post-change run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayOutcome {
    pub replica: usize,
    pub t: Option<u64>,
    /// `(T - kappa + 1)^+`, absent for censored runs.
    pub delay: Option<u64>,
}

/// Fixed-`kappa` EDD: mean of `(T - kappa + 1)^+` over alarmed replicas.
/// Alarms before `kappa` count as false alarms with delay 0.
pub fn estimate_edd(
    model: &Model,
    setup: &DetectionSetup,
    b: f64,
    replicas: usize,
    horizon: u64,
    seed: u64,
    threads: usize,
) -> Result<(RunMetrics, Vec<DelayOutcome>), MonteCarloError> {
    check_replicas(replicas)?;
    let kappa = model.kappa().ok_or(MonteCarloError::NoChange)?;
    if kappa < setup.w as u64 {
        return Err(MonteCarloError::EarlyChange { kappa, w: setup.w });
    }
    let mut paths = make_paths(model, setup, replicas, seed)?;
    let times = with_threads(threads, || {
        paths
            .par_iter_mut()
            .map(|p| p.stopping_time(b, horizon))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let outcomes: Vec<DelayOutcome> = times
        .iter()
        .enumerate()
        .map(|(replica, &t)| DelayOutcome {
            replica,
            t,
            delay: t.map(|t| (t + 1).saturating_sub(kappa)),
        })
        .collect();
    Ok((edd_metrics(b, seed, horizon, kappa, &outcomes), outcomes))
}

pub fn edd_metrics(b: f64, seed: u64, horizon: u64, kappa: u64, outcomes: &[DelayOutcome]) -> RunMetrics {
    let delays: Vec<f64> = outcomes.iter().filter_map(|o| o.delay.map(|d| d as f64)).collect();
    let (edd, se) = if delays.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_and_se(&delays);
        (Some(m), Some(s))
    };
    RunMetrics {
        b,
        seed,
        replicas: outcomes.len(),
        horizon,
        arl: None,
        edd,
        se,
        censored: outcomes.len() - delays.len(),
        false_alarms: outcomes.iter().filter(|o| o.t.is_some_and(|t| t < kappa)).count(),
        alarmed: delays.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub target_arl: f64,
    pub replicas: usize,
    /// Censoring horizon; defaults to `20 * target_arl`.
    #[serde(default)]
    pub horizon: Option<u64>,
    /// Search bracket for `b`; defaults to `[-1, 1]`, which is exhaustive
    /// for Pearson similarity.
    #[serde(default)]
    pub bracket: Option<(f64, f64)>,
    /// Accepted relative deviation of the calibrated ARL from the target.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn default_tolerance() -> f64 {
    0.1
}

fn default_iterations() -> usize {
    30
}

impl CalibrationOptions {
    pub fn new(target_arl: f64, replicas: usize) -> Self {
        Self {
            target_arl,
            replicas,
            horizon: None,
            bracket: None,
            tolerance: default_tolerance(),
            max_iterations: default_iterations(),
        }
    }

    pub fn horizon(&self) -> u64 {
        self.horizon.unwrap_or((20.0 * self.target_arl).ceil() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub b: f64,
    /// ARL at `b` on the calibration seeds.
    pub metrics: RunMetrics,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Simulates a batch of paths in lockstep chunks until every replica's
/// stopping time at `b` is known or the censored-run lower bound on the mean
/// already reaches `target`.
fn arl_reaches(paths: &mut [ReplicaPath<'_>], b: f64, horizon: u64, target: f64) -> Result<bool, MonteCarloError> {
    const CHUNK: u64 = 64;
    let need = target * paths.len() as f64;
    loop {
        let status = paths
            .par_iter_mut()
            .map(|p| p.extend(b, horizon, CHUNK))
            .collect::<Result<Vec<_>, _>>()?;
        let mut lower = 0.0;
        let mut pending = false;
        for (p, s) in paths.iter().zip(&status) {
            lower += match s {
                PathStatus::Alarm(t) => *t as f64,
                PathStatus::Censored => horizon as f64,
                PathStatus::Pending => {
                    pending = true;
                    p.simulated() as f64
                }
            };
        }
        if lower >= need {
            return Ok(true);
        }
        if !pending {
            return Ok(false);
        }
    }
}

/// Finds `b` whose estimated ARL on the calibration seeds is within
/// `tolerance` of the target, by bisection on common random numbers.
pub fn calibrate_threshold(
    model: &Model,
    setup: &DetectionSetup,
    opts: &CalibrationOptions,
    seed: u64,
    threads: usize,
) -> Result<Calibration, MonteCarloError> {
    check_replicas(opts.replicas)?;
    if opts.target_arl < setup.w as f64 {
        return Err(MonteCarloError::TargetTooSmall {
            target: opts.target_arl,
            w: setup.w,
        });
    }
    let horizon = opts.horizon();
    let (mut lo, mut hi) = opts.bracket.unwrap_or((-1.0, 1.0));
    let bracket = (lo, hi);
    let target = opts.target_arl;
    let mut paths = make_paths(model, setup, opts.replicas, seed)?;

    with_threads(threads, || {
        let exact = |paths: &mut [ReplicaPath<'_>], b: f64| -> Result<RunMetrics, MonteCarloError> {
            let times = paths
                .par_iter_mut()
                .map(|p| p.stopping_time(b, horizon))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(arl_metrics(b, seed, horizon, &times))
        };

        if arl_reaches(&mut paths, lo, horizon, target)? {
            let metrics = exact(&mut paths, lo)?;
            return finish(lo, metrics, 0, bracket, opts);
        }
        if !arl_reaches(&mut paths, hi, horizon, target)? {
            let arl_lo = exact(&mut paths, lo)?.arl.unwrap_or(f64::NAN);
            let arl_hi = exact(&mut paths, hi)?.arl.unwrap_or(f64::NAN);
            return Err(MonteCarloError::Calibration {
                reason: "target ARL not reached at the upper end of the bracket".into(),
                lo,
                hi,
                arl_lo,
                arl_hi,
                target,
            });
        }
        let mut iterations = 0;
        while iterations < opts.max_iterations {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if arl_reaches(&mut paths, mid, horizon, target)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let below = exact(&mut paths, lo)?;
        let above = exact(&mut paths, hi)?;
        let miss = |m: &RunMetrics| (m.arl.unwrap_or(f64::INFINITY) - target).abs();
        let pick = if miss(&below) < miss(&above) { below } else { above };
        finish(pick.b, pick, iterations, bracket, opts)
    })
}

fn finish(
    b: f64,
    metrics: RunMetrics,
    iterations: usize,
    bracket: (f64, f64),
    opts: &CalibrationOptions,
) -> Result<Calibration, MonteCarloError> {
    let arl = metrics.arl.unwrap_or(f64::NAN);
    let target = opts.target_arl;
    if !((arl - target).abs() <= opts.tolerance * target) {
        return Err(MonteCarloError::Calibration {
            reason: format!("estimated ARL jumps across the target near b = {b}; raise the replica count"),
            lo: bracket.0,
            hi: bracket.1,
            arl_lo: arl,
            arl_hi: arl,
            target,
        });
    }
    Ok(Calibration {
        b,
        metrics,
        iterations,
        bracket,
    })
}

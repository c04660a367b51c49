//! Node-wise negative average similarity and the threshold stopping rule.
//!
//! For node `i` with neighborhood `N(i)` the statistic is
//! `rho_i = -(1/|N(i)|) * sum_{j in N(i)} y_ij`, and the detector stops at the
//! first tick where `max_i rho_i > b` (strict). Nodes with an empty
//! neighborhood are inactive and never enter the max.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::SimilarityKind;
use crate::snapshot::{build_snapshot, EdgeMask, SimilaritySnapshot, SnapshotError};
use crate::stream::{ObservationFrame, StreamError, WindowBank};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("node {0} has an empty neighborhood; statistic undefined")]
    Undefined(usize),
    #[error("detector already alarmed at t = {0}")]
    AlreadyAlarmed(u64),
    #[error("snapshot tick {got} does not follow detector tick {expected}")]
    TickMismatch { expected: u64, got: u64 },
    #[error("snapshot has {got} nodes, detector tracks {expected}")]
    NodeCount { expected: usize, got: usize },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

/// `rho_i` for one node.
pub fn node_statistic(snap: &SimilaritySnapshot, i: usize) -> Result<f64, DetectorError> {
    let nb = snap.neighborhood(i);
    if nb.is_empty() {
        return Err(DetectorError::Undefined(i));
    }
    let sum: f64 = nb.members.iter().map(|&j| snap.y(i, j)).sum();
    Ok(-sum / nb.len() as f64)
}

/// Statistics for every node; `None` marks inactive nodes.
pub fn node_statistics(snap: &SimilaritySnapshot) -> Vec<Option<f64>> {
    (0..snap.n()).map(|i| node_statistic(snap, i).ok()).collect()
}

/// Largest statistic and the smallest node index attaining it.
pub fn argmax(rho: &[Option<f64>]) -> Option<(usize, f64)> {
    rho.iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .fold(None, |best, (i, r)| match best {
            Some((_, m)) if r <= m => best,
            _ => Some((i, r)),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorState {
    pub b: f64,
    pub t: u64,
    pub rho: Vec<Option<f64>>,
    pub alarmed: bool,
    pub stopping_time: Option<u64>,
    pub argmax_node: Option<usize>,
}

impl DetectorState {
    pub fn new(n: usize, b: f64) -> Self {
        Self {
            b,
            t: 0,
            rho: vec![None; n],
            alarmed: false,
            stopping_time: None,
            argmax_node: None,
        }
    }

    /// Advances the clock through a tick with no evaluable snapshot.
    pub fn idle(&mut self, t: u64) -> Result<(), DetectorError> {
        self.check_tick(t)?;
        self.t = t;
        self.rho.fill(None);
        Ok(())
    }

    /// Applies the stopping rule to the next snapshot. Returns whether the
    /// detector alarmed on this tick.
    pub fn step(&mut self, snap: &SimilaritySnapshot) -> Result<bool, DetectorError> {
        self.check_tick(snap.t)?;
        if snap.n() != self.rho.len() {
            return Err(DetectorError::NodeCount {
                expected: self.rho.len(),
                got: snap.n(),
            });
        }
        self.t = snap.t;
        self.rho = node_statistics(snap);
        if let Some((node, max)) = argmax(&self.rho) {
            if max > self.b {
                self.alarmed = true;
                self.stopping_time = Some(snap.t);
                self.argmax_node = Some(node);
            }
        }
        Ok(self.alarmed)
    }

    fn check_tick(&self, t: u64) -> Result<(), DetectorError> {
        if self.alarmed {
            return Err(DetectorError::AlreadyAlarmed(self.stopping_time.unwrap_or(self.t)));
        }
        if t != self.t + 1 {
            return Err(DetectorError::TickMismatch {
                expected: self.t + 1,
                got: t,
            });
        }
        Ok(())
    }
}

/// Ingestion-to-snapshot pipeline: a window bank plus the similarity kind
/// and fixed edge mask for the run.
#[derive(Debug, Clone)]
pub struct Monitor {
    bank: WindowBank,
    kind: SimilarityKind,
    mask: Option<EdgeMask>,
}

impl Monitor {
    pub fn new(n: usize, w: usize, kind: SimilarityKind, mask: Option<EdgeMask>) -> Result<Self, DetectorError> {
        if let Some(m) = &mask {
            if m.n() != n {
                return Err(SnapshotError::MaskSize { mask: m.n(), n }.into());
            }
        }
        Ok(Self {
            bank: WindowBank::new(n, w)?,
            kind,
            mask,
        })
    }

    pub fn bank(&self) -> &WindowBank {
        &self.bank
    }

    /// Pushes a frame and returns the tick's snapshot once warm-up is over
    /// (`t >= w` and at least two complete windows).
    pub fn observe(&mut self, frame: &ObservationFrame) -> Result<Option<SimilaritySnapshot>, DetectorError> {
        self.bank.push(frame)?;
        if frame.t < self.bank.w() as u64 {
            return Ok(None);
        }
        match build_snapshot(&self.bank, self.kind, self.mask.as_ref()) {
            Ok(snap) => Ok(Some(snap)),
            Err(SnapshotError::NotReady { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Stopping {
    Alarm { t: u64, node: usize, statistic: f64 },
    Censored { horizon: u64 },
}

impl Stopping {
    pub fn alarm_time(&self) -> Option<u64> {
        match self {
            Stopping::Alarm { t, .. } => Some(*t),
            Stopping::Censored { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub node: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub stopping: Stopping,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub w: usize,
    pub kind: SimilarityKind,
    pub edge_mask: Option<EdgeMask>,
    pub b: f64,
}

/// Streams frames through the window bank, snapshot builder and stopping
/// rule until the first alarm or until the frames run out.
pub fn run<I>(frames: I, settings: &RunSettings, record_trace: bool) -> Result<RunOutcome, DetectorError>
where
    I: IntoIterator<Item = ObservationFrame>,
{
    let mut frames = frames.into_iter().peekable();
    let Some(first) = frames.peek() else {
        return Ok(RunOutcome {
            stopping: Stopping::Censored { horizon: 0 },
            trace: Vec::new(),
        });
    };
    let n = first.n();
    let mut monitor = Monitor::new(n, settings.w, settings.kind, settings.edge_mask.clone())?;
    let mut state = DetectorState::new(n, settings.b);
    let mut trace = Vec::new();
    let mut last_t = 0;
    for frame in frames {
        // the detector clock follows the stream's own tick numbering
        if state.t == 0 {
            state.t = frame.t.saturating_sub(1);
        }
        last_t = frame.t;
        match monitor.observe(&frame)? {
            Some(snap) => {
                let alarmed = state.step(&snap)?;
                if record_trace {
                    trace.extend(
                        state
                            .rho
                            .iter()
                            .enumerate()
                            .filter_map(|(node, r)| r.map(|rho| TraceRow { t: snap.t, node, rho })),
                    );
                }
                if alarmed {
                    let node = state.argmax_node.expect("alarm sets argmax");
                    return Ok(RunOutcome {
                        stopping: Stopping::Alarm {
                            t: snap.t,
                            node,
                            statistic: state.rho[node].expect("argmax is active"),
                        },
                        trace,
                    });
                }
            }
            None => state.idle(frame.t)?,
        }
    }
    Ok(RunOutcome {
        stopping: Stopping::Censored { horizon: last_t },
        trace,
    })
}

pub fn write_trace_csv<W: Write>(writer: W, trace: &[TraceRow]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in trace {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: std::io::Read>(reader: R) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

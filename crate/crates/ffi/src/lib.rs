//! C ABI for the netcpd detector, similarity, isolation and bound routines.
//!
//! Every fallible function returns a [`NetcpdStatus`]. On failure a
//! message is kept per thread and can be read with
//! [`netcpd_last_error_message`]. Detectors are opaque handles created with
//! [`netcpd_detector_new`] and released with [`netcpd_detector_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use netcpd::bounds;
use netcpd::detector::{DetectorError, DetectorState, Monitor};
use netcpd::isolation::{self, Membership};
use netcpd::similarity::{self, SimilarityError, SimilarityKind};
use netcpd::snapshot::SimilaritySnapshot;
use netcpd::stream::ObservationFrame;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetcpdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The detector has alarmed and takes no further frames.
    AlreadyAlarmed = 3,
    /// No alarm has been raised yet.
    NoAlarm = 4,
    /// A window has zero variance.
    Degenerate = 5,
    /// Power iteration failed to converge.
    NoConvergence = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetcpdSimilarity {
    Pearson = 0,
    InnerProduct = 1,
    NegEuclidean = 2,
}

impl From<NetcpdSimilarity> for SimilarityKind {
    fn from(k: NetcpdSimilarity) -> Self {
        match k {
            NetcpdSimilarity::Pearson => SimilarityKind::Pearson,
            NetcpdSimilarity::InnerProduct => SimilarityKind::InnerProduct,
            NetcpdSimilarity::NegEuclidean => SimilarityKind::NegEuclidean,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetcpdIsolationMethod {
    BruteForce = 0,
    Spectral = 1,
    SpectralRefine = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: NetcpdStatus, message: impl Into<String>) -> NetcpdStatus {
    set_error(message);
    status
}

/// Runs `f`, turning panics into [`NetcpdStatus::Panic`].
fn guard(f: impl FnOnce() -> NetcpdStatus) -> NetcpdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(NetcpdStatus::Panic, "internal panic"),
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn netcpd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Online detector: window bank, snapshot builder and stopping rule.
pub struct NetcpdDetector {
    monitor: Monitor,
    state: DetectorState,
    n: usize,
    started: bool,
}

/// Creates a detector over `n` sensors with window `w`, complete graph,
/// and threshold `b`; `w` must be at least 2. Writes the handle to `out`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn netcpd_detector_new(
    n: usize,
    w: usize,
    kind: NetcpdSimilarity,
    b: f64,
    out: *mut *mut NetcpdDetector,
) -> NetcpdStatus {
    guard(|| {
        if out.is_null() {
            return fail(NetcpdStatus::NullPointer, "out is NULL");
        }
        if b.is_nan() {
            return fail(NetcpdStatus::InvalidArgument, "threshold is NaN");
        }
        if w < 2 {
            return fail(
                NetcpdStatus::InvalidArgument,
                format!("window length {w} is too short (need at least 2)"),
            );
        }
        match Monitor::new(n, w, kind.into(), None) {
            Ok(monitor) => {
                let handle = Box::new(NetcpdDetector {
                    monitor,
                    state: DetectorState::new(n, b),
                    n,
                    started: false,
                });
                *out = Box::into_raw(handle);
                NetcpdStatus::Ok
            }
            Err(e) => fail(NetcpdStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Releases a detector. NULL is ignored.
///
/// # Safety
/// `handle` must come from [`netcpd_detector_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn netcpd_detector_free(handle: *mut NetcpdDetector) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Feeds the frame for tick `t`. `values` holds `n` readings; `missing` is
/// NULL or `n` flags where nonzero marks a missing reading. Ticks must be
/// consecutive. `alarmed` (may be NULL) receives whether this tick raised
/// the alarm.
///
/// # Safety
/// `handle` must be a live detector; `values` and non-NULL `missing` must
/// point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn netcpd_detector_push(
    handle: *mut NetcpdDetector,
    t: u64,
    values: *const f64,
    missing: *const u8,
    n: usize,
    alarmed: *mut bool,
) -> NetcpdStatus {
    guard(|| {
        let Some(det) = handle.as_mut() else {
            return fail(NetcpdStatus::NullPointer, "handle is NULL");
        };
        if values.is_null() {
            return fail(NetcpdStatus::NullPointer, "values is NULL");
        }
        if n != det.n {
            return fail(
                NetcpdStatus::InvalidArgument,
                format!("frame has {n} values, detector has {}", det.n),
            );
        }
        let values = slice::from_raw_parts(values, n).to_vec();
        let missing: Vec<usize> = if missing.is_null() {
            Vec::new()
        } else {
            let flags = slice::from_raw_parts(missing, n);
            (0..n).filter(|&i| flags[i] != 0).collect()
        };
        if let Some(i) = (0..n).find(|&i| !values[i].is_finite() && !missing.contains(&i)) {
            return fail(
                NetcpdStatus::InvalidArgument,
                format!("value {i} is not finite and not flagged missing"),
            );
        }
        let frame = ObservationFrame::with_missing(t, values, missing);
        if det.state.alarmed {
            return fail(
                NetcpdStatus::AlreadyAlarmed,
                format!("alarm already raised at t = {}", det.state.t),
            );
        }
        if !det.started {
            det.state.t = t.saturating_sub(1);
            det.started = true;
        }
        if t != det.state.t + 1 {
            return fail(
                NetcpdStatus::InvalidArgument,
                format!("expected tick {}, got {t}", det.state.t + 1),
            );
        }
        let result = det.monitor.observe(&frame).and_then(|snap| match snap {
            Some(snap) => det.state.step(&snap),
            None => det.state.idle(t).map(|()| false),
        });
        match result {
            Ok(fired) => {
                if !alarmed.is_null() {
                    *alarmed = fired;
                }
                NetcpdStatus::Ok
            }
            Err(e @ DetectorError::AlreadyAlarmed(_)) => fail(NetcpdStatus::AlreadyAlarmed, e.to_string()),
            Err(e) => fail(NetcpdStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Copies the node statistics of the latest tick into `out` (`n` slots);
/// nodes without a statistic are written as NaN.
///
/// # Safety
/// `handle` must be a live detector and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn netcpd_detector_statistics(
    handle: *const NetcpdDetector,
    out: *mut f64,
    n: usize,
) -> NetcpdStatus {
    guard(|| {
        let Some(det) = handle.as_ref() else {
            return fail(NetcpdStatus::NullPointer, "handle is NULL");
        };
        if out.is_null() {
            return fail(NetcpdStatus::NullPointer, "out is NULL");
        }
        if n != det.n {
            return fail(
                NetcpdStatus::InvalidArgument,
                format!("buffer has {n} slots, detector has {}", det.n),
            );
        }
        let out = slice::from_raw_parts_mut(out, n);
        for (slot, r) in out.iter_mut().zip(&det.state.rho) {
            *slot = r.unwrap_or(f64::NAN);
        }
        NetcpdStatus::Ok
    })
}

/// Stopping time and argmax node of the alarm, or [`NetcpdStatus::NoAlarm`].
///
/// # Safety
/// `handle` must be a live detector; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn netcpd_detector_stopping_time(
    handle: *const NetcpdDetector,
    t: *mut u64,
    node: *mut usize,
) -> NetcpdStatus {
    guard(|| {
        let Some(det) = handle.as_ref() else {
            return fail(NetcpdStatus::NullPointer, "handle is NULL");
        };
        match (det.state.stopping_time, det.state.argmax_node) {
            (Some(time), Some(argmax)) => {
                if !t.is_null() {
                    *t = time;
                }
                if !node.is_null() {
                    *node = argmax;
                }
                NetcpdStatus::Ok
            }
            _ => NetcpdStatus::NoAlarm,
        }
    })
}

/// Pearson correlation of two length-`len` windows.
///
/// # Safety
/// `x` and `y` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netcpd_pearson(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> NetcpdStatus {
    guard(|| {
        if x.is_null() || y.is_null() || out.is_null() {
            return fail(NetcpdStatus::NullPointer, "NULL argument");
        }
        match similarity::pearson(slice::from_raw_parts(x, len), slice::from_raw_parts(y, len)) {
            Ok(r) => {
                *out = r;
                NetcpdStatus::Ok
            }
            Err(e @ SimilarityError::Degenerate) => fail(NetcpdStatus::Degenerate, e.to_string()),
            Err(e) => fail(NetcpdStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Splits an `n x n` row-major similarity matrix into two groups. NaN
/// entries are masked-out edges; the diagonal is ignored. Writes `+1` for
/// anomalous and `-1` for normal nodes into `x_out` (`n` slots), the
/// objective to `objective` (may be NULL), and the eigengap of the spectral
/// methods to `eigengap` (may be NULL; NaN for brute force).
///
/// # Safety
/// `y` must point to `n * n` doubles and `x_out` to `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn netcpd_isolate(
    y: *const f64,
    n: usize,
    method: NetcpdIsolationMethod,
    seed: u64,
    x_out: *mut i8,
    objective: *mut f64,
    eigengap: *mut f64,
) -> NetcpdStatus {
    guard(|| {
        if y.is_null() || x_out.is_null() {
            return fail(NetcpdStatus::NullPointer, "NULL argument");
        }
        let Some(len) = n.checked_mul(n) else {
            return fail(NetcpdStatus::InvalidArgument, "n * n overflows");
        };
        let flat = slice::from_raw_parts(y, len);
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let v = flat[i * n + j];
                        (i != j && !v.is_nan()).then_some(v)
                    })
                    .collect()
            })
            .collect();
        let snap = match SimilaritySnapshot::from_dense(0, &rows) {
            Ok(s) => s,
            Err(e) => return fail(NetcpdStatus::InvalidArgument, e.to_string()),
        };
        let result: Result<Membership, isolation::IsolationError> = match method {
            NetcpdIsolationMethod::BruteForce => isolation::brute_force_membership(&snap),
            NetcpdIsolationMethod::Spectral => isolation::spectral_membership(&snap, seed),
            NetcpdIsolationMethod::SpectralRefine => isolation::spectral_refine_membership(&snap, seed),
        };
        match result {
            Ok(m) => {
                slice::from_raw_parts_mut(x_out, n).copy_from_slice(&m.x);
                if !objective.is_null() {
                    *objective = m.objective;
                }
                if !eigengap.is_null() {
                    *eigengap = m.eigengap.unwrap_or(f64::NAN);
                }
                NetcpdStatus::Ok
            }
            Err(e @ isolation::IsolationError::Convergence { .. }) => fail(NetcpdStatus::NoConvergence, e.to_string()),
            Err(e) => fail(NetcpdStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// `KL(N(mu1, sigma1²) ‖ N(mu0, sigma0²))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netcpd_kl_gaussian(
    mu0: f64,
    sigma0: f64,
    mu1: f64,
    sigma1: f64,
    out: *mut f64,
) -> NetcpdStatus {
    guard(|| {
        if out.is_null() {
            return fail(NetcpdStatus::NullPointer, "out is NULL");
        }
        match bounds::kl_gaussian(mu0, sigma0, mu1, sigma1) {
            Ok(v) => {
                *out = v;
                NetcpdStatus::Ok
            }
            Err(e) => fail(NetcpdStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// `ln(gamma) / (cut * kl)`, without the additive O(1) slack.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netcpd_edd_bound(gamma: f64, cut: usize, kl: f64, out: *mut f64) -> NetcpdStatus {
    guard(|| {
        if out.is_null() {
            return fail(NetcpdStatus::NullPointer, "out is NULL");
        }
        match bounds::edd_bound(gamma, cut, kl) {
            Ok(v) => {
                *out = v;
                NetcpdStatus::Ok
            }
            Err(e) => fail(NetcpdStatus::InvalidArgument, e.to_string()),
        }
    })
}

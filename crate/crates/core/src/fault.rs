//! Named crash points compiled into every durability-relevant step.
//!
//! A [`FaultInjector`] is shared by every storage layer of a database. Tests
//! arm one point (optionally at its n-th hit); when execution reaches it the
//! injector either returns [`InjectedCrash`] up the stack or terminates the
//! process, depending on [`CrashMode`]. Every hit is recorded in a trace so a
//! harness can tell which durable steps completed before the crash.

use std::fmt;
use std::sync::{Arc, Mutex};

/// Every registered fault point, in rough execution order.
pub const FAULT_POINTS: &[&str] = &[
    // DFS-backed recovery: page writes and block-buffer flushes.
    "auto_flush_before_append",
    "auto_flush_after_append",
    // DFS-backed recovery: commit.
    "before_commit_marker",
    "commit_flush_after_append",
    "after_commit_marker",
    // DFS-backed recovery: batch post-commit.
    "bpc_before_flag_set",
    "bpc_after_flag_set",
    "bpc_after_collect",
    "bpc_before_remake",
    "bpc_after_remake",
    "bpc_before_truncate",
    "bpc_mid_truncate",
    "bpc_before_flag_clear",
    "bpc_after_flag_clear",
    // DFS-backed recovery: abort and restart.
    "abort_mid_truncate",
    "restart_before_redo",
    "restart_after_redo",
    "restart_mid_rollback",
    // Baseline recovery over a flat page store.
    "spdu_before_log_sync",
    "spdu_after_log_sync",
    "spdu_after_flag_set",
    "spdu_mid_copy",
    "spdu_after_data_sync",
    "spdu_after_flag_clear",
    "spdu_after_log_reset",
    "spdu_restart_after_redo",
];

/// Returns true when `name` is a registered fault point.
pub fn is_registered(name: &str) -> bool {
    FAULT_POINTS.contains(&name)
}

/// What happens when an armed point fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashMode {
    /// Return [`InjectedCrash`] to the caller; the in-process handle is then dropped.
    ReturnError,
    /// Terminate the process immediately with the given exit code.
    ExitProcess(i32),
}

/// Error returned from a fault point that fired in [`CrashMode::ReturnError`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectedCrash {
    pub point: &'static str,
    pub hit: u64,
}

impl fmt::Display for InjectedCrash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "injected crash at `{}` (hit {})", self.point, self.hit)
    }
}

impl std::error::Error for InjectedCrash {}

#[derive(Debug)]
struct Armed {
    point: String,
    nth: u64,
    seen: u64,
}

#[derive(Debug)]
struct State {
    mode: CrashMode,
    armed: Option<Armed>,
    crashed: Option<InjectedCrash>,
    trace: Vec<&'static str>,
}

/// Shared crash-point controller.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    state: Arc<Mutex<State>>,
}

impl Default for FaultInjector {
    fn default() -> Self {
        Self::new(CrashMode::ReturnError)
    }
}

impl FaultInjector {
    pub fn new(mode: CrashMode) -> Self {
        Self {
            state: Arc::new(Mutex::new(State {
                mode,
                armed: None,
                crashed: None,
                trace: Vec::new(),
            })),
        }
    }

    /// Arms `point` to fire on its `nth` hit (1-based). Replaces any armed point
    /// and clears the crashed flag and trace.
    ///
    /// # Panics
    ///
    /// Panics if `point` is not registered or `nth` is zero.
    pub fn arm(&self, point: &str, nth: u64) {
        assert!(is_registered(point), "unregistered fault point `{point}`");
        assert!(nth > 0, "fault hit count is 1-based");
        let mut state = self.state.lock().unwrap();
        state.armed = Some(Armed {
            point: point.to_owned(),
            nth,
            seen: 0,
        });
        state.crashed = None;
        state.trace.clear();
    }

    pub fn disarm(&self) {
        let mut state = self.state.lock().unwrap();
        state.armed = None;
        state.crashed = None;
    }

    /// Points hit since the last [`arm`](Self::arm) or [`clear_trace`](Self::clear_trace),
    /// including the one that fired.
    pub fn trace(&self) -> Vec<&'static str> {
        self.state.lock().unwrap().trace.clone()
    }

    pub fn clear_trace(&self) {
        self.state.lock().unwrap().trace.clear();
    }

    /// How many times `point` appears in the trace.
    pub fn hits(&self, point: &str) -> usize {
        self.state.lock().unwrap().trace.iter().filter(|p| **p == point).count()
    }

    pub fn crashed(&self) -> Option<InjectedCrash> {
        self.state.lock().unwrap().crashed.clone()
    }

    /// The hook itself. Storage code calls this at each named step.
    pub fn point(&self, name: &'static str) -> Result<(), InjectedCrash> {
        debug_assert!(is_registered(name), "unregistered fault point `{name}`");
        let mut state = self.state.lock().unwrap();
        state.trace.push(name);
        // Once crashed, the handle is dead: every later step fails too.
        if let Some(crash) = &state.crashed {
            return Err(crash.clone());
        }
        let fire = match state.armed.as_mut() {
            Some(armed) if armed.point == name => {
                armed.seen += 1;
                armed.seen == armed.nth
            }
            _ => false,
        };
        if !fire {
            return Ok(());
        }
        let crash = InjectedCrash {
            point: name,
            hit: state.armed.as_ref().map_or(0, |a| a.seen),
        };
        match state.mode {
            CrashMode::ExitProcess(code) => {
                drop(state);
                eprintln!("{crash}");
                std::process::exit(code);
            }
            CrashMode::ReturnError => {
                state.armed = None;
                state.crashed = Some(crash.clone());
                Err(crash)
            }
        }
    }
}

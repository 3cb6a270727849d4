//! Worker-pool sizing from `MRC_THREADS`.
//!
//! `MRC_THREADS=0` selects the deterministic single-threaded mode; any other
//! value caps the worker count. Reductions elsewhere in the crate always fold
//! per-item results in input order, so results do not depend on this setting.

use std::sync::OnceLock;

use rayon::{ThreadPool, ThreadPoolBuilder};

pub const ENV_VAR: &str = "MRC_THREADS";

/// Requested worker count; `Some(0)` is single-threaded mode.
pub fn requested_threads() -> Option<usize> {
    std::env::var(ENV_VAR).ok().and_then(|v| v.trim().parse().ok())
}

pub fn is_single_threaded() -> bool {
    matches!(requested_threads(), Some(0) | Some(1))
}

fn pool() -> Option<&'static ThreadPool> {
    static POOL: OnceLock<Option<ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = requested_threads()?;
        ThreadPoolBuilder::new().num_threads(n.max(1)).build().ok()
    })
    .as_ref()
}

/// Runs `f` inside the configured pool (or the global pool when unset).
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match pool() {
        Some(p) => p.install(f),
        None => f(),
    }
}

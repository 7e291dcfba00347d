//! Arithmetic mode switch.
//!
//! Sequential mode is the default and is required for bit-exact
//! reproduction. Parallel mode splits dense matrix products into row
//! blocks; each output element is still computed by one kernel call, but
//! results are only guaranteed equal up to floating-point reassociation.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(false);

/// Environment variable selecting the arithmetic mode.
pub const THREADS_ENV: &str = "NORAD_THREADS";

pub fn set_parallel(on: bool) {
    PARALLEL.store(on, Ordering::Relaxed);
}

pub fn parallel() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Reads `NORAD_THREADS`; a value above 1 enables parallel arithmetic with
/// that many worker threads. Returns the thread count in effect.
pub fn configure_from_env() -> usize {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(1)
        .max(1);
    if threads > 1 {
        // a global pool may already exist when embedded in a test binary
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
        set_parallel(true);
    } else {
        set_parallel(false);
    }
    threads
}

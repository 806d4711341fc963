//! Process-wide parallelism cap.

use crate::error::{invalid, Result};

/// Environment variable capping the worker threads (`0` or unset = one per
/// core).
pub const THREADS_ENV: &str = "OTKD_THREADS";

/// Parses an `OTKD_THREADS` value; `None` and `0` mean automatic.
pub fn parse_thread_count(value: Option<&str>) -> Result<usize> {
    match value.map(str::trim) {
        None | Some("") => Ok(0),
        Some(v) => v
            .parse()
            .map_err(|_| invalid(format!("{THREADS_ENV} must be a nonnegative integer, got `{v}`"))),
    }
}

/// Sizes the global worker pool from `OTKD_THREADS` and returns the number
/// of workers in use. Only the first call in a process can size the pool;
/// later calls report the existing size.
pub fn configure_threads() -> Result<usize> {
    let requested = parse_thread_count(std::env::var(THREADS_ENV).ok().as_deref())?;
    // An error here means the pool already exists, which is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(requested).build_global();
    Ok(rayon::current_num_threads())
}

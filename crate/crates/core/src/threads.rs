//! Worker-pool sizing controlled by `TRAJFLOW_THREADS`.

/// Environment variable capping worker parallelism.
pub const THREADS_ENV: &str = "TRAJFLOW_THREADS";

/// Worker count: `TRAJFLOW_THREADS` when set to a positive integer,
/// otherwise the number of available cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` inside a rayon pool sized by [`thread_count`].
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("falling back to the global pool: {e}");
            f()
        }
    }
}

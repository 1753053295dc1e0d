//! Thread-pool setup shared by the binaries.

/// Environment variable that caps the worker count.
pub const THREADS_ENV: &str = "SCREENDUAL_THREADS";

/// Configure the global rayon pool from `SCREENDUAL_THREADS` if set.
/// Returns the thread count in effect.
pub fn init_from_env() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // a pool may already exist (tests); keep it in that case
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    rayon::current_num_threads()
}

//! Process-wide worker pools, one per requested size, created lazily and reused.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::{ThreadPool, ThreadPoolBuilder};

static POOLS: OnceLock<Mutex<HashMap<usize, Arc<ThreadPool>>>> = OnceLock::new();

/// Returns the shared pool with exactly `threads` workers.
pub fn pool(threads: usize) -> Arc<ThreadPool> {
    let threads = threads.max(1);
    let registry = POOLS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = registry.lock().unwrap_or_else(|e| e.into_inner());
    map.entry(threads)
        .or_insert_with(|| {
            Arc::new(
                ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(move |i| format!("rtgl-{threads}-{i}"))
                    .build()
                    .expect("failed to spawn worker pool"),
            )
        })
        .clone()
}

/// Contiguous static partition of `0..n` into at most `parts` blocks of
/// size `ceil(n / parts)`. Empty blocks are omitted.
pub fn blocks(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let parts = parts.clamp(1, n);
    let size = n.div_ceil(parts);
    (0..n)
        .step_by(size)
        .map(|start| start..(start + size).min(n))
        .collect()
}

//! Kernel parallelism, capped by the `BURSTKIT_THREADS` environment variable.
//!
//! Work is always split into the same fixed chunks regardless of the thread
//! count and partial reductions are combined in chunk order, so results are
//! bit-identical for any cap.

use std::sync::OnceLock;

use rayon::prelude::*;

pub const THREADS_ENV: &str = "BURSTKIT_THREADS";

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Number of kernel threads in use.
pub fn threads() -> usize {
    match pool() {
        Some(p) => p.current_num_threads(),
        None => 1,
    }
}

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let requested = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
            .max(1);
        if requested == 1 {
            return None;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(requested)
            .build()
            .ok()
    })
    .as_ref()
}

/// Runs `f(chunk_index, chunk)` over `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    match pool() {
        Some(p) if data.len() > chunk_len => p.install(|| {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c))
        }),
        _ => data
            .chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c)),
    }
}

/// Maps `0..count` to values, preserving index order in the result.
pub fn map_indices<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match pool() {
        Some(p) if count > 1 => p.install(|| (0..count).into_par_iter().map(&f).collect()),
        _ => (0..count).map(f).collect(),
    }
}

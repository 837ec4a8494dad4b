//! Deterministic fork-join over a slice: items are split into contiguous
//! chunks, one per worker, and results are returned in item order, so a
//! fold over them is independent of the thread count.

use std::num::NonZeroUsize;

pub fn map_indexed<T: Sync, R: Send>(
    threads: usize,
    items: &[T],
    f: impl Fn(usize, &T) -> R + Sync,
) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut results: Vec<Vec<R>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (c, slice) in items.chunks(chunk).enumerate() {
            let f = &f;
            handles.push(scope.spawn(move || {
                slice
                    .iter()
                    .enumerate()
                    .map(|(i, t)| f(c * chunk + i, t))
                    .collect::<Vec<R>>()
            }));
        }
        results = handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect();
    });
    results.into_iter().flatten().collect()
}

/// Resolve the worker count: an explicit flag wins, then the
/// `GHOST_THREADS` environment variable, then 1.
pub fn resolve_threads(flag: Option<usize>) -> usize {
    if let Some(n) = flag {
        return n.max(1);
    }
    if let Ok(value) = std::env::var("GHOST_THREADS") {
        if let Ok(n) = value.parse::<NonZeroUsize>() {
            return n.get();
        }
    }
    1
}

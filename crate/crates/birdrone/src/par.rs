//! Order-preserving fan-out over scoped threads.

use std::thread;

/// Threads requested on the command line, else `BDRN_THREADS`, else 1.
pub fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("BDRN_THREADS").ok().and_then(|v| v.trim().parse().ok())).unwrap_or(1).max(1)
}

/// `f` applied to every index in `0..n`, results in index order.
pub fn map_indexed<R: Send>(n: usize, threads: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

//! Deterministic indexed parallel map.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Apply `f` to every index in `0..n` on up to `jobs` threads.
///
/// Output order is by index, so results are identical for any job count as
/// long as `f(i)` depends only on `i`.
pub fn parallel_map<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1).min(n.max(1));
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                results.lock().expect("parallel_map poisoned")[i] = Some(v);
            });
        }
    });
    results
        .into_inner()
        .expect("parallel_map poisoned")
        .into_iter()
        .map(|v| v.expect("parallel_map missing slot"))
        .collect()
}

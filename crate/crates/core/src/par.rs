//! Data-parallel dispatch with a sequential fallback.
//!
//! Every parallel loop in the crate goes through [`map_range`] or
//! [`map_slice`]. With the `parallel` feature enabled these run on the rayon
//! pool; without it (or inside [`sequential`]) they run on the calling thread.
//! Output order always matches input order, so reductions performed by the
//! caller over the returned vectors are bitwise deterministic in both modes.

use std::cell::Cell;

/// Execution strategy for data-parallel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// The strategy that loops started on this thread will use.
pub fn current() -> Exec {
    if cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(Cell::get) {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// Runs `f` with every loop started from this thread forced sequential.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    with_exec(Exec::Sequential, f)
}

/// Runs `f` under the given strategy. `Parallel` degrades to sequential when
/// the crate is built without the `parallel` feature.
pub fn with_exec<R>(exec: Exec, f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(exec == Exec::Sequential));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match current() {
        Exec::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        Exec::Parallel => (0..n).map(f).collect(),
    }
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(items.len(), |i| f(&items[i]))
}

/// Splits `0..n` into contiguous chunks of at most `chunk` items and maps each
/// chunk range. Useful for batched kernels where per-item dispatch is too fine.
pub fn map_chunks<R, F>(n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    let count = n.div_ceil(chunk);
    map_range(count, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(n))
    })
}

//! Data-parallel map over independent work items.
//!
//! Replications, folds and resamples are embarrassingly parallel and
//! individually deterministic, so results are identical for any worker
//! count: outputs are collected in index order and any randomness is
//! derived per item. With the `parallel` feature disabled everything
//! runs on the calling thread.

/// Sequential reference path, always available (also used by benches as
/// the baseline).
pub fn map_indexed_seq<T, F>(count: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(f).collect()
}

/// Maps `f` over `0..count`, in parallel when the `parallel` feature is
/// enabled. `workers` caps the pool size; `None` or `Some(0)` uses the
/// rayon default, `Some(1)` forces the sequential path.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(count: usize, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    use rayon::prelude::*;
    match workers {
        Some(1) => map_indexed_seq(count, f),
        Some(w) if w > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .expect("failed to build worker pool");
            pool.install(|| (0..count).into_par_iter().map(f).collect())
        }
        _ => (0..count).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(count: usize, _workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    map_indexed_seq(count, f)
}

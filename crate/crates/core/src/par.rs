//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature the helpers dispatch to rayon; without
//! it they run plain loops in the same order. Both paths visit items in index
//! order and (for folds) combine per-chunk partials in chunk-index order, so
//! results are bit-identical regardless of feature flags or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Caps the worker pool at `n` threads for the rest of the process. Must run
/// before the first parallel call; later calls fail. A no-op without the
/// `parallel` feature. Results are bit-identical at any thread count; capping
/// only trades speed for a bounded footprint.
#[cfg(feature = "parallel")]
pub fn set_threads(n: usize) -> std::result::Result<(), String> {
    if n == 0 {
        return Err("thread count must be >= 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// See the `parallel`-feature version; sequential builds accept any positive
/// count and ignore it.
#[cfg(not(feature = "parallel"))]
pub fn set_threads(n: usize) -> std::result::Result<(), String> {
    if n == 0 {
        return Err("thread count must be >= 1".into());
    }
    Ok(())
}

/// Applies `f` to `0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference version of [`map_indexed`], available in every build.
/// Benchmarks compare this against the feature-dispatched path.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Splits `0..n` into chunks of at most `chunk` items, maps each chunk to a
/// partial result (possibly in parallel), then folds the partials in
/// chunk-index order. The fixed chunk boundaries make the fold order, and
/// hence the floating-point result, independent of thread count.
pub fn fold_chunks<A, F, G>(n: usize, chunk: usize, f: F, mut combine: G)
where
    A: Send,
    F: Fn(std::ops::Range<usize>) -> A + Sync + Send,
    G: FnMut(A),
{
    assert!(chunk > 0, "chunk size must be positive");
    let n_chunks = n.div_ceil(chunk);
    let partials = map_indexed(n_chunks, |c| {
        let lo = c * chunk;
        let hi = usize::min(lo + chunk, n);
        f(lo..hi)
    });
    for p in partials {
        combine(p);
    }
}

/// Sequential reference version of [`fold_chunks`].
pub fn fold_chunks_seq<A, F, G>(n: usize, chunk: usize, f: F, mut combine: G)
where
    F: Fn(std::ops::Range<usize>) -> A,
    G: FnMut(A),
{
    assert!(chunk > 0, "chunk size must be positive");
    let n_chunks = n.div_ceil(chunk);
    for c in 0..n_chunks {
        let lo = c * chunk;
        let hi = usize::min(lo + chunk, n);
        combine(f(lo..hi));
    }
}

//! Data-parallel helpers with a sequential fallback. The `parallel` feature
//! (on by default) routes through rayon; without it the same entry points
//! run single-threaded. Callers must pass merge operations whose result does
//! not depend on grouping, so both routes produce identical output.

/// Maps `f` over `0..n` and folds the results with `merge`, starting from
/// `identity`.
pub fn map_reduce_indexed<T, F, I, M>(n: u64, f: F, identity: I, merge: M) -> T
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
    I: Fn() -> T + Sync + Send,
    M: Fn(T, T) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(f)
            .reduce(identity, merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).fold(identity(), merge)
    }
}

/// Maps `f` over `0..n`, preserving index order in the output. Use this
/// (with a sequential fold of the result) when the downstream reduction is
/// not reorder-safe, e.g. float accumulation.
pub fn map_collect_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

//! Data-parallel map over indexed work items.
//!
//! With the `parallel` feature (default) work is spread over the current
//! rayon pool; without it everything runs on the calling thread. Output
//! order always follows the index, so reductions done by the caller in
//! index order are bit-identical either way.

/// Maps `f` over `0..n` on the calling thread.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Runs `op` with at most `threads` workers. `None` uses the global pool.
#[cfg(feature = "parallel")]
pub fn with_threads<R, OP>(threads: Option<usize>, op: OP) -> R
where
    R: Send,
    OP: FnOnce() -> R + Send,
{
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(op),
            Err(_) => op(),
        },
        _ => op(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R, OP>(_threads: Option<usize>, op: OP) -> R
where
    R: Send,
    OP: FnOnce() -> R + Send,
{
    op()
}

//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in index order, so switching between
//! [`Exec::Sequential`] and [`Exec::Parallel`] never changes output bytes.
//! Without the `parallel` feature both variants run sequentially.

use std::ops::Range;

use crate::error::{Error, Result};

/// Environment variable capping worker threads (0 or unset = automatic).
pub const THREADS_ENV: &str = "RRID_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// `(0..n).map(f)` collected in order.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Splits `0..n` into contiguous chunks of at most `chunk` indices, runs `f`
/// on each and concatenates the per-chunk outputs in order.
pub fn map_chunks<T, F>(exec: Exec, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> Vec<T> + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    map_range(exec, n_chunks, |c| f(c * chunk..((c + 1) * chunk).min(n)))
        .into_iter()
        .flatten()
        .collect()
}

/// Reads [`THREADS_ENV`] and sizes the global worker pool accordingly.
///
/// Returns the requested thread count (0 = automatic). Calling it more than
/// once is harmless; only the first pool configuration takes effect.
pub fn init_threads_from_env() -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a non-negative integer")))?,
        _ => 0,
    };
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_map_preserves_order() {
        let seq = map_chunks(Exec::Sequential, 103, 10, |r| r.map(|i| i * i).collect());
        let par = map_chunks(Exec::Parallel, 103, 10, |r| r.map(|i| i * i).collect());
        assert_eq!(seq, par);
        assert_eq!(seq.len(), 103);
        assert_eq!(seq[102], 102 * 102);
    }

    #[test]
    fn empty_range() {
        let out: Vec<usize> = map_chunks(Exec::Parallel, 0, 4, |r| r.collect());
        assert!(out.is_empty());
    }
}

//! Tiny execution helper: data-parallel loops with a sequential fallback.
//!
//! With the `parallel` feature (default) enabled, `parallel = true` runs the
//! closure on the current rayon pool; `parallel = false` or a build without
//! the feature runs a plain sequential loop. Results are collected in index
//! order either way, so outputs are identical across modes and thread counts.

use crate::error::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn map_indexed<U, F>(len: usize, parallel: bool, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..len).map(f).collect()
}

pub(crate) fn try_map_indexed<U, F>(len: usize, parallel: bool, f: F) -> Result<Vec<U>>
where
    U: Send,
    F: Fn(usize) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..len).map(f).collect()
}

//! Serial / data-parallel execution switch.
//!
//! All parallel paths split work into fixed-size chunks whose results are
//! reduced in chunk order, so both modes produce bit-identical output. With
//! the `parallel` feature disabled, [`ExecMode::Parallel`] runs serially.

use std::ops::Range;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ExecMode {
    #[default]
    Serial,
    Parallel,
}

impl ExecMode {
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs > 1 {
            ExecMode::Parallel
        } else {
            ExecMode::Serial
        }
    }
}

/// Splits `0..n` into consecutive ranges of at most `chunk` items.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|i| i * chunk..((i + 1) * chunk).min(n))
        .collect()
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`] for fallible closures; the first error in item order wins.
pub fn try_map<T, R, E, F>(mode: ExecMode, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(mode, items, f).into_iter().collect()
}

//! Chunked reductions over observation indices.
//!
//! Every reduction splits `0..len` into fixed-size chunks, reduces each chunk
//! sequentially and then folds the per-chunk results in index order. The
//! floating-point result is therefore identical whether the chunks are
//! processed by rayon workers or on the calling thread, which keeps seeded
//! runs bit-reproducible across builds with and without the `parallel`
//! feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const CHUNK: usize = 1024;

/// Below this many indices the parallel path is not worth the fork/join.
const PAR_THRESHOLD: usize = 4 * CHUNK;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    fn use_threads(self, len: usize) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel && len >= PAR_THRESHOLD
    }
}

fn chunk_bounds(len: usize) -> impl Iterator<Item = (usize, usize)> + Clone {
    (0..len.div_ceil(CHUNK)).map(move |c| (c * CHUNK, ((c + 1) * CHUNK).min(len)))
}

/// Deterministic `sum_{i < len} f(i)`.
pub fn sum<F>(len: usize, exec: Execution, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    fold(
        len,
        exec,
        || 0.0,
        |acc, i| *acc += f(i),
        |acc, part| *acc += part,
    )
}

/// Deterministic chunked fold: `init` creates a chunk accumulator, `step`
/// absorbs one index, `merge` combines chunk accumulators left to right.
pub fn fold<T, I, S, M>(len: usize, exec: Execution, init: I, step: S, merge: M) -> T
where
    T: Send,
    I: Fn() -> T + Sync,
    S: Fn(&mut T, usize) + Sync,
    M: Fn(&mut T, T),
{
    let run_chunk = |(lo, hi): (usize, usize)| {
        let mut acc = init();
        for i in lo..hi {
            step(&mut acc, i);
        }
        acc
    };
    let parts: Vec<T> = if exec.use_threads(len) {
        #[cfg(feature = "parallel")]
        {
            chunk_bounds(len)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(run_chunk)
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    } else {
        chunk_bounds(len).map(run_chunk).collect()
    };
    let mut out = init();
    for part in parts {
        merge(&mut out, part);
    }
    out
}

/// Fill `out[i] = f(i)`.
pub fn fill<F>(out: &mut [f64], exec: Execution, f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    if exec.use_threads(out.len()) {
        #[cfg(feature = "parallel")]
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                for (k, v) in chunk.iter_mut().enumerate() {
                    *v = f(c * CHUNK + k);
                }
            });
    } else {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }
}

/// Map independent jobs, in parallel when enabled. Output order matches input.
pub fn map_jobs<J, R, F>(jobs: Vec<J>, exec: Execution, f: F) -> Vec<R>
where
    J: Send,
    R: Send,
    F: Fn(J) -> R + Sync + Send,
{
    if cfg!(feature = "parallel") && exec == Execution::Parallel && jobs.len() > 1 {
        #[cfg(feature = "parallel")]
        {
            return jobs.into_par_iter().map(f).collect();
        }
    }
    jobs.into_iter().map(f).collect()
}

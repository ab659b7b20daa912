//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled, row-independent loops fan out over
//! rayon. Every helper produces bit-identical results in both modes: work is
//! split into fixed-size chunks that do not depend on the thread count, and
//! reductions combine chunk partials in chunk order.

use std::cell::Cell;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per chunk for chunked reductions. Fixed so results never depend on
/// the number of worker threads.
pub const REDUCE_CHUNK_ROWS: usize = 1024;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with parallel dispatch disabled on the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

/// Whether helpers invoked from this thread will use rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|c| c.get())
}

/// Calls `f(row_index, row)` for every `width`-sized row of `out`.
pub fn for_each_row_mut<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Maps `0..n` through `f`, preserving order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Sums per-chunk partial vectors of length `len` in chunk order.
///
/// `partial(start, end, acc)` accumulates rows `start..end` into `acc`.
pub fn chunked_sum<F>(rows: usize, len: usize, partial: F) -> Vec<f64>
where
    F: Fn(usize, usize, &mut [f64]) + Sync + Send,
{
    let n_chunks = rows.div_ceil(REDUCE_CHUNK_ROWS);
    if n_chunks <= 1 {
        let mut acc = vec![0.0; len];
        partial(0, rows, &mut acc);
        return acc;
    }
    let parts = map_indices(n_chunks, |c| {
        let start = c * REDUCE_CHUNK_ROWS;
        let end = (start + REDUCE_CHUNK_ROWS).min(rows);
        let mut acc = vec![0.0; len];
        partial(start, end, &mut acc);
        acc
    });
    let mut total = vec![0.0; len];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

//! Data-parallel helpers used by the scoring and selection kernels.
//!
//! With the `parallel` feature (default) every helper runs on the rayon
//! global pool. Without it they fall back to plain sequential loops that use
//! the same chunk boundaries, so any reduction built on [`chunks`] or
//! [`chunks_mut`] visits partial results in the same order and produces
//! bit-identical output in both builds.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by kernels that reduce over records.
pub const CHUNK: usize = 2048;

/// Whether this build runs kernels on a thread pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Number of worker threads the kernels will use.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Maps every element, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Splits `0..len` into `chunk`-sized ranges and maps each one. Results come
/// back in range order regardless of scheduling.
pub fn chunks<A, F>(len: usize, chunk: usize, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    map_range(n_chunks, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(len))
    })
}

/// Mutable counterpart of [`chunks`]: `f` receives the offset of the chunk
/// and the chunk itself.
pub fn chunks_mut<T, A, F>(data: &mut [T], chunk: usize, f: F) -> Vec<A>
where
    T: Send,
    A: Send,
    F: Fn(usize, &mut [T]) -> A + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .map(|(i, c)| f(i * chunk, c))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk)
            .enumerate()
            .map(|(i, c)| f(i * chunk, c))
            .collect()
    }
}

/// Sorts with a comparator; the comparator must be a total order so the
/// result does not depend on which sort ran.
pub fn sort_by<T, F>(items: &mut [T], cmp: F)
where
    T: Send,
    F: Fn(&T, &T) -> std::cmp::Ordering + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_sort_unstable_by(cmp)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.sort_unstable_by(cmp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_ranges_cover_input() {
        let ranges = chunks(10, 4, |r| r);
        assert_eq!(ranges, vec![0..4, 4..8, 8..10]);
        assert!(chunks(0, 4, |r| r).is_empty());
    }

    #[test]
    fn chunks_mut_passes_offsets() {
        let mut v = vec![0usize; 7];
        let offsets = chunks_mut(&mut v, 3, |off, c| {
            for (i, x) in c.iter_mut().enumerate() {
                *x = off + i;
            }
            off
        });
        assert_eq!(offsets, vec![0, 3, 6]);
        assert_eq!(v, (0..7).collect::<Vec<_>>());
    }
}

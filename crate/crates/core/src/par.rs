//! Data-parallel primitives shared by every batch kernel.
//!
//! With the `parallel` feature the maps run on the rayon pool, otherwise they
//! run sequentially. Both variants return results in index order and all
//! reductions use [`reduce_pairwise`] over that order, so the output of every
//! kernel is independent of the worker count.

use crate::error::Result;

/// Samples handled by one task in batch kernels. Reductions are fixed to
/// this granularity so results do not depend on how rayon splits work.
pub const CHUNK: usize = 256;

#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    seq::map_range(n, f)
}

#[cfg(feature = "parallel")]
pub fn try_map_range<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn try_map_range<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    seq::try_map_range(n, f)
}

/// Maps over `len` items in fixed chunks of [`CHUNK`]; `f` receives the
/// half-open index range of its chunk.
pub fn map_chunks<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunks = len.div_ceil(CHUNK);
    map_range(chunks, |c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
}

pub fn try_map_chunks<T, F>(len: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> Result<T> + Sync + Send,
{
    let chunks = len.div_ceil(CHUNK);
    try_map_range(chunks, |c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
}

/// Balanced binary-tree reduction in index order. `None` for empty input.
pub fn reduce_pairwise<T, F>(mut items: Vec<T>, combine: F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Runs `f` on a dedicated pool of `threads` workers. Without the
/// `parallel` feature the thread count is ignored.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(_threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Sequential implementations, always compiled so benches can compare them
/// against the parallel build.
pub mod seq {
    use crate::error::Result;

    pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..n).map(f).collect()
    }

    pub fn try_map_range<T, F>(n: usize, f: F) -> Result<Vec<T>>
    where
        F: Fn(usize) -> Result<T>,
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_reduction_is_fixed_tree() {
        let v: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let s = reduce_pairwise(v, |a, b| format!("({a}{b})")).unwrap();
        assert_eq!(s, "(((01)(23))4)");
        assert!(reduce_pairwise(Vec::<u8>::new(), |a, _| a).is_none());
    }

    #[test]
    fn chunks_cover_range_in_order() {
        let ranges = map_chunks(CHUNK * 2 + 3, |r| (r.start, r.end));
        assert_eq!(ranges, vec![(0, CHUNK), (CHUNK, 2 * CHUNK), (2 * CHUNK, 2 * CHUNK + 3)]);
        assert!(map_chunks(0, |r| r.len()).is_empty());
    }
}

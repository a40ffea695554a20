//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers fan out over rayon's pool; without
//! it (or after [`set_enabled`]`(false)`) they run the same closures in order.
//! Every helper writes each output element from exactly one closure call, so
//! results are bit-identical regardless of scheduling.

use std::sync::atomic::{AtomicBool, Ordering};

static ENABLED: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Below this many scalar work items a call stays sequential.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 14;

/// Toggle parallel execution at runtime. No effect without the `parallel` feature.
pub fn set_enabled(on: bool) {
    ENABLED.store(on && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn enabled() -> bool {
    ENABLED.load(Ordering::Relaxed)
}

#[cfg(feature = "parallel")]
fn go_parallel(work: usize) -> bool {
    enabled() && work >= MIN_PARALLEL_WORK && pool_threads() > 1
}

#[cfg(feature = "parallel")]
fn pool_threads() -> usize {
    rayon::current_num_threads()
}

/// Calls `f(index, chunk)` for every `chunk_len`-sized chunk of `out`.
/// `work_per_chunk` is an estimate used to skip fan-out for tiny jobs.
pub fn for_each_chunk<T, F>(out: &mut [T], chunk_len: usize, work_per_chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    let n_chunks = out.len().div_ceil(chunk_len);
    #[cfg(feature = "parallel")]
    if go_parallel(n_chunks.saturating_mul(work_per_chunk)) {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = (n_chunks, work_per_chunk);
    out.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, work_per_item: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(n.saturating_mul(work_per_item)) {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = work_per_item;
    (0..n).map(f).collect()
}

/// Order-preserving map over coarse, independent jobs (training runs, samples).
/// Fans out whenever enabled and the pool has more than one thread.
pub fn map_jobs<I, R, F>(items: Vec<I>, f: F) -> Vec<R>
where
    I: Send,
    R: Send,
    F: Fn(I) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if enabled() && pool_threads() > 1 {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_and_maps_preserve_order() {
        let mut v = vec![0usize; 100_000];
        for_each_chunk(&mut v, 10, 10, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v[99_999], 9_999);
        let m = map_range(50_000, 1, |i| i * 2);
        assert!(m.iter().enumerate().all(|(i, &x)| x == 2 * i));
        let j = map_jobs(vec![3, 1, 2], |x| x + 1);
        assert_eq!(j, vec![4, 2, 3]);
    }
}

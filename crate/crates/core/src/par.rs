//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the default entry points fan out over rayon's
//! global pool; without it they run on the calling thread. Both variants are
//! always deterministic: ties resolve to the lowest index.

use std::cmp::Ordering;

fn pick<T>(a: (usize, T, f64), b: (usize, T, f64)) -> (usize, T, f64) {
    match a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)) {
        Ordering::Greater => b,
        _ => a,
    }
}

/// Minimum of `f(i)` over `0..n` ranked by `key`, sequentially.
pub fn min_by_key_seq<T, F, K>(n: usize, f: F, key: K) -> Option<T>
where
    F: Fn(usize) -> T,
    K: Fn(&T) -> f64,
{
    (0..n)
        .map(|i| {
            let v = f(i);
            let k = key(&v);
            (i, v, k)
        })
        .reduce(pick)
        .map(|(_, v, _)| v)
}

#[cfg(feature = "parallel")]
pub fn min_by_key_par<T, F, K>(n: usize, f: F, key: K) -> Option<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    K: Fn(&T) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let v = f(i);
            let k = key(&v);
            (i, v, k)
        })
        .reduce_with(pick)
        .map(|(_, v, _)| v)
}

pub fn min_by_key<T, F, K>(n: usize, f: F, key: K) -> Option<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    K: Fn(&T) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        min_by_key_par(n, f, key)
    }
    #[cfg(not(feature = "parallel"))]
    {
        min_by_key_seq(n, f, key)
    }
}

/// `(0..n).map(f).collect()`, in parallel when enabled. Output order is preserved.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
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

//! Deterministic parallel reductions.
//!
//! Sums are split into fixed-size chunks that do not depend on the number of
//! worker threads; chunk partials are combined left to right, so results are
//! bit-identical for any pool size.

use rayon::prelude::*;

pub const CHUNK: usize = 1024;

/// Sum of `f(i)` for `i in 0..n`.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        })
        .collect();
    partials.iter().fold(0.0, |a, &b| a + b)
}

/// Componentwise sum of vector-valued terms; `f` adds its contribution for
/// index `i` into the accumulator.
pub fn sum_vec<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut acc = vec![0.0; width];
            for i in lo..hi {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; width];
    for p in &partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Maximum of `f(i)`; NaN entries propagate.
pub fn max<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| f(i))
        .reduce(|| f64::NEG_INFINITY, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) })
}

/// Maximum together with the first index attaining it.
pub fn argmax<F>(n: usize, f: F) -> (usize, f64)
where
    F: Fn(usize) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| (i, f(i)))
        .reduce(
            || (usize::MAX, f64::NEG_INFINITY),
            |a, b| {
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        )
}

/// Runs `f` inside a pool with `threads` workers (0 means the global pool).
pub fn with_threads<R: Send, F: FnOnce() -> R + Send>(threads: usize, f: F) -> R {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_are_identical_across_pool_sizes() {
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let a = with_threads(1, || sum(100_003, f));
        let b = with_threads(3, || sum(100_003, f));
        let c = with_threads(8, || sum(100_003, f));
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn argmax_prefers_first() {
        let (i, v) = argmax(10, |i| if i == 3 || i == 7 { 2.0 } else { 0.0 });
        assert_eq!((i, v), (3, 2.0));
    }
}

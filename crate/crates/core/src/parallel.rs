//! Deterministic parallel reduction over trajectory indices.

use rayon::prelude::*;

/// Items per chunk. Chunk boundaries depend only on `n`, never on the
/// thread count, and chunks are merged in index order.
pub const CHUNK: usize = 64;

/// Sums `add(acc, i)` over `i in 0..n`, bit-identical for any worker count.
pub fn chunked_reduce<A, Z, F, M>(n: usize, zero: Z, add: F, merge: M) -> A
where
    A: Send,
    Z: Fn() -> A + Sync,
    F: Fn(&mut A, usize) + Sync,
    M: Fn(&mut A, &A),
{
    let parts: Vec<A> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = zero();
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                add(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut total = zero();
    for part in &parts {
        merge(&mut total, part);
    }
    total
}

/// Mean and standard error of the mean from running sums.
pub fn mean_and_stderr(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_is_thread_count_invariant() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                chunked_reduce(10_007, || 0.0f64, |acc, i| *acc += 1.0 / (1.0 + i as f64).sqrt(), |a, b| *a += b)
            })
        };
        assert_eq!(run(1).to_bits(), run(3).to_bits());
        assert_eq!(run(1).to_bits(), run(8).to_bits());
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_and_stderr(10.0, 20.0, 5), (2.0, 0.0));
        assert_eq!(mean_and_stderr(3.0, 9.0, 1), (3.0, 0.0));
    }
}

//! Data-parallel helpers. With the `parallel` feature (default) work is
//! spread over the rayon pool; without it, or inside [`sequential_scope`],
//! everything runs on the calling thread. Reductions use a fixed chunking
//! independent of the thread count, so results are bit-identical either way.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Chunk length used by [`chunked_sum`].
pub const CHUNK: usize = 256;

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Runs `f` with the parallel path disabled process-wide.
pub fn sequential_scope<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.swap(true, Ordering::SeqCst);
    let r = f();
    FORCE_SEQUENTIAL.store(prev, Ordering::SeqCst);
    r
}

/// Sizes the global pool. Returns false if it was already initialised.
pub fn configure_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            return rayon::current_num_threads();
        }
    }
    1
}

/// `(0..n).map(f).collect()`, possibly in parallel; order is preserved.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

#[derive(Clone)]
struct Acc {
    s: Vec<f64>,
    c: Vec<f64>,
}

impl Acc {
    fn new(n: usize) -> Self {
        Acc { s: vec![0.0; n], c: vec![0.0; n] }
    }

    fn add(&mut self, i: usize, x: f64) {
        let s = self.s[i];
        let t = s + x;
        if s.abs() >= x.abs() {
            self.c[i] += (s - t) + x;
        } else {
            self.c[i] += (x - t) + s;
        }
        self.s[i] = t;
    }

    fn finish(&self) -> Vec<f64> {
        self.s.iter().zip(&self.c).map(|(s, c)| s + c).collect()
    }
}

/// Sums the vector-valued `f(i, out)` over `i in 0..n`. `f` writes its
/// contribution into `out` (zeroed before each call).
pub fn chunked_sum<F>(n: usize, n_out: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = map_indexed(chunks, |c| {
        let mut acc = Acc::new(n_out);
        let mut buf = vec![0.0; n_out];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            buf.iter_mut().for_each(|x| *x = 0.0);
            f(i, &mut buf);
            for (j, &x) in buf.iter().enumerate() {
                acc.add(j, x);
            }
        }
        acc.finish()
    });
    let mut acc = Acc::new(n_out);
    for p in &partial {
        for (j, &x) in p.iter().enumerate() {
            acc.add(j, x);
        }
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_identical_across_paths() {
        let f = |i: usize, out: &mut [f64]| {
            let x = (i as f64 * 0.37).sin();
            out[0] = x;
            out[1] = x * x * 1e-9;
        };
        let a = chunked_sum(10_007, 2, f);
        let b = sequential_scope(|| chunked_sum(10_007, 2, f));
        assert_eq!(a, b);
    }

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}

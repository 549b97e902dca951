//! Deterministic data-parallel helper.
//!
//! Work is split into contiguous index chunks; each chunk writes its own
//! disjoint output slice, so results are bitwise identical to the serial
//! loop no matter how many workers run. The worker count is capped by the
//! `PLASTAFEM_THREADS` environment variable (read once).

use std::sync::OnceLock;

static THREAD_CAP: OnceLock<usize> = OnceLock::new();

/// Worker thread cap: `PLASTAFEM_THREADS` if set to a positive integer,
/// otherwise the machine's available parallelism.
pub fn thread_cap() -> usize {
    *THREAD_CAP.get_or_init(|| {
        if let Ok(v) = std::env::var("PLASTAFEM_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    return n;
                }
            }
        }
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    })
}

/// Number of work items below which parallel dispatch is not worth the
/// thread spawn cost.
const MIN_PARALLEL: usize = 4096;

/// Fills `out[i] = f(i)` for all i, in parallel when the range is large.
pub fn par_fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let n = out.len();
    let workers = thread_cap().min(n.div_ceil(MIN_PARALLEL)).max(1);
    if workers == 1 {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
        return;
    }
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (c, slice) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = c * chunk;
                for (j, slot) in slice.iter_mut().enumerate() {
                    *slot = f(base + j);
                }
            });
        }
    });
}

/// Collects `f(i)` for i in 0..n.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send + Default + Clone,
    F: Fn(usize) -> T + Sync,
{
    let mut out = vec![T::default(); n];
    par_fill(&mut out, f);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_serial_loop() {
        let n = 10_000;
        let par = par_map(n, |i| (i as f64).sqrt().sin());
        let ser: Vec<f64> = (0..n).map(|i| (i as f64).sqrt().sin()).collect();
        assert_eq!(par, ser);
    }

    #[test]
    fn small_inputs_stay_serial() {
        assert_eq!(par_map(3, |i| i * 2), vec![0, 2, 4]);
        let mut empty: Vec<u8> = vec![];
        par_fill(&mut empty, |_| 0);
    }
}

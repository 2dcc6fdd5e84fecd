//! Replica-parallel Monte Carlo driver.
//!
//! Replica `r` always runs on `RngStream::new(seed, r)`, results come back
//! in replica order, and every reduction downstream is a sequential fold
//! over that vector. Statistics are therefore identical for any worker
//! count.

use rayon::prelude::*;

use crate::error::Result;
use crate::rng::RngStream;

/// Runs `job` once per replica in parallel. On failure, the error of the
/// lowest-numbered failing replica is returned.
pub fn run_replicas<T, F>(seed: u64, replicas: u64, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, RngStream) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..replicas)
        .into_par_iter()
        .map(|r| job(r, RngStream::new(seed, r)))
        .collect();
    results.into_iter().collect()
}

/// Independent seed for a sub-experiment, e.g. one `n` of a sweep.
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    use rand::{RngCore, SeedableRng};
    let mut m = rand_xoshiro::SplitMix64::seed_from_u64(seed ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    m.next_u64()
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

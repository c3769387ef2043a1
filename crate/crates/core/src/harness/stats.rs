//! Small statistical helpers shared by the harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `(1/n) Σ |x − x̄|^q`
pub fn centered_abs_moment(xs: &[f64], q: f64) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).abs().powf(q)).sum::<f64>() / xs.len() as f64
}

/// Median of a nonempty slice, averaging the middle pair for even lengths.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Bootstrap standard error of `statistic` over `resamples` resamples.
pub fn bootstrap_se(xs: &[f64], resamples: usize, seed: u64, statistic: impl Fn(&[f64]) -> f64) -> f64 {
    if xs.is_empty() || resamples < 2 {
        return f64::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; xs.len()];
    let stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..xs.len())];
            }
            statistic(&buf)
        })
        .collect();
    let m = mean(&stats);
    (stats.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (resamples as f64 - 1.0)).sqrt()
}

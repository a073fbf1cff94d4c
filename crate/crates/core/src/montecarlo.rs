//! Deterministic seeded sampling and streaming statistics.
//!
//! Every estimator in this crate follows the same discipline: each trial owns
//! an [`RngStream`] keyed by `(master_seed, stream_id)`, trials may execute in
//! any order (or in parallel), and results are reduced in trial-index order.
//! That makes every number downstream of a seed bit-reproducible regardless
//! of the execution schedule.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Concrete generator type produced by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Error, PartialEq)]
pub enum MonteCarloError {
    #[error("observation must be finite, got {0}")]
    NonFiniteObservation(f64),
    #[error("sigma must be finite and nonnegative, got {0}")]
    InvalidSigma(f64),
    #[error("matrix dimensions must be nonzero, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },
}

/// Handle for one independent randomness stream.
///
/// ChaCha is a counter-mode cipher, so separate `stream_id`s select
/// independent keystreams under the same master seed: deriving a per-trial
/// stream is O(1) and safe to do from any thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Stream for a sub-purpose (e.g. per-trial streams under one run).
    pub fn substream(&self, offset: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: self.stream_id.wrapping_add(offset),
        }
    }

    /// Instantiate the generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Uniform draw in [0, 1) with 53 random mantissa bits.
#[inline]
pub fn uniform01(rng: &mut StreamRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Uniform draw in (0, 1]; safe as a logarithm argument.
#[inline]
fn uniform01_open_low(rng: &mut StreamRng) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// One standard normal draw via the Box-Muller transform.
///
/// Exact transform of two uniforms; consumes both even though it returns one
/// value, so single draws stay aligned with the stream regardless of count.
#[inline]
pub fn standard_normal(rng: &mut StreamRng) -> f64 {
    let u1 = uniform01_open_low(rng);
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fill `buf` with independent N(0, sigma^2) samples (Box-Muller pairs).
pub fn fill_gaussian(buf: &mut [f64], sigma: f64, rng: &mut StreamRng) {
    let mut i = 0;
    while i < buf.len() {
        let u1 = uniform01_open_low(rng);
        let u2 = uniform01(rng);
        let radius = sigma * (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        buf[i] = radius * cos;
        if i + 1 < buf.len() {
            buf[i + 1] = radius * sin;
        }
        i += 2;
    }
}

/// Matrix with i.i.d. N(0, sigma^2) entries, deterministic given the stream.
pub fn gaussian_matrix(
    rows: usize,
    cols: usize,
    sigma: f64,
    stream: &RngStream,
) -> Result<Array2<f64>, MonteCarloError> {
    if rows == 0 || cols == 0 {
        return Err(MonteCarloError::EmptyMatrix { rows, cols });
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(MonteCarloError::InvalidSigma(sigma));
    }
    let mut out = Array2::zeros((rows, cols));
    let mut rng = stream.rng();
    fill_gaussian(out.as_slice_mut().expect("fresh array"), sigma, &mut rng);
    Ok(out)
}

/// Streaming mean/variance accumulator (Welford's single-pass update).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Estimate {
    count: u64,
    mean: f64,
    sum_sq_dev: f64,
}

impl Estimate {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fold one observation into the running moments.
    pub fn accumulate(&mut self, observation: f64) -> Result<(), MonteCarloError> {
        if !observation.is_finite() {
            return Err(MonteCarloError::NonFiniteObservation(observation));
        }
        self.count += 1;
        let delta = observation - self.mean;
        self.mean += delta / self.count as f64;
        self.sum_sq_dev += delta * (observation - self.mean);
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Second central moment of the sample in the unbiased convention
    /// (squared-deviation sum over n-1). NaN until two observations exist.
    pub fn second_central_moment(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.sum_sq_dev / (self.count - 1) as f64
    }

    /// Standard error of the mean: sqrt(second_central_moment / count).
    pub fn standard_error(&self) -> f64 {
        (self.second_central_moment() / self.count as f64).sqrt()
    }

    pub fn ci95_halfwidth(&self) -> f64 {
        1.96 * self.standard_error()
    }
}

/// Run `trials` independent computations, one stream index each.
///
/// With the `parallel` feature the trials execute on rayon; the returned
/// vector is always in trial-index order, so any reduction over it is
/// schedule-independent.
#[cfg(feature = "parallel")]
pub fn run_trials<T, F>(trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..trials).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_trials<T, F>(trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    run_trials_sequential(trials, f)
}

/// Sequential twin of [`run_trials`]; used by benches and the no-rayon build.
pub fn run_trials_sequential<T, F>(trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..trials).map(f).collect()
}

/// Estimate the mean of a per-trial statistic, reducing in trial order.
pub fn estimate_trials<F>(trials: u64, f: F) -> Result<Estimate, MonteCarloError>
where
    F: Fn(u64) -> f64 + Sync + Send,
{
    let mut estimate = Estimate::new();
    for observation in run_trials(trials, f) {
        estimate.accumulate(observation)?;
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_observations_have_zero_variance() {
        let mut est = Estimate::new();
        for _ in 0..3 {
            est.accumulate(1.0).unwrap();
        }
        assert_eq!(est.mean(), 1.0);
        assert_eq!(est.second_central_moment(), 0.0);
    }

    #[test]
    fn two_point_sample_matches_hand_computation() {
        let mut est = Estimate::new();
        est.accumulate(0.0).unwrap();
        est.accumulate(2.0).unwrap();
        assert_eq!(est.mean(), 1.0);
        assert_eq!(est.second_central_moment(), 2.0);
        assert_eq!(est.standard_error(), 1.0);
        assert_eq!(est.ci95_halfwidth(), 1.96);
    }

    #[test]
    fn rejects_non_finite_observations() {
        let mut est = Estimate::new();
        assert!(matches!(
            est.accumulate(f64::NAN),
            Err(MonteCarloError::NonFiniteObservation(_))
        ));
        assert_eq!(
            est.accumulate(f64::INFINITY),
            Err(MonteCarloError::NonFiniteObservation(f64::INFINITY))
        );
        assert_eq!(est.count(), 0);
    }

    #[test]
    fn welford_matches_two_pass_reference() {
        let stream = RngStream::new(42, 0);
        let mut rng = stream.rng();
        let mut values = vec![0.0; 10_000];
        fill_gaussian(&mut values, 3.0, &mut rng);
        for v in values.iter_mut() {
            *v += 100.0; // offset stresses cancellation
        }

        let mut est = Estimate::new();
        for &v in &values {
            est.accumulate(v).unwrap();
        }

        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((est.mean() - mean).abs() / mean.abs() < 1e-12);
        assert!((est.second_central_moment() - var).abs() / var < 1e-12);
    }

    #[test]
    fn identical_streams_are_bit_identical() {
        let a = gaussian_matrix(8, 5, 1.0, &RngStream::new(7, 3)).unwrap();
        let b = gaussian_matrix(8, 5, 1.0, &RngStream::new(7, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_streams_differ() {
        let a = gaussian_matrix(8, 5, 1.0, &RngStream::new(7, 0)).unwrap();
        let b = gaussian_matrix(8, 5, 1.0, &RngStream::new(7, 1)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_sigma_gives_zero_matrix() {
        let a = gaussian_matrix(4, 4, 0.0, &RngStream::new(1, 0)).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gaussian_matrix_law_of_large_numbers() {
        let a = gaussian_matrix(1000, 1000, 1.0, &RngStream::new(2024, 0)).unwrap();
        let n = a.len() as f64;
        let mean = a.sum() / n;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / 1000.0, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn gaussian_matrix_validates_arguments() {
        assert!(matches!(
            gaussian_matrix(0, 3, 1.0, &RngStream::new(0, 0)),
            Err(MonteCarloError::EmptyMatrix { .. })
        ));
        assert!(matches!(
            gaussian_matrix(3, 3, f64::NAN, &RngStream::new(0, 0)),
            Err(MonteCarloError::InvalidSigma(_))
        ));
        assert!(matches!(
            gaussian_matrix(3, 3, -1.0, &RngStream::new(0, 0)),
            Err(MonteCarloError::InvalidSigma(_))
        ));
    }

    #[test]
    fn million_standard_gaussians_center_on_zero() {
        let stream = RngStream::new(9, 0);
        let est = estimate_trials(1_000_000, |trial| {
            let mut rng = stream.substream(trial).rng();
            standard_normal(&mut rng)
        })
        .unwrap();
        assert!(est.mean().abs() < 4e-3, "mean {}", est.mean());
        assert!((est.standard_error() - 1e-3).abs() < 1e-4);
    }

    #[test]
    fn parallel_and_sequential_trials_agree() {
        let f = |trial: u64| {
            let mut rng = RngStream::new(11, trial).rng();
            standard_normal(&mut rng)
        };
        assert_eq!(run_trials(257, f), run_trials_sequential(257, f));
    }
}

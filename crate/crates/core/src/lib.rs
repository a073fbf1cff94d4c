//! Numerical laboratory for studying how vocabulary size and network width
//! shift the optimal learning-rate scaling of embedding/projection models.
//!
//! The crate is organized around one experimental pipeline:
//!
//! * [`montecarlo`] — seeded stream RNG, Gaussian sampling, streaming moment
//!   estimates, and deterministic trial execution (parallel or sequential).
//! * [`zipf`] — ranked token-frequency distributions, their summary
//!   statistics, exponent fitting from count data, and boundedness scans.
//! * [`parametrization`] — width-scaling presets (init variance and
//!   learning-rate exponents per parameter role) resolved to concrete
//!   hyperparameters at a given width.
//! * [`model`] — the two-matrix linear model (embedding times projection),
//!   its population loss under a token distribution, exact infinite-batch
//!   gradients, and optimizer steps (sign descent, plain gradient descent,
//!   Adam).
//! * [`feature_learning`] — the one-step decomposition of a token output
//!   update into projection-driven, embedding-driven, and interaction parts,
//!   closed-form magnitude predictions for those parts, and the idealized
//!   sign-product estimators that validate the predictions.
//! * [`sweep`] — the width x learning-rate sweep harness: trains grids of
//!   models, extracts the optimal learning rate per width, and fits its
//!   log-log scaling exponent.
//!
//! Everything downstream of a seed is deterministic: each trial owns an RNG
//! stream derived from `(master_seed, stream_id)`, and reductions happen in
//! trial-index order regardless of the execution schedule. With the default
//! `parallel` feature, trials and sweep cells run on rayon; disabling it
//! selects a sequential fallback with identical output.

pub mod feature_learning;
mod fitting;
mod linalg;
pub mod model;
pub mod montecarlo;
pub mod parametrization;
pub mod sweep;
pub mod zipf;

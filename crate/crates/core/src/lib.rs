//! Payment-gesture authentication pipeline.
//!
//! Smartwatch inertial recordings around a payment tap are preprocessed into
//! fixed windows, summarized into statistical features, scored by
//! discriminative classifiers, and augmented with a generative latent-variable
//! model whose synthetic gestures can stand in for scarce enrolment data.
//!
//! Module map:
//! - [`dataset`]: raw recordings, windowing, filtering, normalization, splits,
//!   and a synthetic corpus simulator.
//! - [`features`]: per-channel statistics and their gradients.
//! - [`distances`]: elastic and pointwise timeseries losses (DTW family, MSE,
//!   feature matching) with gradients where defined.
//! - [`diffcore`]: minimal reverse-mode autodiff (tensors, layers, Adam,
//!   gradient checking, checkpoints).
//! - [`classifiers`]: five differentiable architectures plus a random forest.
//! - [`generative`]: variational encoder/decoder, latent regularizers, latent
//!   sampling strategies, synthetic gesture generation.
//! - [`eval`]: ROC-based metrics and the train-on-synthetic evaluation
//!   harnesses.

pub mod classifiers;
pub mod dataset;
pub mod diffcore;
pub mod distances;
pub mod eval;
pub mod features;
pub mod generative;
pub mod series;

pub use series::TimeSeries;

/// Sensor sampling rate after resampling, in Hz.
pub const SAMPLE_RATE_HZ: f64 = 50.0;
/// Timesteps in one windowed gesture (4 s at 50 Hz).
pub const GESTURE_LEN: usize = 200;
/// Raw sensor channels: accelerometer x/y/z then gyroscope x/y/z.
pub const GESTURE_CHANNELS: usize = 6;

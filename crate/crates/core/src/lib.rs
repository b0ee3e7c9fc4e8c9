//! Simulation of internal white Gaussian noise in small feedforward
//! classifiers.
//!
//! The crate trains a sigmoid/softmax MNIST classifier from scratch, perturbs
//! chosen layers with additive or multiplicative, correlated or uncorrelated
//! noise at inference time, and rewrites trained weights to suppress that
//! noise (neuron pooling and ghost neurons).
//!
//! Module map:
//! - [`math`] and [`rng`]: dense kernels and counter-based Gaussian streams
//! - [`network`]: the model, noise-free inference, weight files
//! - [`noise`]: the noise operator and noisy accuracy
//! - [`training`]: cross-entropy, backprop and Adam
//! - [`mitigation`]: pooling and ghost-neuron surgery
//! - [`mnist`], [`dataset`], [`sweep`]: data loading and experiment sweeps

pub mod dataset;
pub mod error;
pub mod math;
pub mod mitigation;
pub mod mnist;
pub mod network;
pub mod noise;
pub mod rng;
pub mod sweep;
pub mod training;

pub use dataset::{Dataset, Split};
pub use error::{Error, Result};
pub use math::Matrix;
pub use mitigation::{
    cancellation_residual, ghost_transform, pool_transform, GhostVariant, Mitigation, PoolSpec,
    Transform,
};
pub use network::{ActivationKind, ForwardTrace, Layer, Network, NetworkMeta};
pub use noise::{
    apply_noise, noisy_accuracy, noisy_forward, Correlation, NoiseCell, NoiseConfig, NoiseKind,
    NoiseMode, NoiseSource, NoisyAccuracy,
};
pub use rng::RandomStream;
pub use sweep::{min_accuracy_vs_m, run_sweep, SweepResult, SweepRow, SweepSpec};
pub use training::{
    backprop, crossentropy, train, AdamState, GradientSet, TrainConfig, TrainHistory,
};

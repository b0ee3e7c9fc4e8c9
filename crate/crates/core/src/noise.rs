//! The noise operator: white Gaussian perturbations applied to a layer's
//! activations after the nonlinearity.
//!
//! Each source perturbs `y = f(x)` as
//! - additive: `y + √(2D) · ξ`
//! - multiplicative: `y · (1 + √(2D) · ξ)`
//!
//! with one `ξ` shared by the whole layer (correlated) or one per neuron
//! (uncorrelated). When a layer carries both modes, the multiplicative
//! sources act first: `y' = y · (1 + √(2D_M) ξ_M) + √(2D_A) ξ_A`.
//!
//! Every (source, sample, repeat) cell draws from its own stream keyed by
//! `derive_seed(master, [layer, kind, sample, repeat])`. A correlated source
//! uses the stream's first Gaussian; an uncorrelated source gives neuron `i`
//! the stream's Gaussian number `i`. Results therefore do not depend on
//! evaluation order or on how work is split between threads.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::network::{ForwardTrace, Network};
use crate::rng::{derive_seed, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    Correlated,
    Uncorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKind {
    pub mode: NoiseMode,
    pub correlation: Correlation,
}

impl NoiseKind {
    pub const ADDITIVE_CORRELATED: NoiseKind =
        NoiseKind::new(NoiseMode::Additive, Correlation::Correlated);
    pub const ADDITIVE_UNCORRELATED: NoiseKind =
        NoiseKind::new(NoiseMode::Additive, Correlation::Uncorrelated);
    pub const MULTIPLICATIVE_CORRELATED: NoiseKind =
        NoiseKind::new(NoiseMode::Multiplicative, Correlation::Correlated);
    pub const MULTIPLICATIVE_UNCORRELATED: NoiseKind =
        NoiseKind::new(NoiseMode::Multiplicative, Correlation::Uncorrelated);

    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::ADDITIVE_CORRELATED,
        NoiseKind::ADDITIVE_UNCORRELATED,
        NoiseKind::MULTIPLICATIVE_CORRELATED,
        NoiseKind::MULTIPLICATIVE_UNCORRELATED,
    ];

    pub const fn new(mode: NoiseMode, correlation: Correlation) -> Self {
        NoiseKind { mode, correlation }
    }

    /// Stable code mixed into stream keys.
    fn code(self) -> u64 {
        match (self.mode, self.correlation) {
            (NoiseMode::Additive, Correlation::Correlated) => 0,
            (NoiseMode::Additive, Correlation::Uncorrelated) => 1,
            (NoiseMode::Multiplicative, Correlation::Correlated) => 2,
            (NoiseMode::Multiplicative, Correlation::Uncorrelated) => 3,
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            NoiseMode::Additive => "additive",
            NoiseMode::Multiplicative => "multiplicative",
        };
        let corr = match self.correlation {
            Correlation::Correlated => "correlated",
            Correlation::Uncorrelated => "uncorrelated",
        };
        write!(f, "{mode}-{corr}")
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown noise kind {s:?} (expected additive|multiplicative-correlated|uncorrelated)"
                ))
            })
    }
}

/// One noise source bound to layer `layer` (1 = first hidden layer, the last
/// index is the output layer) with intensity `D`, i.e. variance `2D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub kind: NoiseKind,
    pub layer: usize,
    pub intensity: f64,
}

impl NoiseSource {
    pub fn new(kind: NoiseKind, layer: usize, intensity: f64) -> Self {
        NoiseSource {
            kind,
            layer,
            intensity,
        }
    }

    /// Source whose standard deviation `√(2D)` equals `amplitude`.
    pub fn from_amplitude(kind: NoiseKind, layer: usize, amplitude: f64) -> Self {
        NoiseSource::new(kind, layer, amplitude * amplitude / 2.0)
    }

    /// `√(2D)`
    pub fn amplitude(&self) -> f64 {
        (2.0 * self.intensity).sqrt()
    }

    /// Perturbs `y` in place with draws from `stream`.
    pub fn perturb(&self, y: &mut [f64], stream: &mut RandomStream) {
        let sigma = self.amplitude();
        match (self.kind.mode, self.kind.correlation) {
            (NoiseMode::Additive, Correlation::Correlated) => {
                let shift = sigma * stream.next_gaussian();
                y.iter_mut().for_each(|v| *v += shift);
            }
            (NoiseMode::Additive, Correlation::Uncorrelated) => {
                y.iter_mut()
                    .for_each(|v| *v += sigma * stream.next_gaussian());
            }
            (NoiseMode::Multiplicative, Correlation::Correlated) => {
                let gain = 1.0 + sigma * stream.next_gaussian();
                y.iter_mut().for_each(|v| *v *= gain);
            }
            (NoiseMode::Multiplicative, Correlation::Uncorrelated) => {
                y.iter_mut()
                    .for_each(|v| *v *= 1.0 + sigma * stream.next_gaussian());
            }
        }
    }

    fn stream(&self, cell: NoiseCell) -> RandomStream {
        RandomStream::new(derive_seed(
            cell.seed,
            &[
                self.layer as u64,
                self.kind.code(),
                cell.sample,
                cell.repeat,
            ],
        ))
    }
}

/// Identifies one noise realization: master seed, sample index and repeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseCell {
    pub seed: u64,
    pub sample: u64,
    pub repeat: u64,
}

/// Applies `sources` (all bound to the layer that produced `y`) to `y`:
/// multiplicative sources first, then additive ones. Zero-intensity sources
/// are skipped, so an all-zero configuration leaves `y` untouched.
pub fn apply_noise(y: &mut [f64], sources: &[NoiseSource], cell: NoiseCell) {
    for mode in [NoiseMode::Multiplicative, NoiseMode::Additive] {
        for source in sources.iter().filter(|s| s.kind.mode == mode) {
            if source.intensity == 0.0 {
                continue;
            }
            source.perturb(y, &mut source.stream(cell));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sources: Vec<NoiseSource>,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(seed: u64) -> Self {
        NoiseConfig {
            sources: Vec::new(),
            seed,
        }
    }

    pub fn single(source: NoiseSource, seed: u64) -> Self {
        NoiseConfig {
            sources: vec![source],
            seed,
        }
    }

    pub fn with(mut self, source: NoiseSource) -> Self {
        self.sources.push(source);
        self
    }

    /// Checks intensities, layer indices and (kind, layer) uniqueness against
    /// `net`.
    pub fn validate(&self, net: &Network) -> Result<()> {
        let layers = net.layers().len();
        for (i, s) in self.sources.iter().enumerate() {
            if !(s.intensity >= 0.0 && s.intensity.is_finite()) {
                return Err(Error::Config(format!(
                    "noise source {i}: intensity {} must be finite and non-negative",
                    s.intensity
                )));
            }
            if s.layer == 0 || s.layer > layers {
                return Err(Error::Config(format!(
                    "noise source {i}: layer {} outside 1..={layers}",
                    s.layer
                )));
            }
            if self.sources[..i]
                .iter()
                .any(|o| o.kind == s.kind && o.layer == s.layer)
            {
                return Err(Error::Config(format!(
                    "noise source {i}: duplicate {} source on layer {}",
                    s.kind, s.layer
                )));
            }
        }
        Ok(())
    }

    fn by_layer(&self, layers: usize) -> Vec<Vec<NoiseSource>> {
        let mut out = vec![Vec::new(); layers + 1];
        for s in &self.sources {
            out[s.layer].push(*s);
        }
        out
    }
}

/// Forward pass with the configured noise applied after each layer's
/// activation (after softmax on the output layer, without renormalizing).
pub fn noisy_forward(
    net: &Network,
    input: &[f64],
    cfg: &NoiseConfig,
    sample: u64,
    repeat: u64,
) -> Result<ForwardTrace> {
    cfg.validate(net)?;
    noisy_forward_unchecked(
        net,
        input,
        &cfg.by_layer(net.layers().len()),
        NoiseCell {
            seed: cfg.seed,
            sample,
            repeat,
        },
    )
}

fn noisy_forward_unchecked(
    net: &Network,
    input: &[f64],
    by_layer: &[Vec<NoiseSource>],
    cell: NoiseCell,
) -> Result<ForwardTrace> {
    net.forward_with(input, |n, y| {
        let sources = &by_layer[n];
        if !sources.is_empty() {
            apply_noise(y, sources, cell);
        }
    })
}

/// Mean accuracy over independent noise realizations of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyAccuracy {
    pub mean: f64,
    /// Standard error of the mean over repeats (0 for a single repeat).
    pub stderr: f64,
    pub per_repeat: Vec<f64>,
}

impl NoisyAccuracy {
    /// Builds the summary from per-repeat correct counts out of `n` samples.
    /// The mean is `Σ correct / (repeats · n)`, so identical repeats give a
    /// mean bit-equal to each repeat's accuracy.
    pub fn from_counts(correct: &[usize], n: usize) -> Self {
        let per_repeat: Vec<f64> = correct.iter().map(|&c| c as f64 / n as f64).collect();
        let total: usize = correct.iter().sum();
        let mean = total as f64 / (correct.len() * n) as f64;
        let stderr = if per_repeat.len() < 2 {
            0.0
        } else {
            let r = per_repeat.len() as f64;
            let var = per_repeat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        };
        NoisyAccuracy {
            mean,
            stderr,
            per_repeat,
        }
    }
}

/// Mean and standard error of the mean. Summation runs in slice order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Predicted class for every sample under realization `repeat`.
pub fn noisy_predictions(
    net: &Network,
    data: &Dataset,
    cfg: &NoiseConfig,
    repeat: u64,
) -> Result<Vec<usize>> {
    cfg.validate(net)?;
    let by_layer = cfg.by_layer(net.layers().len());
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let cell = NoiseCell {
                seed: cfg.seed,
                sample: i as u64,
                repeat,
            };
            noisy_forward_unchecked(net, data.input(i), &by_layer, cell).map(|t| t.predict())
        })
        .collect()
}

/// Accuracy averaged over `repeats` realizations of the full dataset.
pub fn noisy_accuracy(
    net: &Network,
    data: &Dataset,
    cfg: &NoiseConfig,
    repeats: usize,
) -> Result<NoisyAccuracy> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let predictions = noisy_predictions(net, data, cfg, r as u64)?;
        let correct = predictions
            .iter()
            .zip(data.labels())
            .filter(|(p, &l)| **p == l as usize)
            .count();
        counts.push(correct);
    }
    Ok(NoisyAccuracy::from_counts(&counts, data.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;
    use crate::network::{ActivationKind, Layer};

    fn random_net(widths: &[usize], seed: u64) -> Network {
        let mut rng = RandomStream::new(seed);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Layer::new(
                    Matrix::from_fn(w[0], w[1], |_, _| rng.next_gaussian()),
                    (0..w[1]).map(|_| rng.next_gaussian()).collect(),
                    if i == last {
                        ActivationKind::Softmax
                    } else {
                        ActivationKind::Sigmoid
                    },
                )
                .unwrap()
            })
            .collect();
        Network::new(layers).unwrap()
    }

    fn cell(sample: u64) -> NoiseCell {
        NoiseCell {
            seed: 99,
            sample,
            repeat: 0,
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in NoiseKind::ALL {
            assert_eq!(k.to_string().parse::<NoiseKind>().unwrap(), k);
        }
        assert!("additive".parse::<NoiseKind>().is_err());
    }

    #[test]
    fn amplitude_and_intensity() {
        let s = NoiseSource::from_amplitude(NoiseKind::ADDITIVE_CORRELATED, 1, 0.5);
        assert_eq!(s.intensity, 0.125);
        assert_eq!(s.amplitude(), 0.5);
    }

    #[test]
    fn zero_intensity_is_identity() {
        let y = vec![0.1, 0.7, 0.3];
        let sources: Vec<NoiseSource> = NoiseKind::ALL
            .iter()
            .map(|&k| NoiseSource::new(k, 1, 0.0))
            .collect();
        let mut z = y.clone();
        apply_noise(&mut z, &sources, cell(0));
        assert_eq!(z, y);
    }

    #[test]
    fn correlated_additive_shift_is_shared() {
        let y = vec![0.1, 0.7, 0.3, 0.9];
        let src = NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 1, 0.3);
        for s in 0..50 {
            let mut z = y.clone();
            apply_noise(&mut z, &[src], cell(s));
            let d0 = z[0] - y[0];
            assert!(d0 != 0.0);
            for i in 1..y.len() {
                assert!((z[i] - y[i] - d0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn correlated_multiplicative_gain_is_shared() {
        let y = vec![0.1, 0.7, 0.3];
        let src = NoiseSource::new(NoiseKind::MULTIPLICATIVE_CORRELATED, 1, 0.3);
        let mut z = y.clone();
        apply_noise(&mut z, &[src], cell(4));
        let g = z[0] / y[0];
        for i in 1..3 {
            assert!((z[i] / y[i] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn uncorrelated_additive_variance() {
        // √(2D) = 0.5, so the perturbation variance is 0.25.
        let src = NoiseSource::new(NoiseKind::ADDITIVE_UNCORRELATED, 1, 0.125);
        let y = vec![0.2, 0.5, 0.8];
        let n = 100_000;
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for s in 0..n {
            let mut z = y.clone();
            apply_noise(&mut z, &[src], cell(s));
            for i in 0..3 {
                let d = z[i] - y[i];
                sums[i] += d;
                sq[i] += d * d;
            }
        }
        for i in 0..3 {
            let mean = sums[i] / n as f64;
            let var = (sq[i] - n as f64 * mean * mean) / (n as f64 - 1.0);
            assert!((var - 0.25).abs() < 0.25 * 0.02, "neuron {i}: {var}");
        }
    }

    fn perturbation_correlations(kind: NoiseKind, draws: u64) -> Vec<f64> {
        let src = NoiseSource::new(kind, 1, 0.02);
        let y = vec![0.4, 0.5, 0.6];
        let mut samples: Vec<[f64; 3]> = Vec::new();
        for s in 0..draws {
            let mut z = y.clone();
            apply_noise(&mut z, &[src], cell(s));
            samples.push([z[0] - y[0], z[1] - y[1], z[2] - y[2]]);
        }
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..3)
            .map(|i| samples.iter().map(|d| d[i]).sum::<f64>() / n)
            .collect();
        let cov = |a: usize, b: usize| {
            samples
                .iter()
                .map(|d| (d[a] - mean[a]) * (d[b] - mean[b]))
                .sum::<f64>()
                / (n - 1.0)
        };
        [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(a, b)| cov(a, b) / (cov(a, a) * cov(b, b)).sqrt())
            .collect()
    }

    #[test]
    fn correlation_structure() {
        for rho in perturbation_correlations(NoiseKind::ADDITIVE_CORRELATED, 10_000) {
            assert!((rho - 1.0).abs() < 1e-9, "{rho}");
        }
        for rho in perturbation_correlations(NoiseKind::ADDITIVE_UNCORRELATED, 10_000) {
            assert!(rho.abs() < 0.02, "{rho}");
        }
    }

    #[test]
    fn combined_modes_multiply_then_add() {
        let mult = NoiseSource::new(NoiseKind::MULTIPLICATIVE_UNCORRELATED, 1, 0.1);
        let add = NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 1, 0.2);
        let y = vec![0.3, 0.6];
        let c = cell(12);

        let mut expected = y.clone();
        mult.perturb(&mut expected, &mut mult.stream(c));
        add.perturb(&mut expected, &mut add.stream(c));

        let mut z = y.clone();
        apply_noise(&mut z, &[add, mult], c);
        assert_eq!(z, expected);
    }

    #[test]
    fn noisy_forward_without_sources_matches_forward() {
        let net = random_net(&[6, 4, 10], 1);
        let x = vec![0.2, 0.0, 1.0, 0.5, 0.5, 0.9];
        let zero = NoiseConfig::new(3)
            .with(NoiseSource::new(NoiseKind::ADDITIVE_UNCORRELATED, 1, 0.0))
            .with(NoiseSource::new(
                NoiseKind::MULTIPLICATIVE_CORRELATED,
                2,
                0.0,
            ));
        assert_eq!(
            noisy_forward(&net, &x, &NoiseConfig::new(3), 0, 0).unwrap(),
            net.forward(&x).unwrap()
        );
        assert_eq!(
            noisy_forward(&net, &x, &zero, 5, 1).unwrap(),
            net.forward(&x).unwrap()
        );
    }

    #[test]
    fn noisy_forward_is_deterministic_per_cell() {
        let net = random_net(&[6, 4, 10], 2);
        let x = vec![0.2; 6];
        let cfg = NoiseConfig::single(
            NoiseSource::new(NoiseKind::ADDITIVE_UNCORRELATED, 1, 0.5),
            17,
        );
        let a = noisy_forward(&net, &x, &cfg, 3, 0).unwrap();
        assert_eq!(a, noisy_forward(&net, &x, &cfg, 3, 0).unwrap());
        assert_ne!(a, noisy_forward(&net, &x, &cfg, 4, 0).unwrap());
        assert_ne!(a, noisy_forward(&net, &x, &cfg, 3, 1).unwrap());
    }

    #[test]
    fn output_correlated_additive_keeps_argmax() {
        let mut rng = RandomStream::new(77);
        for trial in 0..20u64 {
            let net = random_net(&[5, 4, 10], trial);
            let cfg = NoiseConfig::single(
                NoiseSource::from_amplitude(NoiseKind::ADDITIVE_CORRELATED, 2, 1.0),
                trial,
            );
            for s in 0..50u64 {
                let x: Vec<f64> = (0..5).map(|_| rng.next_f64()).collect();
                let clean = net.forward(&x).unwrap();
                let noisy = noisy_forward(&net, &x, &cfg, s, 0).unwrap();
                assert_eq!(noisy.predict(), clean.predict());
                assert_eq!(noisy.preactivations, clean.preactivations);
            }
        }
    }

    #[test]
    fn config_validation() {
        let net = random_net(&[3, 2, 10], 0);
        let neg = NoiseConfig::single(NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 1, -0.1), 0);
        assert!(neg.validate(&net).is_err());
        let layer0 =
            NoiseConfig::single(NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 0, 0.1), 0);
        assert!(layer0.validate(&net).is_err());
        let layer3 =
            NoiseConfig::single(NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 3, 0.1), 0);
        assert!(layer3.validate(&net).is_err());
        let dup = NoiseConfig::new(0)
            .with(NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 1, 0.1))
            .with(NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 1, 0.2));
        assert!(dup.validate(&net).is_err());
        let ok = NoiseConfig::new(0)
            .with(NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 1, 0.1))
            .with(NoiseSource::new(NoiseKind::ADDITIVE_CORRELATED, 2, 0.2))
            .with(NoiseSource::new(
                NoiseKind::MULTIPLICATIVE_CORRELATED,
                1,
                0.2,
            ));
        assert!(ok.validate(&net).is_ok());
        assert!(noisy_forward(&net, &[0.0; 3], &neg, 0, 0).is_err());
    }

    #[test]
    fn zero_noise_accuracy_matches_clean() {
        let net = random_net(&[4, 3, 10], 5);
        let mut rng = RandomStream::new(1);
        let inputs: Vec<f64> = (0..400).map(|_| rng.next_f64()).collect();
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let data = Dataset::new(4, inputs, labels).unwrap();
        let cfg = NoiseConfig::single(
            NoiseSource::new(NoiseKind::MULTIPLICATIVE_UNCORRELATED, 1, 0.0),
            3,
        );
        let acc = noisy_accuracy(&net, &data, &cfg, 5).unwrap();
        assert_eq!(acc.mean, net.accuracy(&data).unwrap());
        assert_eq!(acc.stderr, 0.0);
        assert_eq!(acc.per_repeat.len(), 5);
        assert!(noisy_accuracy(&net, &data, &cfg, 0).is_err());
    }

    #[test]
    fn counts_summary() {
        let acc = NoisyAccuracy::from_counts(&[20; 10], 60);
        assert_eq!(acc.mean, 20.0 / 60.0);
        assert_eq!(acc.stderr, 0.0);
        let acc = NoisyAccuracy::from_counts(&[1, 3], 4);
        assert_eq!(acc.mean, 0.5);
        assert!((acc.stderr - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mean_stderr_known_values() {
        let (m, se) = mean_stderr(&[5.0, 10.0, 12.0, 15.0, 20.0]);
        assert_eq!(m, 12.4);
        assert!((se - 2.5019).abs() < 1e-3);
        assert_eq!(mean_stderr(&[0.3]), (0.3, 0.0));
    }
}

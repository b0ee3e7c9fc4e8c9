//! Noise-free supervised training: softmax + cross-entropy loss, exact
//! backpropagation through sigmoid hidden layers, and Adam.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::{argmax, Matrix};
use crate::network::{ActivationKind, Layer, Network, NetworkMeta, MNIST_CLASSES};
use crate::rng::{derive_seed, RandomStream};

/// Probabilities below this are clamped before taking the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub validation_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle_seed: u64,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            validation_fraction: 0.05,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle_seed: 0,
            hidden: vec![20],
            classes: MNIST_CLASSES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail("validation fraction must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("Adam epsilon must be positive");
        }
        if self.classes < 2 || self.hidden.contains(&0) {
            return fail("layer widths must be positive and classes at least 2");
        }
        Ok(())
    }
}

/// Per-epoch metrics. Loss and training accuracy are running averages over
/// the epoch's batches; validation accuracy is measured after the epoch and
/// is `None` when nothing is held out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<Option<f64>>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// `epoch,train_loss,train_acc,val_acc` with LF line endings; an empty
    /// `val_acc` cell means no validation split.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
        for e in 0..self.epochs() {
            let val = self.val_accuracy[e]
                .map(|v| v.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e + 1,
                self.train_loss[e],
                self.train_accuracy[e],
                val
            );
        }
        out
    }
}

/// Gradients (or Adam moments) shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet {
            weights: net
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.fan_in(), l.fan_out()))
                .collect(),
            biases: net
                .layers()
                .iter()
                .map(|l| vec![0.0; l.fan_out()])
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.weights
            .iter_mut()
            .for_each(|w| w.as_mut_slice().fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// All parameters flattened layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

pub fn crossentropy(probabilities: &[f64], label: usize) -> Result<f64> {
    let p = probabilities.get(label).ok_or(Error::Label {
        label,
        classes: probabilities.len(),
    })?;
    Ok(-p.max(PROBABILITY_FLOOR).ln())
}

/// Gradient of `crossentropy(forward(input), label)` for one sample.
pub fn backprop(net: &Network, input: &[f64], label: usize) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(net);
    accumulate_gradient(net, input, label, &mut grads)?;
    Ok(grads)
}

/// Adds one sample's gradient into `grads`; returns the sample's loss and
/// predicted class.
pub fn accumulate_gradient(
    net: &Network,
    input: &[f64],
    label: usize,
    grads: &mut GradientSet,
) -> Result<(f64, usize)> {
    if label >= net.output_dim() {
        return Err(Error::Label {
            label,
            classes: net.output_dim(),
        });
    }
    let trace = net.forward(input)?;
    let output = trace.output();
    let loss = crossentropy(output, label)?;

    // softmax + cross-entropy: dL/dx = p - onehot
    let mut delta = output.to_vec();
    delta[label] -= 1.0;

    let layers = net.layers();
    for l in (0..layers.len()).rev() {
        let y_prev = if l == 0 {
            input
        } else {
            trace.activations[l - 1].as_slice()
        };
        let gw = &mut grads.weights[l];
        for (i, &yi) in y_prev.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (g, &d) in gw.row_mut(i).iter_mut().zip(&delta) {
                *g += yi * d;
            }
        }
        for (g, &d) in grads.biases[l].iter_mut().zip(&delta) {
            *g += d;
        }
        if l > 0 {
            let w = &layers[l].weights;
            let y = &trace.activations[l - 1];
            delta = (0..w.rows())
                .map(|i| {
                    let back: f64 = w.row(i).iter().zip(&delta).map(|(a, b)| a * b).sum();
                    back * y[i] * (1.0 - y[i])
                })
                .collect();
        }
    }
    Ok((loss, argmax(output)))
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        AdamState {
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `net` from `grads`.
    ///
    /// Fails, leaving `net` unchanged, if the update would make any parameter
    /// non-finite.
    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &GradientSet,
        cfg: &TrainConfig,
    ) -> Result<()> {
        let shapes_match = net.layers().len() == grads.weights.len()
            && net
                .layers()
                .iter()
                .zip(&grads.weights)
                .all(|(l, g)| l.weights.rows() == g.rows() && l.weights.cols() == g.cols());
        if !shapes_match || self.m.weights.len() != grads.weights.len() {
            return Err(Error::shape(
                "adam step",
                format!("gradients shaped like {:?}", net.widths()),
                "different shapes",
            ));
        }
        let mut updated = net.clone();
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..p.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        };
        for (l, layer) in updated.layers_mut().iter_mut().enumerate() {
            update(
                layer.weights.as_mut_slice(),
                grads.weights[l].as_slice(),
                self.m.weights[l].as_mut_slice(),
                self.v.weights[l].as_mut_slice(),
            );
            update(
                &mut layer.biases,
                &grads.biases[l],
                &mut self.m.biases[l],
                &mut self.v.biases[l],
            );
        }
        if !updated.is_finite() {
            return Err(Error::Config(format!(
                "Adam step {} produced non-finite parameters",
                self.t
            )));
        }
        *net = updated;
        Ok(())
    }
}

/// Network with weights drawn uniformly from `±√(6 / (fan_in + fan_out))` and
/// zero biases.
pub fn glorot_network(widths: &[usize], seed: u64) -> Result<Network> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config(format!("invalid layer widths {widths:?}")));
    }
    let mut rng = RandomStream::new(seed);
    let last = widths.len() - 2;
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let weights = Matrix::from_fn(w[0], w[1], |_, _| rng.uniform(-limit, limit));
            let activation = if i == last {
                ActivationKind::Softmax
            } else {
                ActivationKind::Sigmoid
            };
            Layer::new(weights, vec![0.0; w[1]], activation)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::with_meta(
        layers,
        NetworkMeta {
            seed,
            epochs: 0,
            transform: None,
        },
    )
}

/// Trains a `dim → hidden… → classes` classifier from scratch.
///
/// The last `⌊validation_fraction · N⌋` samples are held out. Each epoch
/// visits the remaining samples in an order shuffled by a stream derived from
/// `(shuffle_seed, epoch)`.
pub fn train(data: &Dataset, cfg: &TrainConfig, init_seed: u64) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l as usize >= cfg.classes) {
        return Err(Error::Label {
            label: bad as usize,
            classes: cfg.classes,
        });
    }
    let (train_set, val_set) = data.split_validation(cfg.validation_fraction)?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut widths = vec![data.dim()];
    widths.extend(&cfg.hidden);
    widths.push(cfg.classes);
    let mut net = glorot_network(&widths, init_seed)?;
    let mut adam = AdamState::new(&net);
    let mut grads = GradientSet::zeros_like(&net);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        RandomStream::new(derive_seed(cfg.shuffle_seed, &[epoch as u64])).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            for &i in batch {
                let (x, label) = train_set.sample(i);
                let (loss, predicted) = accumulate_gradient(&net, x, label as usize, &mut grads)?;
                loss_sum += loss;
                correct += usize::from(predicted == label as usize);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut net, &grads, cfg)?;
        }
        let n = train_set.len() as f64;
        history.train_loss.push(loss_sum / n);
        history.train_accuracy.push(correct as f64 / n);
        history.val_accuracy.push(if val_set.is_empty() {
            None
        } else {
            Some(net.accuracy(&val_set)?)
        });
    }
    net.meta = NetworkMeta {
        seed: init_seed,
        epochs: cfg.epochs,
        transform: None,
    };
    Ok((net, history))
}

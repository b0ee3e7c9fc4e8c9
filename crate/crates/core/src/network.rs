//! Feedforward network model, noise-free inference and the portable weight
//! file.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::{argmax, matvec_acc, sigmoid_in_place, softmax_in_place, Matrix};
use crate::mitigation::Transform;

pub const MNIST_INPUTS: usize = 784;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Softmax,
}

impl ActivationKind {
    pub fn apply(self, x: &mut [f64]) {
        match self {
            ActivationKind::Sigmoid => sigmoid_in_place(x),
            ActivationKind::Softmax => softmax_in_place(x),
        }
    }
}

/// Dense layer: `x = y · W + b`, then the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// fan-in × fan-out
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: ActivationKind,
}

impl Layer {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: ActivationKind) -> Result<Self> {
        if biases.len() != weights.cols() {
            return Err(Error::shape(
                "layer biases",
                format!("{} (weights.cols)", weights.cols()),
                biases.len(),
            ));
        }
        Ok(Layer {
            weights,
            biases,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn preactivation(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.biases.clone();
        matvec_acc(&self.weights, y, &mut x);
        x
    }
}

/// Provenance carried alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub seed: u64,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
}

/// Ordered dense layers. Every layer but the last uses the sigmoid, the last
/// uses softmax, and adjacent layers agree on their shared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    pub meta: NetworkMeta,
}

/// Pre-activations `X^n` and activations `Y^n` of every layer, input excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub preactivations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Final-layer activations.
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn predict(&self) -> usize {
        argmax(self.output())
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        Network::with_meta(layers, NetworkMeta::default())
    }

    pub fn with_meta(layers: Vec<Layer>, meta: NetworkMeta) -> Result<Self> {
        validate_layers(&layers)?;
        Ok(Network { layers, meta })
    }

    /// All-zero network with the given layer widths, e.g. `[784, 20, 10]`.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("a network needs at least two widths".into()));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weights: Matrix::zeros(w[0], w[1]),
                biases: vec![0.0; w[1]],
                activation: if i == last {
                    ActivationKind::Softmax
                } else {
                    ActivationKind::Sigmoid
                },
            })
            .collect();
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Layer widths including the input, e.g. `[784, 20, 10]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    /// Rejects networks that are not 784 → … → 10.
    pub fn ensure_mnist_topology(&self) -> Result<()> {
        if self.input_dim() != MNIST_INPUTS || self.output_dim() != MNIST_CLASSES {
            return Err(Error::shape(
                "MNIST topology",
                format!("{MNIST_INPUTS} inputs and {MNIST_CLASSES} outputs"),
                format!(
                    "{} inputs and {} outputs",
                    self.input_dim(),
                    self.output_dim()
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.len()));
        }
        if let Some((index, &value)) = input
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InputRange { index, value });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.forward_with(input, |_, _| {})
    }

    /// Forward pass calling `after_activation(n, y)` on every layer's output
    /// `Y^n` (`n` counted from 1 for the first non-input layer) before it is
    /// fed to the next layer.
    pub fn forward_with(
        &self,
        input: &[f64],
        mut after_activation: impl FnMut(usize, &mut [f64]),
    ) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut preactivations = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let y_prev = activations.last().map(Vec::as_slice).unwrap_or(input);
            let x = layer.preactivation(y_prev);
            let mut y = x.clone();
            layer.activation.apply(&mut y);
            after_activation(i + 1, &mut y);
            preactivations.push(x);
            activations.push(y);
        }
        Ok(ForwardTrace {
            preactivations,
            activations,
        })
    }

    pub fn predict(&self, input: &[f64]) -> Result<usize> {
        Ok(self.forward(input)?.predict())
    }

    /// Fraction of samples whose prediction equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let correct = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let (x, label) = data.sample(i);
                self.predict(x).map(|p| usize::from(p == label as usize))
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }

    pub fn to_json(&self) -> String {
        let record = FileRecord {
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    weights: l.weights.as_slice().to_vec(),
                    biases: l.biases.clone(),
                    activation: l.activation,
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let mut text = serde_json::to_string(&record).expect("network serializes");
        text.push('\n');
        text
    }

    /// Parses a weight file; `origin` names the source in error messages.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let fail = |message: String| Error::WeightFile {
            path: origin.to_path_buf(),
            message,
        };
        let record: FileRecord = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
        if record.layers.is_empty() {
            return Err(fail("no layers".into()));
        }
        let mut layers = Vec::with_capacity(record.layers.len());
        for (i, l) in record.layers.into_iter().enumerate() {
            let weights = Matrix::from_vec(l.rows, l.cols, l.weights)
                .map_err(|e| fail(format!("layer {i}: {e}")))?;
            let layer = Layer::new(weights, l.biases, l.activation)
                .map_err(|e| fail(format!("layer {i}: {e}")))?;
            if !layer.biases.iter().all(|b| b.is_finite()) {
                return Err(fail(format!("layer {i}: non-finite bias")));
            }
            layers.push(layer);
        }
        Network::with_meta(layers, record.meta).map_err(|e| fail(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::WeightFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Network::from_json(&text, path)
    }
}

fn validate_layers(layers: &[Layer]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("a network needs at least one layer".into()));
    }
    let last = layers.len() - 1;
    for (i, layer) in layers.iter().enumerate() {
        if layer.biases.len() != layer.weights.cols() {
            return Err(Error::shape(
                format!("layer {i} biases"),
                layer.weights.cols(),
                layer.biases.len(),
            ));
        }
        let expected = if i == last {
            ActivationKind::Softmax
        } else {
            ActivationKind::Sigmoid
        };
        if layer.activation != expected {
            return Err(Error::Config(format!(
                "layer {i} uses {:?}, expected {:?}",
                layer.activation, expected
            )));
        }
        if i > 0 && layers[i - 1].fan_out() != layer.fan_in() {
            return Err(Error::shape(
                format!("layer {i} fan-in"),
                layers[i - 1].fan_out(),
                layer.fan_in(),
            ));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: ActivationKind,
}

#[derive(Serialize, Deserialize)]
struct FileRecord {
    layers: Vec<LayerRecord>,
    #[serde(default)]
    meta: NetworkMeta,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    fn random_net(widths: &[usize], rng: &mut RandomStream) -> Network {
        let mut net = Network::zeros(widths).unwrap();
        for layer in net.layers_mut() {
            for w in layer.weights.as_mut_slice() {
                *w = rng.next_gaussian();
            }
            for b in &mut layer.biases {
                *b = rng.next_gaussian();
            }
        }
        net
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Network::zeros(&[784, 20, 10]).unwrap();
        let input = vec![0.3; 784];
        let trace = net.forward(&input).unwrap();
        assert!(trace.activations[0].iter().all(|&y| y == 0.5));
        for &p in trace.output() {
            assert!((p - 0.1).abs() < 1e-15);
        }
        assert_eq!(trace.predict(), 0);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = Network::zeros(&[4, 3, 2]).unwrap();
        assert!(matches!(
            net.forward(&[0.0; 3]).unwrap_err(),
            Error::Shape { .. }
        ));
        assert!(matches!(
            net.forward(&[0.0, 1.2, 0.0, 0.0]).unwrap_err(),
            Error::InputRange { index: 1, .. }
        ));
    }

    #[test]
    fn construction_enforces_invariants() {
        let bad_bias = Layer {
            weights: Matrix::zeros(3, 2),
            biases: vec![0.0; 3],
            activation: ActivationKind::Softmax,
        };
        assert!(Network::new(vec![bad_bias]).is_err());

        let hidden =
            Layer::new(Matrix::zeros(3, 2), vec![0.0; 2], ActivationKind::Sigmoid).unwrap();
        let out = Layer::new(Matrix::zeros(4, 2), vec![0.0; 2], ActivationKind::Softmax).unwrap();
        assert!(Network::new(vec![hidden.clone(), out]).is_err());

        let softmax_hidden =
            Layer::new(Matrix::zeros(3, 2), vec![0.0; 2], ActivationKind::Softmax).unwrap();
        let out = Layer::new(Matrix::zeros(2, 2), vec![0.0; 2], ActivationKind::Softmax).unwrap();
        assert!(Network::new(vec![softmax_hidden, out]).is_err());
    }

    #[test]
    fn outputs_are_distributions_and_deterministic() {
        let mut rng = RandomStream::new(5);
        for _ in 0..20 {
            let net = random_net(&[12, 6, 10], &mut rng);
            let x: Vec<f64> = (0..12).map(|_| rng.next_f64()).collect();
            let a = net.forward(&x).unwrap();
            let b = net.forward(&x).unwrap();
            assert_eq!(a, b);
            assert!((a.output().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.output().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn predict_is_argmax_of_forward() {
        let mut rng = RandomStream::new(6);
        for _ in 0..100 {
            let net = random_net(&[8, 5, 10], &mut rng);
            let x: Vec<f64> = (0..8).map(|_| rng.next_f64()).collect();
            let out = net.forward(&x).unwrap();
            let out = out.output();
            let mut best = 0;
            for i in 1..out.len() {
                if out[i] > out[best] {
                    best = i;
                }
            }
            assert_eq!(net.predict(&x).unwrap(), best);
        }
    }

    #[test]
    fn accuracy_on_constant_label_sets() {
        // The zero network ties everywhere, so it always predicts class 0.
        let net = Network::zeros(&[4, 3, 10]).unwrap();
        let zeros = Dataset::new(4, vec![0.5; 20], vec![0; 5]).unwrap();
        let ones = Dataset::new(4, vec![0.5; 20], vec![1; 5]).unwrap();
        assert_eq!(net.accuracy(&zeros).unwrap(), 1.0);
        assert_eq!(net.accuracy(&ones).unwrap(), 0.0);
        let empty = Dataset::new(4, vec![], vec![]).unwrap();
        assert!(matches!(net.accuracy(&empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = RandomStream::new(8);
        let mut net = random_net(&[7, 5, 3], &mut rng);
        net.layers_mut()[0].weights[(0, 0)] = 0.1 + 0.2;
        net.layers_mut()[0].weights[(0, 1)] = -0.0;
        net.layers_mut()[0].weights[(0, 2)] = 5e-324;
        net.layers_mut()[0].weights[(0, 3)] = f64::MAX;
        net.meta = NetworkMeta {
            seed: u64::MAX,
            epochs: 20,
            transform: None,
        };
        let back = Network::from_json(&net.to_json(), Path::new("mem")).unwrap();
        assert_eq!(back.meta, net.meta);
        for (a, b) in net.layers().iter().zip(back.layers()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.weights.as_slice()), bits(b.weights.as_slice()));
            assert_eq!(bits(&a.biases), bits(&b.biases));
            assert_eq!(a.activation, b.activation);
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = random_net(&[4, 3, 2], &mut RandomStream::new(1));
        net.save(&path).unwrap();
        assert_eq!(Network::load(&path).unwrap(), net);
    }

    #[test]
    fn load_reports_defects() {
        let p = Path::new("bad.json");
        let bias = r#"{"layers":[{"rows":2,"cols":2,"weights":[1,2,3,4],"biases":[0],"activation":"softmax"}]}"#;
        let err = Network::from_json(bias, p).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
        assert!(err.contains("biases"), "{err}");

        let act =
            r#"{"layers":[{"rows":1,"cols":1,"weights":[1],"biases":[0],"activation":"relu"}]}"#;
        let err = Network::from_json(act, p).unwrap_err().to_string();
        assert!(err.contains("relu"), "{err}");
        assert!(err.contains("line 1"), "{err}");

        let net = Network::zeros(&[3, 2, 2]).unwrap().to_json();
        let truncated = &net[..net.len() / 2];
        let err = Network::from_json(truncated, p).unwrap_err();
        assert!(matches!(err, Error::WeightFile { .. }));
        assert!(err.to_string().contains("EOF"), "{err}");
    }

    #[test]
    fn file_layout_matches_schema() {
        let net = Network::zeros(&[2, 1]).unwrap();
        assert_eq!(
            net.to_json(),
            "{\"layers\":[{\"rows\":2,\"cols\":1,\"weights\":[0.0,0.0],\"biases\":[0.0],\"activation\":\"softmax\"}],\"meta\":{\"seed\":0,\"epochs\":0}}\n"
        );
    }
}

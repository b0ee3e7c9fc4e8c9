use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Labelled input vectors stored contiguously, one row of `dim` values per
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<u8>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if inputs.len() != dim * labels.len() {
            return Err(Error::shape(
                "dataset inputs",
                format!(
                    "{} values ({} samples of {dim})",
                    dim * labels.len(),
                    labels.len()
                ),
                inputs.len(),
            ));
        }
        Ok(Dataset {
            dim,
            inputs,
            labels,
            split: None,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn sample(&self, i: usize) -> (&[f64], u8) {
        (self.input(i), self.labels[i])
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dim: self.dim,
            inputs,
            labels,
            split: self.split,
        }
    }

    /// First `n` samples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            dim: self.dim,
            inputs: self.inputs[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }

    /// Holds out the last `⌊fraction · N⌋` samples for validation and returns
    /// `(training, validation)`.
    pub fn split_validation(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "validation fraction {fraction} outside [0, 1)"
            )));
        }
        let held = (fraction * self.len() as f64).floor() as usize;
        let cut = self.len() - held;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        Ok((self.subset(&head), self.subset(&tail)))
    }
}

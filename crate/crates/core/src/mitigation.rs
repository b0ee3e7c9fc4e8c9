//! Post-training weight surgery against hidden-layer noise.
//!
//! Both transforms act on a hidden layer `n` (1-based, must have an outgoing
//! layer): the incoming matrix `W^{n-1}` and the outgoing matrix `W^n` are
//! rewritten, nothing is retrained, and the input network is left untouched.
//!
//! *Pooling* replaces each of the `k` hidden neurons with `m` replicas. The
//! incoming columns and hidden biases are tiled unscaled, so all replicas see
//! the same pre-activation; the outgoing rows are tiled and divided by `m`, so
//! the next layer receives the replica average. Replica `r` of neuron `i`
//! sits at index `r·k + i`.
//!
//! A *ghost neuron* is an extra hidden neuron with an all-zero incoming column.
//! Its outgoing row is `-1` everywhere (variant I) or the negated column sums
//! of the original outgoing matrix (variants II and III), which cancels a
//! noise term shared by the whole layer. Variant III also clamps the ghost's
//! bias to `-B` so its noise-free output `f(-B)` is close to zero instead of
//! `f(0) = 0.5`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid_scalar, Matrix};
use crate::network::{Layer, Network};

pub const DEFAULT_GHOST_BIAS: f64 = 30.0;

/// Largest noise-free ghost output accepted for variant III.
pub const GHOST_III_MAX_OUTPUT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub m: usize,
    pub layer: usize,
}

impl PoolSpec {
    pub fn hidden(m: usize) -> Self {
        PoolSpec { m, layer: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GhostVariant {
    /// Outgoing weights all `-1`.
    I,
    /// Outgoing weights cancel the column sums; ghost bias 0.
    II,
    /// As II, with the ghost bias clamped to `-bias`.
    III { bias: f64 },
}

impl GhostVariant {
    pub fn label(&self) -> &'static str {
        match self {
            GhostVariant::I => "I",
            GhostVariant::II => "II",
            GhostVariant::III { .. } => "III",
        }
    }

    /// Builds a variant from its label; `bias` is only used by III and
    /// defaults to [`DEFAULT_GHOST_BIAS`].
    pub fn parse(label: &str, bias: Option<f64>) -> Result<Self> {
        let variant = match label {
            "I" | "1" => GhostVariant::I,
            "II" | "2" => GhostVariant::II,
            "III" | "3" => GhostVariant::III {
                bias: bias.unwrap_or(DEFAULT_GHOST_BIAS),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown ghost variant {other:?} (expected I, II or III)"
                )))
            }
        };
        variant.validate()?;
        Ok(variant)
    }

    pub fn validate(&self) -> Result<()> {
        if let GhostVariant::III { bias } = *self {
            if !(bias > 0.0 && bias.is_finite() && sigmoid_scalar(-bias) < GHOST_III_MAX_OUTPUT) {
                return Err(Error::Config(format!(
                    "ghost III bias {bias} too small: f(-B) must stay below {GHOST_III_MAX_OUTPUT:e}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for GhostVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GhostVariant::III { bias } => write!(f, "III (B = {bias})"),
            other => f.write_str(other.label()),
        }
    }
}

/// Record of the surgery applied to a network, stored in the weight file's
/// `meta.transform`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    Pool {
        m: usize,
        layer: usize,
    },
    Ghost {
        variant: String,
        #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
        bias: Option<f64>,
        layer: usize,
    },
}

/// Surgery selected for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mitigation {
    Pool(PoolSpec),
    Ghost { variant: GhostVariant, layer: usize },
}

impl Mitigation {
    pub fn apply(&self, net: &Network) -> Result<Network> {
        match *self {
            Mitigation::Pool(spec) => pool_transform(net, spec),
            Mitigation::Ghost { variant, layer } => ghost_transform(net, variant, layer),
        }
    }
}

impl fmt::Display for Mitigation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mitigation::Pool(spec) => write!(f, "pool m={} layer={}", spec.m, spec.layer),
            Mitigation::Ghost { variant, layer } => write!(f, "ghost {variant} layer={layer}"),
        }
    }
}

impl FromStr for GhostVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GhostVariant::parse(s, None)
    }
}

fn hidden_pair(net: &Network, layer: usize) -> Result<(&Layer, &Layer)> {
    let hidden = net.layers().len() - 1;
    if layer == 0 || layer > hidden {
        return Err(Error::Config(format!(
            "layer {layer} is not a hidden layer (expected 1..={hidden})"
        )));
    }
    if let Some(t) = &net.meta.transform {
        return Err(Error::Config(format!(
            "network already carries transform {t:?}"
        )));
    }
    Ok((&net.layers()[layer - 1], &net.layers()[layer]))
}

fn rebuild(
    net: &Network,
    layer: usize,
    incoming: Layer,
    outgoing: Layer,
    transform: Transform,
) -> Result<Network> {
    let mut layers = net.layers().to_vec();
    layers[layer - 1] = incoming;
    layers[layer] = outgoing;
    let mut meta = net.meta.clone();
    meta.transform = Some(transform);
    Network::with_meta(layers, meta)
}

pub fn pool_transform(net: &Network, spec: PoolSpec) -> Result<Network> {
    if spec.m == 0 {
        return Err(Error::Config(
            "pool multiplicity m must be at least 1".into(),
        ));
    }
    let (inc, out) = hidden_pair(net, spec.layer)?;
    let k = inc.fan_out();
    let m = spec.m;
    let scale = m as f64;

    let weights_in = Matrix::from_fn(inc.fan_in(), k * m, |r, c| inc.weights[(r, c % k)]);
    let biases_in = (0..k * m).map(|c| inc.biases[c % k]).collect();
    let weights_out = Matrix::from_fn(k * m, out.fan_out(), |r, c| out.weights[(r % k, c)] / scale);

    rebuild(
        net,
        spec.layer,
        Layer::new(weights_in, biases_in, inc.activation)?,
        Layer::new(weights_out, out.biases.clone(), out.activation)?,
        Transform::Pool {
            m,
            layer: spec.layer,
        },
    )
}

pub fn ghost_transform(net: &Network, variant: GhostVariant, layer: usize) -> Result<Network> {
    variant.validate()?;
    let (inc, out) = hidden_pair(net, layer)?;
    let k = inc.fan_out();

    let weights_in = Matrix::from_fn(inc.fan_in(), k + 1, |r, c| {
        if c < k {
            inc.weights[(r, c)]
        } else {
            0.0
        }
    });
    let mut biases_in = inc.biases.clone();
    biases_in.push(match variant {
        GhostVariant::III { bias } => -bias,
        _ => 0.0,
    });

    let ghost_row: Vec<f64> = match variant {
        GhostVariant::I => vec![-1.0; out.fan_out()],
        GhostVariant::II | GhostVariant::III { .. } => {
            out.weights.column_sums().into_iter().map(|s| -s).collect()
        }
    };
    let weights_out = Matrix::from_fn(k + 1, out.fan_out(), |r, c| {
        if r < k {
            out.weights[(r, c)]
        } else {
            ghost_row[c]
        }
    });

    let bias = match variant {
        GhostVariant::III { bias } => Some(bias),
        _ => None,
    };
    rebuild(
        net,
        layer,
        Layer::new(weights_in, biases_in, inc.activation)?,
        Layer::new(weights_out, out.biases.clone(), out.activation)?,
        Transform::Ghost {
            variant: variant.label().to_string(),
            bias,
            layer,
        },
    )
}

/// Locates a ghost neuron: the layer recorded in `meta.transform`, otherwise
/// the first hidden layer with an all-zero incoming column. Returns
/// `(layer, neuron)`; the last zero column wins within a layer.
pub fn find_ghost(net: &Network) -> Result<(usize, usize)> {
    let zero_column = |layer: &Layer| {
        (0..layer.fan_out())
            .rev()
            .find(|&c| (0..layer.fan_in()).all(|r| layer.weights[(r, c)] == 0.0))
    };
    let hidden = net.layers().len() - 1;
    if let Some(Transform::Ghost { layer, .. }) = &net.meta.transform {
        if (1..=hidden).contains(layer) {
            if let Some(c) = zero_column(&net.layers()[layer - 1]) {
                return Ok((*layer, c));
            }
        }
    }
    (1..=hidden)
        .find_map(|n| zero_column(&net.layers()[n - 1]).map(|c| (n, c)))
        .ok_or_else(|| Error::NoGhost("no hidden neuron has an all-zero incoming column".into()))
}

/// Per output neuron `j` of the layer after the ghost:
/// `Σ_i W_ij + W_gj`, summed over the real neurons `i` then the ghost `g`.
///
/// Noise shared by the whole hidden layer (correlated additive) reaches
/// pre-activation `j` scaled by exactly this factor, so it vanishes iff the
/// residual is zero.
pub fn cancellation_residual(net: &Network) -> Result<Vec<f64>> {
    let (layer, ghost) = find_ghost(net)?;
    let w = &net.layers()[layer].weights;
    let mut residual = vec![0.0; w.cols()];
    for i in (0..w.rows()).filter(|&i| i != ghost) {
        for (r, v) in residual.iter_mut().zip(w.row(i)) {
            *r += v;
        }
    }
    for (r, v) in residual.iter_mut().zip(w.row(ghost)) {
        *r += v;
    }
    Ok(residual)
}

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;

use super::layer::{Activation, DenseLayer};
use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// Stack of dense layers. Inverted dropout is applied to every hidden
/// activation (the output of each layer except the last) in train mode.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    dropout_rate: f64,
    // Bumped on every parameter mutation; caches remember the revision they
    // were produced under.
    revision: u64,
}

/// Activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    revision: u64,
    // inputs[i] is what layer i consumed (after dropout of the previous layer).
    inputs: Vec<Vec<f64>>,
    // outputs[i] is layer i's activated output, before dropout.
    outputs: Vec<Vec<f64>>,
    // masks[i] holds the inverted-dropout scale applied to outputs[i].
    masks: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    /// Flat gradient in canonical parameter order.
    pub params: Vec<f64>,
    /// Gradient wrt the network input.
    pub input: Vec<f64>,
}

impl Mlp {
    /// Build a network with layer widths `sizes` (input first). Hidden layers
    /// use `hidden`, the last layer uses `output`.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Parameter(format!(
                "mlp needs at least two non-zero layer sizes, got {sizes:?}"
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::new(w[0], w[1], act, rng)
            })
            .collect();
        Self::from_layers(layers, dropout_rate)
    }

    pub fn from_layers(layers: Vec<DenseLayer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("mlp needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::InputShape {
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                });
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
            revision: next_revision(),
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable layer access; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.revision = next_revision();
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::outputs))
            .collect()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.write_params(out);
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_params(&mut out);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::InputShape {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in self.layers_mut() {
            let n = layer.num_params();
            layer.read_params(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Forward pass. `rng` is required in train mode when dropout is active.
    pub fn forward(&self, x: &[f64], mode: Mode, mut rng: Option<&mut Rng>) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let drop = mode == Mode::Train && self.dropout_rate > 0.0;
        if drop && rng.is_none() {
            return Err(Error::Parameter("train-mode forward needs an rng".into()));
        }
        let n = self.layers.len();
        let mut cache = MlpCache {
            revision: self.revision,
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&current);
            cache.inputs.push(current);
            if i + 1 < n && drop {
                let rng = rng.as_deref_mut().expect("checked above");
                let mask = dropout_mask(y.len(), self.dropout_rate, rng);
                current = y.iter().zip(&mask).map(|(a, m)| a * m).collect();
                cache.masks.push(Some(mask));
            } else {
                current = y.clone();
                cache.masks.push(None);
            }
            cache.outputs.push(y);
        }
        Ok((current, cache))
    }

    /// Smallest `|z|` over relu pre-activations at `x` in eval mode, or
    /// infinity without relu units. Finite differences are unreliable when
    /// this is comparable to the perturbation.
    pub fn relu_margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut margin = f64::INFINITY;
        let mut current = x.to_vec();
        for layer in &self.layers {
            let z = layer.preactivation(&current);
            if layer.activation() == Activation::Relu {
                margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            }
            current = z.into_iter().map(|v| layer.activation().apply(v)).collect();
        }
        Ok(margin)
    }

    /// Backward pass for upstream gradient `dy` wrt the network output.
    pub fn backward(&self, cache: &MlpCache, dy: &[f64]) -> Result<MlpGrads> {
        if cache.revision != self.revision || cache.inputs.len() != self.layers.len() {
            return Err(Error::Cache(format!(
                "cache revision {} vs network revision {}",
                cache.revision, self.revision
            )));
        }
        if dy.len() != self.output_dim() {
            return Err(Error::InputShape {
                expected: self.output_dim(),
                got: dy.len(),
            });
        }
        let mut params = vec![0.0; self.num_params()];
        let mut upstream = dy.to_vec();
        let mut end = params.len();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let start = end - layer.num_params();
            let dx = layer.backward(
                &cache.inputs[i],
                &cache.outputs[i],
                &upstream,
                &mut params[start..end],
            );
            end = start;
            upstream = match i.checked_sub(1).and_then(|p| cache.masks[p].as_ref()) {
                Some(mask) => dx.iter().zip(mask).map(|(d, m)| d * m).collect(),
                None => dx,
            };
        }
        Ok(MlpGrads {
            params,
            input: upstream,
        })
    }
}

/// Inverted dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

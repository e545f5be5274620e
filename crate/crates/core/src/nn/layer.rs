use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored row-major
/// (`outputs` rows of `inputs` columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn from_parts(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::InputShape {
                expected: inputs * outputs,
                got: weights.len(),
            });
        }
        if bias.len() != outputs {
            return Err(Error::InputShape {
                expected: outputs,
                got: bias.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `W x + b`, before the activation.
    pub fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.preactivation(x);
        z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        z
    }

    /// Backpropagate `dy` (gradient wrt this layer's activated output `y`).
    /// Writes `[dW row-major, db]` into `grad` and returns the gradient wrt `x`.
    pub(crate) fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (dw, db) = grad.split_at_mut(self.weights.len());
        let mut dx = vec![0.0; self.inputs];
        for o in 0..self.outputs {
            let delta = dy[o] * self.activation.derivative_at_output(y[o]);
            db[o] = delta;
            if delta == 0.0 {
                dw[o * self.inputs..(o + 1) * self.inputs].fill(0.0);
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let drow = &mut dw[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                drow[i] = delta * x[i];
                dx[i] += delta * row[i];
            }
        }
        dx
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    pub(crate) fn read_params(&mut self, src: &[f64]) {
        let (w, b) = src.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }
}

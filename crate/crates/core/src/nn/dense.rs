use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};

/// Probabilities produced by a sigmoid head are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softplus,
}

/// Affine layer `z = x W + b` with `W` stored as `(inputs, outputs)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// He-normal weights, zero bias.
    pub fn he<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let sd = (2.0 / inputs.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("finite sd");
        Linear {
            weight: Array2::from_shape_simple_fn((inputs, outputs), || normal.sample(rng)),
            bias: Array1::zeros(outputs),
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Fully connected network with ReLU hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Linear>,
    pub output: OutputActivation,
}

/// Activations retained by [`DenseNet::forward_cached`].
#[derive(Clone, Debug)]
pub struct DenseCache {
    /// Input of every layer (post-ReLU for hidden layers).
    inputs: Vec<Array2<f64>>,
    /// Network output after the output activation.
    pub output: Array2<f64>,
    /// Pre-activation of the last layer.
    logits: Array2<f64>,
}

impl DenseNet {
    /// `sizes = [input, hidden.., output]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Linear::he(w[0], w[1], rng))
            .collect();
        DenseNet { layers, output }
    }

    pub fn from_layers(layers: Vec<Linear>, output: OutputActivation) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].weight.ncols() != w[1].weight.nrows() {
                return Err(Error::shape(w[0].weight.ncols(), w[1].weight.nrows()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::shape(l.weight.ncols(), l.bias.len()));
            }
        }
        Ok(DenseNet { layers, output })
    }

    /// Zeroes the last layer so the network starts as a constant map.
    pub fn zero_last_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input columns", self.input_dim()),
                x.ncols(),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight) + &layer.bias;
            if k < last {
                z.mapv_inplace(relu);
            }
            h = z;
        }
        h.mapv_inplace(|z| activate(self.output, z));
        Ok(h)
    }

    /// Single-row convenience wrapper.
    pub fn forward_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<DenseCache> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let mut logits = Array2::zeros((0, 0));
        for (k, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            inputs.push(h);
            if k < last {
                h = z.mapv(relu);
            } else {
                logits = z;
                h = Array2::zeros((0, 0));
            }
        }
        let output = logits.mapv(|z| activate(self.output, z));
        Ok(DenseCache {
            inputs,
            output,
            logits,
        })
    }

    /// Accumulates parameter gradients into `grads` (layout of [`Params`]) and
    /// returns the gradient with respect to the network input.
    pub fn backward(&self, cache: &DenseCache, grad_out: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        debug_assert_eq!(grads.len(), self.param_count());
        let mut delta = grad_out.clone();
        ndarray::Zip::from(&mut delta)
            .and(&cache.logits)
            .and(&cache.output)
            .for_each(|d, &z, &y| *d *= activation_slope(self.output, z, y));

        let offsets = self.offsets();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.inputs[k];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let off = offsets[k];
            let nw = layer.weight.len();
            for (g, v) in grads[off..off + nw].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            for (g, v) in grads[off + nw..off + nw + gb.len()].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            let mut prev = delta.dot(&layer.weight.t());
            if k > 0 {
                // input of layer k is relu(pre-activation of layer k-1)
                ndarray::Zip::from(&mut prev)
                    .and(input)
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
            }
            delta = prev;
        }
        delta
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.len();
                o
            })
            .collect()
    }
}

impl Params for DenseNet {
    fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::len).sum()
    }

    fn write_params(&self, out: &mut [f64]) {
        let mut i = 0;
        for l in &self.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                out[i] = *v;
                i += 1;
            }
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        let mut i = 0;
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = src[i];
                i += 1;
            }
        }
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    z.max(0.0)
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn activate(kind: OutputActivation, z: f64) -> f64 {
    match kind {
        OutputActivation::Identity => z,
        OutputActivation::Sigmoid => sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS),
        OutputActivation::Softplus => softplus(z),
    }
}

#[inline]
fn activation_slope(kind: OutputActivation, z: f64, y: f64) -> f64 {
    match kind {
        OutputActivation::Identity => 1.0,
        OutputActivation::Sigmoid => {
            let p = sigmoid(z);
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                0.0
            } else {
                y * (1.0 - y)
            }
        }
        OutputActivation::Softplus => sigmoid(z),
    }
}

//! Dense layers, activations, mean-squared-error backpropagation and ADAM.
//!
//! Batches are row-major `batch × width` slices. Weight matrices are
//! `outputs × inputs`, row-major, so a layer computes `Z = X·Wᵀ + b`.
//! The kernel is generic over [`Scalar`]; models use `f32`, gradient
//! checks use `f64`.

mod adam;
mod scalar;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use scalar::Scalar;

use crate::{Error, Result};

/// Negative-side slope of the leaky ReLU.
pub const LRELU_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    #[serde(rename = "lrelu")]
    LeakyRelu,
    Linear,
}

impl Activation {
    /// Applies the activation. Sigmoid output is kept strictly inside
    /// `(0, 1)` even where the exact value would round to an endpoint.
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => {
                let s = if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                };
                s.max(T::min_positive_value()).min(T::one() - T::epsilon() / T::from_f64(2.0))
            }
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::from_f64(LRELU_ALPHA)
                }
            }
            Activation::Linear => x,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    /// Subgradients at zero take the positive-side slope.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Sigmoid => a * (T::one() - a),
            Activation::Relu => {
                if z >= T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if z >= T::zero() {
                    T::one()
                } else {
                    T::from_f64(LRELU_ALPHA)
                }
            }
            Activation::Linear => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "lrelu",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "lrelu" | "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

/// `y = f(Wx + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Scalar = f32> {
    inputs: usize,
    outputs: usize,
    weights: Vec<T>,
    bias: Vec<T>,
    activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            activation,
        }
    }

    /// Uniform Glorot initialization, `±sqrt(6 / (in + out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| T::from_f64(rng.random_range(-limit..limit)))
            .collect();
        Self { inputs, outputs, weights, bias: vec![T::zero(); outputs], activation }
    }

    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Shape(format!(
                "{inputs}->{outputs} layer needs {} weights and {outputs} biases, got {} and {}",
                inputs * outputs,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("layer parameters must be finite".into()));
        }
        Ok(Self { inputs, outputs, weights, bias, activation })
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

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Writes pre-activations into `z` and activations into `a`.
    fn forward_into(&self, x: &[T], batch: usize, z: &mut [T], a: &mut [T]) {
        for row in z.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        T::gemm_nt(batch, self.inputs, self.outputs, x, &self.weights, T::one(), z);
        for (a, &z) in a.iter_mut().zip(z.iter()) {
            *a = self.activation.apply(z);
        }
    }

    fn infer_into(&self, x: &[T], batch: usize, out: &mut [T]) {
        for row in out.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        T::gemm_nt(batch, self.inputs, self.outputs, x, &self.weights, T::one(), out);
        for v in out.iter_mut() {
            *v = self.activation.apply(*v);
        }
    }
}

/// A plain stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar = f32> {
    layers: Vec<DenseLayer<T>>,
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    batch: usize,
    input: Vec<T>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }

    /// Pre-activations of every layer, in order.
    pub fn pre_activations(&self) -> &[Vec<T>] {
        &self.pre
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Per-parameter gradients in the order `W0, b0, W1, b1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar>(pub Vec<Vec<T>>);

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer with {} outputs feeds a layer with {} inputs",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn max_width(&self) -> usize {
        self.layers.iter().map(|l| l.outputs.max(l.inputs)).max().unwrap_or(0)
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Result<ForwardCache<T>> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} values, expected {batch} x {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = vec![T::zero(); batch * layer.outputs];
            let mut a = vec![T::zero(); batch * layer.outputs];
            let input = post.last().map(Vec::as_slice).unwrap_or(x);
            layer.forward_into(input, batch, &mut z, &mut a);
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache { batch, input: x.to_vec(), pre, post })
    }

    /// Backpropagates `d_output` (gradient of the loss with respect to the
    /// network output). Returns parameter gradients and, when requested,
    /// the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache<T>, d_output: Vec<T>, want_input_grad: bool) -> (Gradients<T>, Option<Vec<T>>) {
        let batch = cache.batch;
        let mut grads = vec![Vec::new(); 2 * self.layers.len()];
        let mut delta = d_output;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for ((d, &z), &a) in delta.iter_mut().zip(&cache.pre[i]).zip(&cache.post[i]) {
                *d *= layer.activation.derivative(z, a);
            }
            let input = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let mut dw = vec![T::zero(); layer.outputs * layer.inputs];
            T::gemm_tn(layer.outputs, batch, layer.inputs, &delta, input, T::zero(), &mut dw);
            let mut db = vec![T::zero(); layer.outputs];
            for row in delta.chunks_exact(layer.outputs) {
                for (b, &d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
            grads[2 * i] = dw;
            grads[2 * i + 1] = db;
            if i > 0 || want_input_grad {
                let mut dx = vec![T::zero(); batch * layer.inputs];
                T::gemm_nn(batch, layer.outputs, layer.inputs, &delta, &layer.weights, T::zero(), &mut dx);
                delta = dx;
            } else {
                delta = Vec::new();
            }
        }
        (Gradients(grads), want_input_grad.then_some(delta))
    }

    /// Adds `2 λ W` to every weight gradient; biases are not penalized.
    pub fn add_l2_gradient(&self, grads: &mut Gradients<T>, l2: f64) {
        if l2 == 0.0 {
            return;
        }
        let k = T::from_f64(2.0 * l2);
        for (i, layer) in self.layers.iter().enumerate() {
            for (g, &w) in grads.0[2 * i].iter_mut().zip(&layer.weights) {
                *g += k * w;
            }
        }
    }

    /// `Σ ‖W‖²` over all layers, accumulated in f64.
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| {
                let w = w.to_f64().unwrap_or(f64::NAN);
                w * w
            })
            .sum()
    }

    /// MSE + L2 loss and its exact gradients for one batch.
    pub fn loss_and_gradients(&self, x: &[T], target: &[T], batch: usize, l2: f64) -> Result<(LossValue, Gradients<T>)> {
        let cache = self.forward(x, batch)?;
        let (mse, d_out) = mse_loss(cache.output(), target)?;
        let (mut grads, _) = self.backward(&cache, d_out, false);
        self.add_l2_gradient(&mut grads, l2);
        let penalty = l2 * self.weight_norm_sq();
        Ok((LossValue { mse, total: mse + penalty }, grads))
    }

    /// Mutable views of every parameter in gradient order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Allocation-free inference through caller-owned ping-pong buffers;
    /// returns the output rows.
    pub fn infer<'s>(&self, x: &[T], batch: usize, scratch: &'s mut InferScratch<T>) -> &'s [T] {
        debug_assert_eq!(x.len(), batch * self.input_dim());
        scratch.reserve(batch * self.max_width());
        let (mut cur, mut next) = (&mut scratch.a, &mut scratch.b);
        let mut first = true;
        for layer in &self.layers {
            let n = batch * layer.outputs;
            if first {
                layer.infer_into(x, batch, &mut next[..n]);
                first = false;
            } else {
                let m = batch * layer.inputs;
                layer.infer_into(&cur[..m], batch, &mut next[..n]);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let out: &'s Vec<T> = cur;
        &out[..batch * self.output_dim()]
    }
}

/// Reusable buffers for [`Mlp::infer`].
#[derive(Debug, Clone, Default)]
pub struct InferScratch<T: Scalar> {
    a: Vec<T>,
    b: Vec<T>,
}

impl<T: Scalar> InferScratch<T> {
    pub fn with_capacity(len: usize) -> Self {
        Self { a: vec![T::zero(); len], b: vec![T::zero(); len] }
    }

    fn reserve(&mut self, len: usize) {
        if self.a.len() < len {
            self.a.resize(len, T::zero());
            self.b.resize(len, T::zero());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// Mean squared reconstruction error.
    pub mse: f64,
    /// `mse + λ Σ‖W‖²`, the optimized objective.
    pub total: f64,
}

/// Mean over all elements of the squared error, and its gradient
/// `2 (y - t) / n` with respect to `y`.
pub fn mse_loss<T: Scalar>(output: &[T], target: &[T]) -> Result<(f64, Vec<T>)> {
    if output.len() != target.len() || output.is_empty() {
        return Err(Error::Shape(format!(
            "output has {} values, target has {}",
            output.len(),
            target.len()
        )));
    }
    let n = output.len() as f64;
    let scale = T::from_f64(2.0 / n);
    let mut sum = 0.0f64;
    let grad = output
        .iter()
        .zip(target)
        .map(|(&y, &t)| {
            let e = y - t;
            let ef = e.to_f64().unwrap_or(f64::NAN);
            sum += ef * ef;
            e * scale
        })
        .collect();
    Ok((sum / n, grad))
}

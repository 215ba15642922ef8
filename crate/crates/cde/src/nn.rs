//! Minimal dense feedforward networks with exact reverse-mode gradients.
//!
//! This is the shared function approximator behind every model head. It is
//! deliberately small: f64 everywhere, ReLU or identity hidden activations,
//! a linear output layer, and hand-written backprop that is verified
//! against finite differences in the test suites.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `dot` may return column-major output when a contracted dimension is 1;
/// flat parameter access and per-row slicing both assume row-major.
fn ensure_standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        let dim = a.raw_dim();
        Array2::from_shape_vec(dim, a.iter().copied().collect()).unwrap()
    }
}

/// Dense feedforward network. Hidden layers share one activation; the
/// output layer is always linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    layer_sizes: Vec<usize>,
    /// One (out, in) matrix per layer.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

/// Per-parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &FeedForwardNet) -> Self {
        Gradients {
            weights: net
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: net
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Cached forward activations used by `backward`.
pub struct ForwardCache {
    /// Layer inputs: activations[0] is the batch itself.
    activations: Vec<Array2<f64>>,
    /// Pre-activation values per layer.
    preacts: Vec<Array2<f64>>,
}

impl FeedForwardNet {
    /// Fan-in-scaled uniform initialization, biases zero.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "network needs at least input and output sizes".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mat = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
            weights.push(mat);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(FeedForwardNet {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} feature columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in network input".into()));
        }
        Ok(())
    }

    /// Batch forward pass; rows are examples.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers);
        let mut preacts = Vec::with_capacity(n_layers);
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            activations.push(a.clone());
            let mut z = a.dot(&w.t());
            z += b;
            let z = ensure_standard(z);
            a = if l + 1 < n_layers {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z.clone()
            };
            preacts.push(z);
        }
        Ok((
            a,
            ForwardCache {
                activations,
                preacts,
            },
        ))
    }

    /// Exact reverse-mode gradients of the forward map contracted with
    /// `upstream` (dL/d output). Returns parameter gradients and dL/d input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let n_layers = self.weights.len();
        let last = &cache.preacts[n_layers - 1];
        if upstream.raw_dim() != last.raw_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, output is {:?}",
                upstream.shape(),
                last.shape()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = upstream.clone(); // dL/dz at the output layer (linear output)
        for l in (0..n_layers).rev() {
            grads.weights[l] = ensure_standard(g.t().dot(&cache.activations[l]));
            grads.biases[l] = g.sum_axis(Axis(0));
            if l > 0 {
                let mut gx = g.dot(&self.weights[l]);
                gx.zip_mut_with(&cache.preacts[l - 1], |v, &z| {
                    *v *= self.activation.derivative(z)
                });
                g = gx;
            } else {
                g = g.dot(&self.weights[l]);
            }
        }
        Ok((grads, g))
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flat parameter access: all weights row-major, layer by layer, then
    /// all biases. Used by optimizers, checkpoints, and gradient checks.
    pub fn param(&self, i: usize) -> f64 {
        let mut i = i;
        for w in &self.weights {
            if i < w.len() {
                return w.as_slice().unwrap()[i];
            }
            i -= w.len();
        }
        for b in &self.biases {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let mut i = i;
        for w in &mut self.weights {
            if i < w.len() {
                w.as_slice_mut().unwrap()[i] = v;
                return;
            }
            i -= w.len();
        }
        for b in &mut self.biases {
            if i < b.len() {
                b[i] = v;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Gradient entry matching the `param` flattening.
    pub fn grad_entry(grads: &Gradients, i: usize) -> f64 {
        let mut i = i;
        for w in &grads.weights {
            if i < w.len() {
                return w.as_slice().unwrap()[i];
            }
            i -= w.len();
        }
        for b in &grads.biases {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("gradient index out of range");
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Direct parameter replacement; shapes must match.
    pub fn set_weights(
        &mut self,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<()> {
        if weights.len() != self.weights.len() || biases.len() != self.biases.len() {
            return Err(Error::Shape("layer count mismatch".into()));
        }
        for (new, old) in weights.iter().zip(&self.weights) {
            if new.raw_dim() != old.raw_dim() {
                return Err(Error::Shape("weight shape mismatch".into()));
            }
        }
        for (new, old) in biases.iter().zip(&self.biases) {
            if new.raw_dim() != old.raw_dim() {
                return Err(Error::Shape("bias shape mismatch".into()));
            }
        }
        self.weights = weights;
        self.biases = biases;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer with optional adaptive moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: Option<Gradients>,
    v: Option<Gradients>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step_count: 0,
            m: None,
            v: None,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: None,
            v: None,
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::sgd(lr),
            OptimizerKind::Adam => Optimizer::adam(lr),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update in place. Rejects non-finite gradients.
    pub fn step(&mut self, net: &mut FeedForwardNet, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Train(format!(
                "non-finite gradient at optimizer step {}",
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
                    w.zip_mut_with(g, |p, &gv| *p -= self.lr * gv);
                }
                for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
                    b.zip_mut_with(g, |p, &gv| *p -= self.lr * gv);
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_none() {
                    self.m = Some(Gradients::zeros_like(net));
                    self.v = Some(Gradients::zeros_like(net));
                }
                let m = self.m.as_mut().unwrap();
                let v = self.v.as_mut().unwrap();
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
                for l in 0..net.weights.len() {
                    update_adam(
                        net.weights[l].as_slice_mut().unwrap(),
                        grads.weights[l].as_slice().unwrap(),
                        m.weights[l].as_slice_mut().unwrap(),
                        v.weights[l].as_slice_mut().unwrap(),
                        b1,
                        b2,
                        bc1,
                        bc2,
                        lr,
                        eps,
                    );
                    update_adam(
                        net.biases[l].as_slice_mut().unwrap(),
                        grads.biases[l].as_slice().unwrap(),
                        m.biases[l].as_slice_mut().unwrap(),
                        v.biases[l].as_slice_mut().unwrap(),
                        b1,
                        b2,
                        bc1,
                        bc2,
                        lr,
                        eps,
                    );
                }
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_adam(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    b1: f64,
    b2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    eps: f64,
) {
    for i in 0..params.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grads[i] * grads[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

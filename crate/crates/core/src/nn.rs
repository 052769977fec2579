//! Minimal fully connected networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector (per layer: row-major weights, then
//! bias) so optimizers, finite-difference checks and persistence all work on
//! a plain `&[f64]`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    n_in: usize,
    n_out: usize,
    offset: usize,
}

impl LayerShape {
    fn n_params(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.n_out * self.n_in
    }
}

/// Stack of dense layers. The hidden activation follows every layer but
/// the last, whose output is returned raw.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerShape>,
    hidden: Activation,
    params: Vec<f64>,
}

/// Intermediate values from a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer, after activation and dropout.
    inputs: Vec<Vec<f64>>,
    /// Hidden activations before dropout.
    activations: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per hidden layer; empty when disabled.
    masks: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize], hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut offset = 0;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    n_in: w[0],
                    n_out: w[1],
                    offset,
                };
                offset += shape.n_params();
                shape
            })
            .collect();
        Self {
            layers,
            hidden,
            params: vec![0.0; offset],
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(sizes, hidden);
        for shape in mlp.layers.clone() {
            let bound = 1.0 / (shape.n_in.max(1) as f64).sqrt();
            for p in &mut mlp.params[shape.offset..shape.offset + shape.n_params()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        mlp
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Weight `(row, col)` of layer `layer`.
    pub fn weight_mut(&mut self, layer: usize, row: usize, col: usize) -> &mut f64 {
        let s = self.layers[layer];
        &mut self.params[s.offset + row * s.n_in + col]
    }

    pub fn bias_mut(&mut self, layer: usize, row: usize) -> &mut f64 {
        let s = self.layers[layer];
        &mut self.params[s.bias_offset() + row]
    }

    fn affine(&self, shape: &LayerShape, x: &[f64]) -> Vec<f64> {
        let w = &self.params[shape.offset..shape.bias_offset()];
        let b = &self.params[shape.bias_offset()..shape.offset + shape.n_params()];
        w.chunks_exact(shape.n_in)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).output
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        self.forward_inner(x, None::<(f64, &mut rand_chacha::ChaCha8Rng)>)
    }

    /// Forward pass with inverted dropout on every hidden layer.
    pub fn forward_trace_dropout<R: Rng>(&self, x: &[f64], rate: f64, rng: &mut R) -> Trace {
        if rate <= 0.0 {
            return self.forward_trace(x);
        }
        self.forward_inner(x, Some((rate, rng)))
    }

    fn forward_inner<R: Rng>(&self, x: &[f64], mut dropout: Option<(f64, &mut R)>) -> Trace {
        assert_eq!(x.len(), self.n_inputs(), "MLP input width");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len() - 1);
        let mut masks = Vec::new();
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, shape) in self.layers.iter().enumerate() {
            let z = self.affine(shape, &h);
            inputs.push(h);
            if l == last {
                return Trace {
                    inputs,
                    activations,
                    masks,
                    output: z,
                };
            }
            let a: Vec<f64> = z.iter().map(|&v| self.hidden.apply(v)).collect();
            h = match dropout.as_mut() {
                Some((rate, rng)) => {
                    let keep = 1.0 - *rate;
                    let mask: Vec<f64> = (0..a.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let dropped = a.iter().zip(&mask).map(|(v, m)| v * m).collect();
                    masks.push(mask);
                    dropped
                }
                None => a.clone(),
            };
            activations.push(a);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Accumulate parameter gradients into `grad` for upstream gradient
    /// `grad_out` (with respect to the raw output) and return the gradient
    /// with respect to the input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        let mut delta = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let shape = self.layers[l];
            let input = &trace.inputs[l];
            let w = &self.params[shape.offset..shape.bias_offset()];
            let (gw, gb) = grad[shape.offset..shape.offset + shape.n_params()]
                .split_at_mut(shape.n_out * shape.n_in);
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, &x) in gw[r * shape.n_in..(r + 1) * shape.n_in].iter_mut().zip(input) {
                    *g += d * x;
                }
                gb[r] += d;
            }
            let mut g_in = vec![0.0; shape.n_in];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, &wv) in g_in.iter_mut().zip(&w[r * shape.n_in..(r + 1) * shape.n_in]) {
                    *g += d * wv;
                }
            }
            if l == 0 {
                return g_in;
            }
            let a = &trace.activations[l - 1];
            let mask = trace.masks.get(l - 1);
            delta = g_in
                .iter()
                .zip(a)
                .enumerate()
                .map(|(k, (g, &av))| {
                    let m = mask.map_or(1.0, |m| m[k]);
                    g * m * self.hidden.derivative_from_output(av)
                })
                .collect();
        }
        unreachable!("layer loop returns at the input layer")
    }
}

/// Intermediate values from a batched forward pass; one column per sample.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    inputs: Vec<DMatrix<f64>>,
    activations: Vec<DMatrix<f64>>,
    masks: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl Mlp {
    fn weights(&self, shape: &LayerShape) -> DMatrix<f64> {
        DMatrix::from_row_slice(shape.n_out, shape.n_in, &self.params[shape.offset..shape.bias_offset()])
    }

    /// Forward pass over the columns of `x`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> BatchTrace {
        self.forward_batch_inner(x, None::<(f64, &mut rand_chacha::ChaCha8Rng)>)
    }

    /// Batched forward pass with inverted dropout on every hidden layer.
    pub fn forward_batch_dropout<R: Rng>(&self, x: &DMatrix<f64>, rate: f64, rng: &mut R) -> BatchTrace {
        if rate <= 0.0 {
            return self.forward_batch(x);
        }
        self.forward_batch_inner(x, Some((rate, rng)))
    }

    fn forward_batch_inner<R: Rng>(&self, x: &DMatrix<f64>, mut dropout: Option<(f64, &mut R)>) -> BatchTrace {
        assert_eq!(x.nrows(), self.n_inputs(), "MLP input width");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len() - 1);
        let mut masks = Vec::new();
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, shape) in self.layers.iter().enumerate() {
            let mut z = self.weights(shape) * &h;
            let b = &self.params[shape.bias_offset()..shape.offset + shape.n_params()];
            for mut col in z.column_iter_mut() {
                for (v, bias) in col.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            inputs.push(h);
            if l == last {
                return BatchTrace {
                    inputs,
                    activations,
                    masks,
                    output: z,
                };
            }
            let a = z.map(|v| self.hidden.apply(v));
            h = match dropout.as_mut() {
                Some((rate, rng)) => {
                    let keep = 1.0 - *rate;
                    let mask = DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    let dropped = a.component_mul(&mask);
                    masks.push(mask);
                    dropped
                }
                None => a.clone(),
            };
            activations.push(a);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Batched [`Mlp::backward`]: accumulates the gradient summed over
    /// columns into `grad`.
    pub fn backward_batch(&self, trace: &BatchTrace, grad_out: &DMatrix<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let mut delta = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let shape = self.layers[l];
            let gw = &delta * trace.inputs[l].transpose();
            let (gws, gb) = grad[shape.offset..shape.offset + shape.n_params()]
                .split_at_mut(shape.n_out * shape.n_in);
            for r in 0..shape.n_out {
                for c in 0..shape.n_in {
                    gws[r * shape.n_in + c] += gw[(r, c)];
                }
                gb[r] += delta.row(r).sum();
            }
            if l == 0 {
                return;
            }
            let mut g_in = self.weights(&shape).transpose() * &delta;
            let a = &trace.activations[l - 1];
            if let Some(m) = trace.masks.get(l - 1) {
                g_in.component_mul_assign(m);
            }
            g_in.zip_apply(a, |g, av| *g *= self.hidden.derivative_from_output(av));
            delta = g_in;
        }
    }
}

/// Parameter update rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    /// Plain gradient descent, `theta -= lr * grad`.
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64, n_params: usize) -> Self {
        Optimizer::Adam(Adam::new(lr, n_params))
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("gradient ({bad})")));
        }
        if params.len() != grad.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                actual: grad.len(),
            });
        }
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam(adam) => adam.step(params, grad),
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Softmax over the entries where `mask` is true; masked entries get exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { (z - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    masked_softmax(logits, &vec![true; logits.len()])
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

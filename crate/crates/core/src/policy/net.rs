//! Dense feedforward networks with sigmoid hidden layers and a linear output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Widest layer supported by the allocation-free inference path.
pub const MAX_WIDTH: usize = 32;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub n_inputs: usize,
    pub hidden_layers: usize,
    pub nodes_per_layer: usize,
    pub n_outputs: usize,
    pub biases: bool,
}

impl NetSpec {
    /// Withdrawal network: one output, the pre-activation of the scaled sigmoid.
    pub fn withdrawal() -> Self {
        Self { n_inputs: 2, hidden_layers: 2, nodes_per_layer: 10, n_outputs: 1, biases: true }
    }

    /// Allocation network: two logits, softmax over (stock, bond).
    pub fn allocation() -> Self {
        Self { n_inputs: 2, hidden_layers: 2, nodes_per_layer: 10, n_outputs: 2, biases: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.nodes_per_layer == 0 {
            return Err(invalid("a network needs at least one hidden layer with one node"));
        }
        if self.n_inputs == 0 || self.n_outputs == 0 {
            return Err(invalid("a network needs inputs and outputs"));
        }
        if self.nodes_per_layer.max(self.n_inputs).max(self.n_outputs) > MAX_WIDTH {
            return Err(invalid(format!("layer width above {MAX_WIDTH} is not supported")));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_inputs];
        w.extend(std::iter::repeat_n(self.nodes_per_layer, self.hidden_layers));
        w.push(self.n_outputs);
        w
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    /// `(fan_in, fan_out)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 0 { self.n_inputs } else { self.nodes_per_layer };
        let fan_out = if l == self.hidden_layers { self.n_outputs } else { self.nodes_per_layer };
        (fan_in, fan_out)
    }

    fn layer_len(&self, l: usize) -> usize {
        let (i, o) = self.layer_shape(l);
        i * o + if self.biases { o } else { 0 }
    }

    pub fn n_params(&self) -> usize {
        (0..self.n_layers()).map(|l| self.layer_len(l)).sum()
    }

    fn tape_len(&self) -> usize {
        self.widths().iter().sum()
    }
}

/// Parameters are stored layer by layer: the row-major weight matrix
/// `[fan_out][fan_in]` followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    spec: NetSpec,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass for reuse in the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<f64>,
}

impl Tape {
    pub fn new(spec: &NetSpec) -> Self {
        Self { acts: vec![0.0; spec.tape_len()] }
    }

    /// Output of the most recent forward pass.
    pub fn output(&self, spec: &NetSpec) -> &[f64] {
        &self.acts[self.acts.len() - spec.n_outputs..]
    }
}

impl Net {
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, params: vec![0.0; spec.n_params()] })
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.n_params() {
            return Err(Error::Dimension(format!(
                "network expects {} parameters, got {}",
                spec.n_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("network parameters must be finite"));
        }
        Ok(Self { spec, params })
    }

    /// Uniform weights and biases in `±1/sqrt(fan_in)` per layer.
    pub fn random<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut k = 0;
        for l in 0..spec.n_layers() {
            let (fan_in, _) = spec.layer_shape(l);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..spec.layer_len(l) {
                net.params[k] = rng.random_range(-scale..scale);
                k += 1;
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight matrix (row-major) and bias vector of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let start: usize = (0..l).map(|k| self.spec.layer_len(k)).sum();
        let (i, o) = self.spec.layer_shape(l);
        let w = &self.params[start..start + i * o];
        let b = if self.spec.biases { &self.params[start + i * o..start + i * o + o] } else { &[][..] };
        (w, b)
    }

    /// Assemble from per-layer weight and bias arrays.
    pub fn from_layers(spec: NetSpec, weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.n_layers() || (spec.biases && biases.len() != spec.n_layers()) {
            return Err(Error::Dimension("layer count does not match network spec".into()));
        }
        let mut params = Vec::with_capacity(spec.n_params());
        for l in 0..spec.n_layers() {
            let (i, o) = spec.layer_shape(l);
            if weights[l].len() != i * o {
                return Err(Error::Dimension(format!("layer {l} weight matrix has wrong size")));
            }
            params.extend_from_slice(&weights[l]);
            if spec.biases {
                if biases[l].len() != o {
                    return Err(Error::Dimension(format!("layer {l} bias has wrong size")));
                }
                params.extend_from_slice(&biases[l]);
            }
        }
        Self::from_params(spec, params)
    }

    /// Forward pass without recording activations.
    pub fn infer(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.spec.n_inputs);
        let mut a = [0.0; MAX_WIDTH];
        let mut b = [0.0; MAX_WIDTH];
        a[..input.len()].copy_from_slice(input);
        let mut width = input.len();
        let mut k = 0;
        let last = self.spec.hidden_layers;
        for l in 0..=last {
            let (fan_in, fan_out) = self.spec.layer_shape(l);
            debug_assert_eq!(fan_in, width);
            let w = &self.params[k..k + fan_in * fan_out];
            k += fan_in * fan_out;
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                b[o] = row.iter().zip(&a[..fan_in]).map(|(x, y)| x * y).sum();
            }
            if self.spec.biases {
                for o in 0..fan_out {
                    b[o] += self.params[k + o];
                }
                k += fan_out;
            }
            if l < last {
                for v in &mut b[..fan_out] {
                    *v = sigmoid(*v);
                }
            }
            std::mem::swap(&mut a, &mut b);
            width = fan_out;
        }
        out.copy_from_slice(&a[..width]);
    }

    /// Forward pass recording activations into `tape`; returns the output.
    pub fn forward<'t>(&self, input: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        let n_in = self.spec.n_inputs;
        tape.acts[..n_in].copy_from_slice(input);
        let mut in_start = 0;
        let mut k = 0;
        let last = self.spec.hidden_layers;
        for l in 0..=last {
            let (fan_in, fan_out) = self.spec.layer_shape(l);
            let out_start = in_start + fan_in;
            let w = &self.params[k..k + fan_in * fan_out];
            k += fan_in * fan_out;
            let (head, tail) = tape.acts.split_at_mut(out_start);
            let x = &head[in_start..];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut z: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum();
                if self.spec.biases {
                    z += self.params[k + o];
                }
                tail[o] = if l < last { sigmoid(z) } else { z };
            }
            if self.spec.biases {
                k += fan_out;
            }
            in_start = out_start;
        }
        tape.output(&self.spec)
    }

    /// Reverse pass: accumulates `d(upstream . output)/d(params)` into `grad`
    /// and writes the gradient with respect to the inputs into `input_grad`.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64], input_grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = [0.0; MAX_WIDTH];
        let mut next = [0.0; MAX_WIDTH];
        delta[..upstream.len()].copy_from_slice(upstream);
        let mut k_end = self.params.len();
        let mut in_end = tape.acts.len() - self.spec.n_outputs;
        for l in (0..self.spec.n_layers()).rev() {
            let (fan_in, fan_out) = self.spec.layer_shape(l);
            let in_start = in_end - fan_in;
            let x = &tape.acts[in_start..in_end];
            if self.spec.biases {
                let b0 = k_end - fan_out;
                for o in 0..fan_out {
                    grad[b0 + o] += delta[o];
                }
                k_end = b0;
            }
            let w0 = k_end - fan_in * fan_out;
            next[..fan_in].fill(0.0);
            let weights = &self.params[w0..w0 + fan_in * fan_out];
            let grads = &mut grad[w0..w0 + fan_in * fan_out];
            for ((d, wr), gr) in delta[..fan_out].iter().zip(weights.chunks_exact(fan_in)).zip(grads.chunks_exact_mut(fan_in)) {
                for (((g, w), xi), nx) in gr.iter_mut().zip(wr).zip(x).zip(next[..fan_in].iter_mut()) {
                    *g += d * xi;
                    *nx += w * d;
                }
            }
            if l > 0 {
                for i in 0..fan_in {
                    next[i] *= x[i] * (1.0 - x[i]);
                }
            }
            delta[..fan_in].copy_from_slice(&next[..fan_in]);
            k_end = w0;
            in_end = in_start;
        }
        input_grad.copy_from_slice(&delta[..self.spec.n_inputs]);
    }

    /// Convenience wrapper returning `(output, parameter gradient, input gradient)`.
    pub fn forward_backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if input.len() != self.spec.n_inputs || upstream.len() != self.spec.n_outputs {
            return Err(Error::Dimension(format!(
                "network takes {} inputs and {} upstream values, got {} and {}",
                self.spec.n_inputs,
                self.spec.n_outputs,
                input.len(),
                upstream.len()
            )));
        }
        let mut tape = Tape::new(&self.spec);
        let out = self.forward(input, &mut tape).to_vec();
        let mut grad = vec![0.0; self.params.len()];
        let mut input_grad = vec![0.0; self.spec.n_inputs];
        self.backward(&tape, upstream, &mut grad, &mut input_grad);
        Ok((out, grad, input_grad))
    }
}

//! Dense networks with hand-rolled forward/backward passes.
//!
//! The policy and value heads are small enough that explicit loops beat any
//! generality a tensor library would buy, and owning the backward pass lets
//! the finite-difference harness audit every gradient the trainer uses.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One affine layer, weights row-major `[outputs x inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DenseLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

/// Multi-layer perceptron: tanh on every layer except the last, which is
/// linear. Callers apply softmax (actor) or read the scalar (critic).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Post-activation values for each layer; `activations[0]` is the input and
/// `activations.last()` the network output.
pub(crate) struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
}

/// Per-layer gradient accumulators shaped like the network they belong to.
#[derive(Debug, Clone)]
pub(crate) struct MlpGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(self.b.iter())
            .all(|layer| layer.iter().all(|g| g.is_finite()))
    }
}

/// Fills a `[outputs x inputs]` matrix with `gain`-scaled orthonormal rows
/// (or columns when the layer widens), built by Gram-Schmidt over Gaussian
/// draws. Keeps early activations well-conditioned through the tanh stack.
fn orthogonal(outputs: usize, inputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = outputs.min(inputs);
    let d = outputs.max(inputs);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &basis {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A fresh Gaussian draw is almost surely independent of the span so
        // far; retry on the measure-zero degenerate case rather than divide.
        if norm > 1e-8 {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    let mut w = vec![0.0; outputs * inputs];
    for r in 0..outputs {
        for c in 0..inputs {
            w[r * inputs + c] = gain
                * if outputs <= inputs {
                    basis[r][c]
                } else {
                    basis[c][r]
                };
        }
    }
    w
}

impl Mlp {
    /// Builds a net with the given layer sizes (`sizes[0]` inputs through
    /// `sizes.last()` outputs). Hidden layers use gain sqrt(2); the output
    /// layer uses `head_gain` so the actor can start near-uniform (0.01)
    /// while the critic keeps unit scale (1.0). Biases start at zero.
    pub fn new(sizes: &[usize], head_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "network needs at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let gain = if i == last { head_gain } else { 2f64.sqrt() };
                DenseLayer {
                    w: orthogonal(pair[1], pair[0], gain, rng),
                    b: vec![0.0; pair[1]],
                    inputs: pair[0],
                    outputs: pair[1],
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Layer sizes as passed to `new`, recovered from the layer shapes.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        s.push(self.output_size());
        s
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let trace = self.forward_trace(x);
        trace.activations.into_iter().last().unwrap()
    }

    pub fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        assert_eq!(x.len(), self.input_size(), "input width mismatch");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let a_in = &activations[i];
            let mut out = Vec::with_capacity(layer.outputs);
            for o in 0..layer.outputs {
                let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                let z: f64 = layer.b[o] + row.iter().zip(a_in).map(|(w, a)| w * a).sum::<f64>();
                out.push(if i == last { z } else { z.tanh() });
            }
            activations.push(out);
        }
        ForwardTrace { activations }
    }

    /// Accumulates dLoss/dParams into `grads` given dLoss/dOutput for the
    /// sample traced in `trace`. Callers sum over a batch and scale once.
    pub fn backward_into(&self, trace: &ForwardTrace, grad_output: &[f64], grads: &mut MlpGrads) {
        assert_eq!(grad_output.len(), self.output_size());
        let mut delta = grad_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_in = &trace.activations[l];
            for o in 0..layer.outputs {
                let gw = &mut grads.w[l][o * layer.inputs..(o + 1) * layer.inputs];
                for (g, a) in gw.iter_mut().zip(a_in) {
                    *g += delta[o] * a;
                }
                grads.b[l][o] += delta[o];
            }
            if l > 0 {
                let mut dx = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                    for (d, w) in dx.iter_mut().zip(row) {
                        *d += w * delta[o];
                    }
                }
                // `a_in` is post-tanh output of layer l-1: tanh' = 1 - a^2.
                delta = dx
                    .iter()
                    .zip(a_in)
                    .map(|(d, a)| d * (1.0 - a * a))
                    .collect();
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter order: per layer, weights then biases.
    pub fn get_param(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            if idx < layer.w.len() {
                return layer.w[idx];
            }
            idx -= layer.w.len();
            if idx < layer.b.len() {
                return layer.b[idx];
            }
            idx -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for layer in &mut self.layers {
            if idx < layer.w.len() {
                layer.w[idx] = value;
                return;
            }
            idx -= layer.w.len();
            if idx < layer.b.len() {
                layer.b[idx] = value;
                return;
            }
            idx -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    #[cfg(test)]
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }

    #[cfg(test)]
    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let mut k = 0;
        for layer in &mut self.layers {
            let wl = layer.w.len();
            layer.w.copy_from_slice(&flat[k..k + wl]);
            k += wl;
            let bl = layer.b.len();
            layer.b.copy_from_slice(&flat[k..k + bl]);
            k += bl;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|p| p.is_finite()))
    }
}

/// Adam moment estimates over a network's flattened parameters. The step
/// count lives here so bias correction survives checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Adam {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    /// One optimizer step; `grads` must be shaped like `net`.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t.min(i32::MAX as u64) as i32);
        let mut k = 0;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            for (p, g) in layer
                .w
                .iter_mut()
                .zip(&grads.w[l])
                .chain(layer.b.iter_mut().zip(&grads.b[l]))
            {
                self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * g;
                self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                k += 1;
            }
        }
        debug_assert_eq!(k, self.m.len());
    }
}

/// Numerically stable log-softmax: shifts by the max before exponentiating.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - max - log_sum).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|lp| lp.exp()).collect()
}

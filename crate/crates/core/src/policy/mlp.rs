//! Fully connected ReLU networks with a linear head and manual backprop.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linear::{spectral_project, Linear, PowerIteration};

/// `L` affine layers with ReLU between them and none after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer inputs and pre-activations saved by [`Mlp::forward_batch`].
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    batch: usize,
    /// `inputs[l]` is the input to layer `l`; the last entry is the network output.
    inputs: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients with the same shapes as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weight: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weight.len()])
                .collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weight
            .iter_mut()
            .chain(self.bias.iter_mut())
            .for_each(|g| g.fill(0.0));
    }

    pub fn norm_sq(&self) -> f64 {
        self.weight
            .iter()
            .chain(&self.bias)
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.weight
            .iter_mut()
            .chain(self.bias.iter_mut())
            .flat_map(|g| g.iter_mut())
            .for_each(|x| *x *= s);
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.weight
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

/// Orthogonal `rows × cols` matrix scaled by `gain`, row-major.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (n, m) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(n, m, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            w[r * cols + c] = gain * if rows >= cols { q[(r, c)] } else { q[(c, r)] };
        }
    }
    w
}

impl Mlp {
    /// Orthogonally initialised network with zero biases.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let gain = if i == last { output_gain } else { hidden_gain };
                Linear::from_weights(
                    d[1],
                    d[0],
                    orthogonal(d[1], d[0], gain, rng),
                    vec![0.0; d[1]],
                )
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.rows];
            layer.apply(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        cur
    }

    /// Batched forward pass keeping what [`Mlp::backward_batch`] needs.
    pub fn forward_batch(&self, x: &[f64], batch: usize, cache: &mut MlpCache) {
        cache.batch = batch;
        cache.inputs.resize(self.layers.len() + 1, Vec::new());
        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.inputs.split_at_mut(i + 1);
            let y = &mut rest[0];
            y.resize(batch * layer.rows, 0.0);
            layer.forward_batch(&done[i], batch, y);
            if i + 1 < self.layers.len() {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Accumulates parameter gradients for `dL/d(output) = grad_out`.
    pub fn backward_batch(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut MlpGrads) {
        let batch = cache.batch;
        let mut dy = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = &cache.inputs[i];
            if i == 0 {
                layer.backward_batch(
                    x,
                    &dy,
                    batch,
                    &mut grads.weight[i],
                    &mut grads.bias[i],
                    None,
                );
            } else {
                let mut dx = vec![0.0; batch * layer.cols];
                layer.backward_batch(
                    x,
                    &dy,
                    batch,
                    &mut grads.weight[i],
                    &mut grads.bias[i],
                    Some(&mut dx),
                );
                // x is post-ReLU, so x > 0 exactly where the unit was active
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                dy = dx;
            }
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Projects every layer onto `σ_max(W) ≤ k_lip`; returns the pre-projection norms.
    pub fn spectral_project(&mut self, k_lip: f64, rule: PowerIteration) -> Vec<f64> {
        self.layers
            .iter_mut()
            .map(|l| spectral_project(l, k_lip, rule))
            .collect()
    }

    pub fn spectral_norms(&mut self, rule: PowerIteration) -> Vec<f64> {
        self.layers
            .iter_mut()
            .map(|l| l.spectral_norm(rule))
            .collect()
    }
}

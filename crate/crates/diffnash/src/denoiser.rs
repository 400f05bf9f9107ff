//! Small conditional noise-prediction MLP with exact analytic gradients.
//!
//! The network maps `[x_t || time_embedding(t) || one_hot(c)]` through
//! `depth` tanh hidden layers of width `hidden` to a linear output of the
//! sample dimension. The same architecture serves as the trainable policy,
//! the frozen reference, and the evolving opponent via three parameter
//! vectors.

use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::Error;

pub const TIME_EMBED_DIM: usize = 8;

/// Shape of the MLP. Two descriptors being equal makes their parameter
/// vectors interoperable (elementwise interpolation is well defined).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub sample_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub n_prompts: usize,
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.sample_dim + TIME_EMBED_DIM + self.n_prompts
    }

    /// Exact parameter count implied by the shape.
    pub fn param_count(&self) -> usize {
        let n_in = self.input_dim();
        let h = self.hidden;
        let mut count = h * n_in + h; // first hidden layer
        count += (self.depth - 1) * (h * h + h); // remaining hidden layers
        count += self.sample_dim * h + self.sample_dim; // linear output
        count
    }
}

/// Flat parameter vector plus its architecture descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

/// Discrete prompt set: one-hot conditioning plus sampling weights.
#[derive(Clone, Debug)]
pub struct PromptSet {
    pub weights: Vec<f64>,
}

impl PromptSet {
    pub fn uniform(n_prompts: usize) -> Self {
        PromptSet { weights: vec![1.0 / n_prompts as f64; n_prompts] }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self, Error> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config("prompt weights must be a simplex point".into()));
        }
        Ok(PromptSet { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> usize {
        rng.next_weighted(&self.weights)
    }
}

fn time_embedding(t: usize, out: &mut [f64]) {
    // Geometric frequency ladder over TIME_EMBED_DIM/2 sin/cos pairs.
    let pairs = TIME_EMBED_DIM / 2;
    for k in 0..pairs {
        let omega = (0.01f64).powf(k as f64 / (pairs - 1) as f64);
        let phase = t as f64 * omega;
        out[2 * k] = phase.sin();
        out[2 * k + 1] = phase.cos();
    }
}

/// Activations captured by a forward pass, reused by the backward pass.
struct ForwardTrace {
    input: Vec<f64>,
    hiddens: Vec<Vec<f64>>, // post-tanh activations per hidden layer
    output: Vec<f64>,
}

impl DenoiserParams {
    /// Symmetric uniform init with scale 1/sqrt(fan_in) per layer.
    pub fn init(arch: Architecture, rng: &mut StreamRng) -> Self {
        let mut theta = Vec::with_capacity(arch.param_count());
        let layer = |rows: usize, cols: usize, theta: &mut Vec<f64>, rng: &mut StreamRng| {
            let scale = 1.0 / (cols as f64).sqrt();
            for _ in 0..rows * cols {
                theta.push((rng.next_f64() * 2.0 - 1.0) * scale);
            }
            for _ in 0..rows {
                theta.push(0.0);
            }
        };
        layer(arch.hidden, arch.input_dim(), &mut theta, rng);
        for _ in 1..arch.depth {
            layer(arch.hidden, arch.hidden, &mut theta, rng);
        }
        layer(arch.sample_dim, arch.hidden, &mut theta, rng);
        debug_assert_eq!(theta.len(), arch.param_count());
        DenoiserParams { arch, theta }
    }

    pub fn zeros(arch: Architecture) -> Self {
        DenoiserParams { arch, theta: vec![0.0; arch.param_count()] }
    }

    fn build_input(&self, x_t: &[f64], t: usize, c: usize) -> Result<Vec<f64>, Error> {
        if x_t.len() != self.arch.sample_dim {
            return Err(Error::DimMismatch { expected: self.arch.sample_dim, got: x_t.len() });
        }
        if c >= self.arch.n_prompts {
            return Err(Error::Config(format!(
                "prompt id {c} out of range 0..{}",
                self.arch.n_prompts
            )));
        }
        let mut input = vec![0.0; self.arch.input_dim()];
        input[..x_t.len()].copy_from_slice(x_t);
        time_embedding(t, &mut input[x_t.len()..x_t.len() + TIME_EMBED_DIM]);
        input[x_t.len() + TIME_EMBED_DIM + c] = 1.0;
        Ok(input)
    }

    fn trace(&self, x_t: &[f64], t: usize, c: usize) -> Result<ForwardTrace, Error> {
        let input = self.build_input(x_t, t, c)?;
        let h = self.arch.hidden;
        let d = self.arch.sample_dim;
        let mut hiddens = Vec::with_capacity(self.arch.depth);
        let mut offset = 0usize;
        let mut act = input.clone();
        for l in 0..self.arch.depth {
            let n_in = if l == 0 { self.arch.input_dim() } else { h };
            let w = &self.theta[offset..offset + h * n_in];
            let b = &self.theta[offset + h * n_in..offset + h * n_in + h];
            offset += h * n_in + h;
            let mut next = vec![0.0; h];
            for i in 0..h {
                let row = &w[i * n_in..(i + 1) * n_in];
                let mut z = b[i];
                for (wj, aj) in row.iter().zip(&act) {
                    z += wj * aj;
                }
                next[i] = z.tanh();
            }
            hiddens.push(next.clone());
            act = next;
        }
        let w = &self.theta[offset..offset + d * h];
        let b = &self.theta[offset + d * h..offset + d * h + d];
        let mut output = vec![0.0; d];
        for i in 0..d {
            let row = &w[i * h..(i + 1) * h];
            let mut z = b[i];
            for (wj, aj) in row.iter().zip(&act) {
                z += wj * aj;
            }
            output[i] = z;
        }
        Ok(ForwardTrace { input, hiddens, output })
    }

    /// Predicted noise for a noised sample.
    pub fn forward(&self, x_t: &[f64], t: usize, c: usize) -> Result<Vec<f64>, Error> {
        Ok(self.trace(x_t, t, c)?.output)
    }

    /// Gradient of `upstream . forward(x_t, t, c)` with respect to the
    /// parameters, accumulated into `grad` (same layout as `theta`).
    pub fn backward_into(
        &self,
        x_t: &[f64],
        t: usize,
        c: usize,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>, Error> {
        if upstream.len() != self.arch.sample_dim {
            return Err(Error::DimMismatch { expected: self.arch.sample_dim, got: upstream.len() });
        }
        if grad.len() != self.theta.len() {
            return Err(Error::DimMismatch { expected: self.theta.len(), got: grad.len() });
        }
        let tr = self.trace(x_t, t, c)?;
        let h = self.arch.hidden;
        let d = self.arch.sample_dim;

        // Layer parameter offsets, front to back.
        let mut offsets = Vec::with_capacity(self.arch.depth + 1);
        let mut off = 0usize;
        for l in 0..self.arch.depth {
            offsets.push(off);
            let n_in = if l == 0 { self.arch.input_dim() } else { h };
            off += h * n_in + h;
        }
        offsets.push(off);

        // Output layer.
        let last_hidden = &tr.hiddens[self.arch.depth - 1];
        let out_off = offsets[self.arch.depth];
        for i in 0..d {
            let u = upstream[i];
            let gw = &mut grad[out_off + i * h..out_off + (i + 1) * h];
            for (g, a) in gw.iter_mut().zip(last_hidden) {
                *g += u * a;
            }
            grad[out_off + d * h + i] += u;
        }
        // Back-propagated signal into the last hidden layer.
        let w_out = &self.theta[out_off..out_off + d * h];
        let mut delta: Vec<f64> = (0..h)
            .map(|j| {
                let mut s = 0.0;
                for i in 0..d {
                    s += w_out[i * h + j] * upstream[i];
                }
                s * (1.0 - last_hidden[j] * last_hidden[j])
            })
            .collect();

        // Hidden layers, back to front.
        for l in (0..self.arch.depth).rev() {
            let n_in = if l == 0 { self.arch.input_dim() } else { h };
            let prev_act: &[f64] = if l == 0 { &tr.input } else { &tr.hiddens[l - 1] };
            let loff = offsets[l];
            for i in 0..h {
                let di = delta[i];
                let gw = &mut grad[loff + i * n_in..loff + (i + 1) * n_in];
                for (g, a) in gw.iter_mut().zip(prev_act) {
                    *g += di * a;
                }
                grad[loff + h * n_in + i] += di;
            }
            if l > 0 {
                let w = &self.theta[loff..loff + h * n_in];
                let prev = &tr.hiddens[l - 1];
                delta = (0..n_in)
                    .map(|j| {
                        let mut s = 0.0;
                        for i in 0..h {
                            s += w[i * n_in + j] * delta[i];
                        }
                        s * (1.0 - prev[j] * prev[j])
                    })
                    .collect();
            }
        }
        Ok(tr.output)
    }

    /// Gradient of `upstream . forward(...)` as a fresh vector.
    pub fn backward(
        &self,
        x_t: &[f64],
        t: usize,
        c: usize,
        upstream: &[f64],
    ) -> Result<Vec<f64>, Error> {
        let mut grad = vec![0.0; self.theta.len()];
        self.backward_into(x_t, t, c, upstream, &mut grad)?;
        Ok(grad)
    }
}

/// Elementwise `lambda * target + (1 - lambda) * source`.
pub fn soft_update(
    target: &DenoiserParams,
    source: &DenoiserParams,
    lambda: f64,
) -> Result<DenoiserParams, Error> {
    if target.arch != source.arch {
        return Err(Error::Config("soft_update: architecture mismatch".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("soft_update: lambda {lambda} out of [0,1]")));
    }
    let theta = target
        .theta
        .iter()
        .zip(&source.theta)
        .map(|(t, s)| lambda * t + (1.0 - lambda) * s)
        .collect();
    Ok(DenoiserParams { arch: target.arch, theta })
}

/// Opponent interpolation weight from Algorithm-style scheduling.
pub fn soft_update_lambda(step: usize) -> f64 {
    (0.001 * step as f64).min(0.5)
}

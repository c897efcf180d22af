//! Convolutional LSTM regressor.
//!
//! A valid (unpadded) temporal convolution with ReLU feeds two stacked LSTM
//! layers; the last hidden state of the second layer goes through a single
//! dense unit. All trainable weights live in one flat vector so the
//! optimizer and the gradient check can treat them uniformly.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClstmShape {
    pub channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Number of feature timesteps the model is trained and queried on.
    pub seq_len: usize,
}

impl Default for ClstmShape {
    fn default() -> Self {
        ClstmShape {
            channels: 2,
            filters: 64,
            kernel: 3,
            hidden1: 50,
            hidden2: 30,
            seq_len: 30,
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    pub l1_wih: Range<usize>,
    pub l1_whh: Range<usize>,
    pub l1_b: Range<usize>,
    pub l2_wih: Range<usize>,
    pub l2_whh: Range<usize>,
    pub l2_b: Range<usize>,
    pub dense_w: Range<usize>,
    pub dense_b: Range<usize>,
}

impl ClstmShape {
    pub fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (c, f, k, h1, h2) = (self.channels, self.filters, self.kernel, self.hidden1, self.hidden2);
        Layout {
            conv_w: take(f * k * c),
            conv_b: take(f),
            l1_wih: take(4 * h1 * f),
            l1_whh: take(4 * h1 * h1),
            l1_b: take(4 * h1),
            l2_wih: take(4 * h2 * h1),
            l2_whh: take(4 * h2 * h2),
            l2_b: take(4 * h2),
            dense_w: take(h2),
            dense_b: take(1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().dense_b.end
    }
}

/// Affine maps applied to inputs and outputs. Not trained; fitted from the
/// training set before optimization starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub input_mean: [f64; 2],
    pub input_std: [f64; 2],
    pub target_mean: f64,
    pub target_std: f64,
}

impl Default for Standardizer {
    fn default() -> Self {
        Standardizer {
            input_mean: [0.0; 2],
            input_std: [1.0; 2],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }
}

impl Standardizer {
    pub fn fit(inputs: &[[f64; 2]], targets: &[f64]) -> Self {
        let stats = |xs: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = xs.collect();
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var.sqrt().max(1e-6))
        };
        let (m0, s0) = stats(&mut inputs.iter().map(|x| x[0]));
        let (m1, s1) = stats(&mut inputs.iter().map(|x| x[1]));
        let (mt, st) = stats(&mut targets.iter().copied());
        Standardizer {
            input_mean: [m0, m1],
            input_std: [s0, s1],
            target_mean: mt,
            target_std: st,
        }
    }

    pub fn input(&self, x: &[f64; 2]) -> [f64; 2] {
        [
            (x[0] - self.input_mean[0]) / self.input_std[0],
            (x[1] - self.input_mean[1]) / self.input_std[1],
        ]
    }

    pub fn target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn output(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClstmModel {
    pub shape: ClstmShape,
    pub scaler: Standardizer,
    pub params: Vec<f64>,
}

/// Activations of one LSTM layer over a sequence.
#[derive(Debug, Clone, Default)]
struct LstmTrace {
    /// Post-activation gates per step, ordered input, forget, cell, output.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ClstmCache {
    checksum: u64,
    steps: usize,
    input: Vec<f64>,
    conv_pre: Vec<f64>,
    conv_out: Vec<f64>,
    l1: LstmTrace,
    l2: LstmTrace,
    /// Raw network output, in standardized target units.
    pub output: f64,
}

impl ClstmCache {
    /// Number of timesteps after the convolution.
    pub fn conv_steps(&self) -> usize {
        self.steps
    }

    pub fn conv_output(&self) -> &[f64] {
        &self.conv_out
    }

    pub fn lstm1_output(&self) -> &[f64] {
        &self.l1.h
    }

    pub fn lstm2_final(&self, hidden2: usize) -> &[f64] {
        &self.l2.h[self.l2.h.len() - hidden2..]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LstmWeights<'a> {
    wih: &'a [f64],
    whh: &'a [f64],
    b: &'a [f64],
    inputs: usize,
    hidden: usize,
}

fn lstm_forward(w: &LstmWeights, u: &[f64], steps: usize, trace: &mut LstmTrace) {
    let (ni, h) = (w.inputs, w.hidden);
    trace.gates.clear();
    trace.gates.resize(steps * 4 * h, 0.0);
    trace.c.clear();
    trace.c.resize(steps * h, 0.0);
    trace.tanh_c.clear();
    trace.tanh_c.resize(steps * h, 0.0);
    trace.h.clear();
    trace.h.resize(steps * h, 0.0);
    let zeros = vec![0.0; h];
    for t in 0..steps {
        let ut = &u[t * ni..(t + 1) * ni];
        let (before, rest) = trace.h.split_at_mut(t * h);
        let h_prev = if t == 0 { &zeros[..] } else { &before[(t - 1) * h..] };
        let gates = &mut trace.gates[t * 4 * h..(t + 1) * 4 * h];
        for r in 0..4 * h {
            gates[r] = w.b[r]
                + dot(&w.wih[r * ni..(r + 1) * ni], ut)
                + dot(&w.whh[r * h..(r + 1) * h], h_prev);
        }
        for j in 0..h {
            gates[j] = sigmoid(gates[j]);
            gates[h + j] = sigmoid(gates[h + j]);
            gates[2 * h + j] = gates[2 * h + j].tanh();
            gates[3 * h + j] = sigmoid(gates[3 * h + j]);
        }
        let (c_before, c_rest) = trace.c.split_at_mut(t * h);
        let c_prev = if t == 0 { &zeros[..] } else { &c_before[(t - 1) * h..] };
        for j in 0..h {
            let c = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
            c_rest[j] = c;
            let tc = c.tanh();
            trace.tanh_c[t * h + j] = tc;
            rest[j] = gates[3 * h + j] * tc;
        }
    }
}

/// Backpropagates `dh_out` (gradient w.r.t. every hidden state) through the
/// layer. Accumulates weight gradients into `g_*` and writes the gradient
/// w.r.t. the layer input into `du`.
#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    w: &LstmWeights,
    u: &[f64],
    steps: usize,
    trace: &LstmTrace,
    dh_out: &[f64],
    g_wih: &mut [f64],
    g_whh: &mut [f64],
    g_b: &mut [f64],
    du: &mut [f64],
) {
    let (ni, h) = (w.inputs, w.hidden);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dpre = vec![0.0; 4 * h];
    du.iter_mut().for_each(|v| *v = 0.0);
    for t in (0..steps).rev() {
        let gates = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = trace.tanh_c[t * h + j];
            let c_prev = if t == 0 { 0.0 } else { trace.c[(t - 1) * h + j] };
            let dh = dh_out[t * h + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dpre[j] = dc * g * i * (1.0 - i);
            dpre[h + j] = dc * c_prev * f * (1.0 - f);
            dpre[2 * h + j] = dc * i * (1.0 - g * g);
            dpre[3 * h + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let ut = &u[t * ni..(t + 1) * ni];
        let dut = &mut du[t * ni..(t + 1) * ni];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * h {
            let d = dpre[r];
            if d == 0.0 {
                continue;
            }
            g_b[r] += d;
            axpy(d, ut, &mut g_wih[r * ni..(r + 1) * ni]);
            axpy(d, &w.wih[r * ni..(r + 1) * ni], dut);
            if t > 0 {
                let h_prev = &trace.h[(t - 1) * h..t * h];
                axpy(d, h_prev, &mut g_whh[r * h..(r + 1) * h]);
                axpy(d, &w.whh[r * h..(r + 1) * h], &mut dh_next);
            }
        }
    }
}

impl ClstmModel {
    /// All weights zero, identity standardization.
    pub fn zeros(shape: ClstmShape) -> Self {
        ClstmModel {
            shape,
            scaler: Standardizer::default(),
            params: vec![0.0; shape.param_count()],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for every tensor, biases
    /// included.
    pub fn init(shape: ClstmShape, seed: u64) -> Self {
        let mut model = Self::zeros(shape);
        let layout = shape.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = 1.0 / ((shape.channels * shape.kernel) as f64).sqrt();
        let l1 = 1.0 / (shape.hidden1 as f64).sqrt();
        let l2 = 1.0 / (shape.hidden2 as f64).sqrt();
        let bounds = [
            (layout.conv_w, conv),
            (layout.conv_b, conv),
            (layout.l1_wih, l1),
            (layout.l1_whh, l1),
            (layout.l1_b, l1),
            (layout.l2_wih, l2),
            (layout.l2_whh, l2),
            (layout.l2_b, l2),
            (layout.dense_w, l2),
            (layout.dense_b, l2),
        ];
        for (range, bound) in bounds {
            for p in &mut model.params[range] {
                *p = rng.random_range(-bound..bound);
            }
        }
        model
    }

    /// Order-sensitive digest of the weights, used to detect stale caches.
    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, p| {
            (h ^ p.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    fn lstm1(&self, layout: &Layout) -> LstmWeights<'_> {
        LstmWeights {
            wih: &self.params[layout.l1_wih.clone()],
            whh: &self.params[layout.l1_whh.clone()],
            b: &self.params[layout.l1_b.clone()],
            inputs: self.shape.filters,
            hidden: self.shape.hidden1,
        }
    }

    fn lstm2(&self, layout: &Layout) -> LstmWeights<'_> {
        LstmWeights {
            wih: &self.params[layout.l2_wih.clone()],
            whh: &self.params[layout.l2_whh.clone()],
            b: &self.params[layout.l2_b.clone()],
            inputs: self.shape.hidden1,
            hidden: self.shape.hidden2,
        }
    }

    /// Forward pass on an already-standardized `steps x channels` input.
    /// Returns the raw output (standardized target units) and the cache.
    pub fn forward_raw(&self, input: &[f64]) -> Result<ClstmCache> {
        let s = &self.shape;
        let len = input.len() / s.channels;
        if input.len() != len * s.channels {
            return Err(Error::SequenceLength {
                expected: len * s.channels,
                got: input.len(),
            });
        }
        if len < s.kernel {
            return Err(Error::SequenceLength {
                expected: s.kernel,
                got: len,
            });
        }
        let layout = s.layout();
        let steps = len - s.kernel + 1;
        let window = s.kernel * s.channels;
        let conv_w = &self.params[layout.conv_w.clone()];
        let conv_b = &self.params[layout.conv_b.clone()];

        let mut conv_pre = vec![0.0; steps * s.filters];
        let mut conv_out = vec![0.0; steps * s.filters];
        for t in 0..steps {
            let x = &input[t * s.channels..t * s.channels + window];
            for f in 0..s.filters {
                let z = conv_b[f] + dot(&conv_w[f * window..(f + 1) * window], x);
                conv_pre[t * s.filters + f] = z;
                conv_out[t * s.filters + f] = z.max(0.0);
            }
        }

        let mut l1 = LstmTrace::default();
        lstm_forward(&self.lstm1(&layout), &conv_out, steps, &mut l1);
        let mut l2 = LstmTrace::default();
        lstm_forward(&self.lstm2(&layout), &l1.h, steps, &mut l2);

        let last = &l2.h[(steps - 1) * s.hidden2..];
        let output = self.params[layout.dense_b.start] + dot(&self.params[layout.dense_w], last);
        Ok(ClstmCache {
            checksum: self.checksum(),
            steps,
            input: input.to_vec(),
            conv_pre,
            conv_out,
            l1,
            l2,
            output,
        })
    }

    /// Standardizes a feature sequence and runs [`forward_raw`](Self::forward_raw).
    pub fn forward(&self, sequence: &[[f64; 2]]) -> Result<ClstmCache> {
        let input: Vec<f64> = sequence
            .iter()
            .flat_map(|x| self.scaler.input(x))
            .collect();
        self.forward_raw(&input)
    }

    /// Prediction in normalized-force units for exactly `seq_len` steps.
    pub fn predict(&self, sequence: &[[f64; 2]]) -> Result<f64> {
        if sequence.len() != self.shape.seq_len {
            return Err(Error::SequenceLength {
                expected: self.shape.seq_len,
                got: sequence.len(),
            });
        }
        Ok(self.scaler.output(self.forward(sequence)?.output))
    }

    /// Gradient of the loss w.r.t. every weight, given `d_output`, the
    /// derivative of the loss w.r.t. the raw output of the cached pass.
    pub fn backward(&self, cache: &ClstmCache, d_output: f64) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, d_output, &mut grad)?;
        Ok(grad)
    }

    /// Like [`backward`](Self::backward) but adds into `grad`.
    pub fn backward_into(&self, cache: &ClstmCache, d_output: f64, grad: &mut [f64]) -> Result<()> {
        if cache.checksum != self.checksum() || grad.len() != self.params.len() {
            return Err(Error::StaleCache);
        }
        let s = &self.shape;
        let layout = s.layout();
        let steps = cache.steps;

        // Dense.
        let last = &cache.l2.h[(steps - 1) * s.hidden2..];
        grad[layout.dense_b.start] += d_output;
        axpy(d_output, last, &mut grad[layout.dense_w.clone()]);
        let mut dh2 = vec![0.0; steps * s.hidden2];
        axpy(
            d_output,
            &self.params[layout.dense_w.clone()],
            &mut dh2[(steps - 1) * s.hidden2..],
        );

        // LSTM 2.
        let mut dh1 = vec![0.0; steps * s.hidden1];
        {
            let (head, tail) = grad.split_at_mut(layout.l2_whh.start);
            let (g_whh, g_b) = tail.split_at_mut(layout.l2_b.start - layout.l2_whh.start);
            lstm_backward(
                &self.lstm2(&layout),
                &cache.l1.h,
                steps,
                &cache.l2,
                &dh2,
                &mut head[layout.l2_wih.clone()],
                g_whh,
                &mut g_b[..4 * s.hidden2],
                &mut dh1,
            );
        }

        // LSTM 1.
        let mut da = vec![0.0; steps * s.filters];
        {
            let (head, tail) = grad.split_at_mut(layout.l1_whh.start);
            let (g_whh, g_b) = tail.split_at_mut(layout.l1_b.start - layout.l1_whh.start);
            lstm_backward(
                &self.lstm1(&layout),
                &cache.conv_out,
                steps,
                &cache.l1,
                &dh1,
                &mut head[layout.l1_wih.clone()],
                g_whh,
                &mut g_b[..4 * s.hidden1],
                &mut da,
            );
        }

        // ReLU + convolution.
        let window = s.kernel * s.channels;
        for t in 0..steps {
            let x = &cache.input[t * s.channels..t * s.channels + window];
            for f in 0..s.filters {
                if cache.conv_pre[t * s.filters + f] <= 0.0 {
                    continue;
                }
                let dz = da[t * s.filters + f];
                grad[layout.conv_b.start + f] += dz;
                let w0 = layout.conv_w.start + f * window;
                axpy(dz, x, &mut grad[w0..w0 + window]);
            }
        }
        Ok(())
    }
}

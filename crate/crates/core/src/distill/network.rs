//! Dense ReLU network with inverted dropout, masked MSE loss and Adam.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DistillConfig;
use crate::error::{ListenError, Result};

/// Fully connected layer; `weights` is `inputs × outputs`, row-major, so
/// `weights[i * outputs + o]` connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero biases.
    fn xavier(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = xavier_bound(inputs, outputs);
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..bound);
        }
        layer
    }

    /// Weights leaving input `i`.
    fn fan_out(&self, i: usize) -> &[f64] {
        &self.weights[i * self.outputs..(i + 1) * self.outputs]
    }

    /// `out[b] = bias + sum_i x[b][i] * fan_out(i)` for a row-major batch.
    /// Zero inputs are skipped; the rest are accumulated four at a time.
    fn apply(&self, x: &[f64], batch: usize, out: &mut Vec<f64>, active: &mut Vec<usize>) {
        out.clear();
        out.reserve(batch * self.outputs);
        for xb in x.chunks_exact(self.inputs).take(batch) {
            let start = out.len();
            out.extend_from_slice(&self.biases);
            let ob = &mut out[start..];
            active.clear();
            active.extend((0..self.inputs).filter(|&i| xb[i] != 0.0));
            let mut groups = active.chunks_exact(4);
            for g in &mut groups {
                axpy4(
                    [xb[g[0]], xb[g[1]], xb[g[2]], xb[g[3]]],
                    [self.fan_out(g[0]), self.fan_out(g[1]), self.fan_out(g[2]), self.fan_out(g[3])],
                    ob,
                );
            }
            for &i in groups.remainder() {
                axpy(xb[i], self.fan_out(i), ob);
            }
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a[0] x[0] + a[1] x[1] + a[2] x[2] + a[3] x[3]`.
fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the running CPU supports AVX.
        return unsafe { axpy4_avx(a, x, y) };
    }
    axpy4_portable(a, x, y)
}

// Same operations in the same order as the portable path, only wider.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn axpy4_avx(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    axpy4_portable(a, x, y)
}

#[inline(always)]
fn axpy4_portable(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for o in 0..n {
        y[o] += a[0] * x0[o] + a[1] * x1[o] + a[2] * x2[o] + a[3] * x3[o];
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Adam moment estimates, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Vec<Layer>,
    pub second: Vec<Layer>,
}

/// Distilled explainer network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledModel {
    pub config: DistillConfig,
    pub layers: Vec<Layer>,
    pub optimizer: AdamState,
    /// Optimizer steps taken.
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardPass {
    pub batch: usize,
    /// Input of every layer: the batch itself, then each hidden activation
    /// after ReLU and dropout.
    pub inputs: Vec<Vec<f64>>,
    /// Hidden-layer pre-activations.
    pub pre_activations: Vec<Vec<f64>>,
    /// Dropout multipliers (`0` or `1 / (1 - p)`) per hidden layer; empty at
    /// inference.
    pub dropout: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Loss of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// Mean squared error over unmasked output cells.
    pub data: f64,
    /// `l2_coefficient * sum(w^2)` over all weights, biases excluded.
    pub penalty: f64,
}

impl BatchLoss {
    pub fn total(self) -> f64 {
        self.data + self.penalty
    }
}

/// Per-parameter gradients, shaped like the network's layers.
pub type Gradients = Vec<Layer>;

impl DistilledModel {
    /// Glorot-uniform initialization, deterministic under `config.seed`.
    pub fn init(config: &DistillConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = config.layer_dims();
        let layers: Vec<Layer> = dims.windows(2).map(|w| Layer::xavier(w[0], w[1], &mut rng)).collect();
        let zeros: Vec<Layer> = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self {
            config: config.clone(),
            layers,
            optimizer: AdamState {
                first: zeros.clone(),
                second: zeros,
            },
            step: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Checks layer shapes against the configuration and that every
    /// parameter is finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let dims = self.config.layer_dims();
        let shaped = |layers: &[Layer]| {
            layers.len() == dims.len() - 1
                && layers.iter().zip(dims.windows(2)).all(|(l, w)| {
                    l.inputs == w[0]
                        && l.outputs == w[1]
                        && l.weights.len() == w[0] * w[1]
                        && l.biases.len() == w[1]
                })
        };
        if !shaped(&self.layers) || !shaped(&self.optimizer.first) || !shaped(&self.optimizer.second) {
            return Err(ListenError::Validation(format!(
                "model layer shapes do not match configured dims {dims:?}"
            )));
        }
        let finite = |layers: &[Layer]| {
            layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
        };
        if !finite(&self.layers) || !finite(&self.optimizer.first) || !finite(&self.optimizer.second) {
            return Err(ListenError::Validation("model contains non-finite parameters".to_string()));
        }
        Ok(())
    }

    /// Runs `batch` row-major inputs through the network. Dropout is applied
    /// only in [`Mode::Train`], drawing from `rng`.
    pub fn forward(&self, inputs: &[f64], batch: usize, mode: Mode, rng: &mut dyn RngCore) -> Result<ForwardPass> {
        if inputs.len() != batch * self.input_dim() {
            return Err(ListenError::Dimension {
                context: "network input".to_string(),
                expected: batch * self.input_dim(),
                actual: inputs.len(),
            });
        }
        let p = self.config.dropout_rate;
        let hidden = self.layers.len() - 1;
        let mut pass = ForwardPass {
            batch,
            inputs: vec![inputs.to_vec()],
            ..Default::default()
        };
        let mut active = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.apply(&pass.inputs[l], batch, &mut z, &mut active);
            if l == hidden {
                pass.output = z;
                break;
            }
            let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            if mode == Mode::Train && p > 0.0 {
                let scale = 1.0 / (1.0 - p);
                let keep: Vec<f64> = (0..a.len())
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
                    .collect();
                for (v, k) in a.iter_mut().zip(&keep) {
                    *v *= k;
                }
                pass.dropout.push(keep);
            }
            pass.pre_activations.push(z);
            pass.inputs.push(a);
        }
        Ok(pass)
    }

    /// Inference on a single flattened input.
    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(ListenError::Dimension {
                context: "network input".to_string(),
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let widest = self.layers.iter().map(|l| l.inputs.max(l.outputs)).max().unwrap_or(0);
        let mut x = Vec::with_capacity(widest);
        x.extend_from_slice(input);
        let mut z = Vec::with_capacity(widest);
        let mut active = Vec::with_capacity(widest);
        let hidden = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&x, 1, &mut z, &mut active);
            if l < hidden {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut x, &mut z);
        }
        Ok(x)
    }

    pub fn loss(&self, pass: &ForwardPass, targets: &[f64], masks: &[f64]) -> Result<BatchLoss> {
        self.check_targets(pass, targets, masks)?;
        let cells: f64 = masks.iter().sum();
        let data = if cells > 0.0 {
            pass.output
                .iter()
                .zip(targets)
                .zip(masks)
                .map(|((y, t), m)| m * (y - t) * (y - t))
                .sum::<f64>()
                / cells
        } else {
            0.0
        };
        let squares: f64 = self
            .layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum();
        Ok(BatchLoss {
            data,
            penalty: self.config.l2_coefficient * squares,
        })
    }

    fn check_targets(&self, pass: &ForwardPass, targets: &[f64], masks: &[f64]) -> Result<()> {
        let expected = pass.batch * self.output_dim();
        for (what, len) in [("targets", targets.len()), ("masks", masks.len())] {
            if len != expected {
                return Err(ListenError::Dimension {
                    context: what.to_string(),
                    expected,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// Gradients of [`DistilledModel::loss`] by backpropagation through the
    /// recorded pass (including its dropout multipliers).
    pub fn backward(&self, pass: &ForwardPass, targets: &[f64], masks: &[f64]) -> Result<Gradients> {
        self.check_targets(pass, targets, masks)?;
        let cells: f64 = masks.iter().sum();
        let mut grads: Gradients = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();

        // dL/d(output)
        let mut delta: Vec<f64> = if cells > 0.0 {
            pass.output
                .iter()
                .zip(targets)
                .zip(masks)
                .map(|((y, t), m)| 2.0 * m * (y - t) / cells)
                .collect()
        } else {
            vec![0.0; pass.output.len()]
        };

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let grad = &mut grads[l];
            let input = &pass.inputs[l];
            for b in 0..pass.batch {
                let d = &delta[b * layer.outputs..(b + 1) * layer.outputs];
                let x = &input[b * layer.inputs..(b + 1) * layer.inputs];
                for (i, &xi) in x.iter().enumerate() {
                    if xi != 0.0 {
                        axpy(xi, d, &mut grad.weights[i * layer.outputs..(i + 1) * layer.outputs]);
                    }
                }
                axpy(1.0, d, &mut grad.biases);
            }
            if l == 0 {
                break;
            }
            // propagate to the previous layer's activation
            let mut prev = vec![0.0; pass.batch * layer.inputs];
            for b in 0..pass.batch {
                let d = &delta[b * layer.outputs..(b + 1) * layer.outputs];
                let out = &mut prev[b * layer.inputs..(b + 1) * layer.inputs];
                for (i, v) in out.iter_mut().enumerate() {
                    *v = dot(layer.fan_out(i), d);
                }
            }
            let h = l - 1;
            if let Some(keep) = pass.dropout.get(h) {
                for (v, k) in prev.iter_mut().zip(keep) {
                    *v *= k;
                }
            }
            for (v, z) in prev.iter_mut().zip(&pass.pre_activations[h]) {
                if *z <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = prev;
        }

        let l2 = self.config.l2_coefficient;
        if l2 != 0.0 {
            for (g, layer) in grads.iter_mut().zip(&self.layers) {
                axpy(2.0 * l2, &layer.weights, &mut g.weights);
            }
        }
        Ok(grads)
    }

    /// One Adam update with bias-corrected moments.
    pub fn apply_adam(&mut self, grads: &Gradients) {
        self.step += 1;
        let c = &self.config;
        let (b1, b2, eps, lr) = (c.adam_beta1, c.adam_beta2, c.adam_epsilon, c.learning_rate);
        let t = self.step as i32;
        let correct1 = 1.0 - b1.powi(t);
        let correct2 = 1.0 - b2.powi(t);
        let update = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (l, g) in grads.iter().enumerate() {
            let layer = &mut self.layers[l];
            let m = &mut self.optimizer.first[l];
            let v = &mut self.optimizer.second[l];
            update(&mut layer.weights, &mut m.weights, &mut v.weights, &g.weights);
            update(&mut layer.biases, &mut m.biases, &mut v.biases, &g.biases);
        }
    }

    /// Forward in train mode, loss, backpropagation and one Adam step on a
    /// row-major batch. Returns the batch loss before the update.
    pub fn train_step(
        &mut self,
        inputs: &[f64],
        targets: &[f64],
        masks: &[f64],
        batch: usize,
        rng: &mut dyn RngCore,
    ) -> Result<BatchLoss> {
        if batch == 0 {
            return Err(ListenError::EmptyInput("training batch is empty".to_string()));
        }
        let pass = self.forward(inputs, batch, Mode::Train, rng)?;
        let loss = self.loss(&pass, targets, masks)?;
        if !loss.total().is_finite() {
            return Err(ListenError::Divergence {
                step: self.step,
                loss: loss.total(),
            });
        }
        let grads = self.backward(&pass, targets, masks)?;
        self.apply_adam(&grads);
        Ok(loss)
    }
}

/// Largest relative difference between backpropagated gradients and central
/// finite differences of the total loss, over every weight and bias. Dropout
/// is off for both.
pub fn max_gradient_error(
    model: &DistilledModel,
    inputs: &[f64],
    targets: &[f64],
    masks: &[f64],
    batch: usize,
    epsilon: f64,
) -> Result<f64> {
    let mut quiet = rand::rngs::mock::StepRng::new(0, 0);
    let pass = model.forward(inputs, batch, Mode::Infer, &mut quiet)?;
    let analytic = model.backward(&pass, targets, masks)?;
    let mut probe = model.clone();
    let mut loss_at = |probe: &DistilledModel| -> Result<f64> {
        let pass = probe.forward(inputs, batch, Mode::Infer, &mut quiet)?;
        Ok(probe.loss(&pass, targets, masks)?.total())
    };
    let mut worst: f64 = 0.0;
    for l in 0..model.layers.len() {
        let n_weights = model.layers[l].weights.len();
        for i in 0..n_weights + model.layers[l].biases.len() {
            let (exact, original) = if i < n_weights {
                (analytic[l].weights[i], model.layers[l].weights[i])
            } else {
                (analytic[l].biases[i - n_weights], model.layers[l].biases[i - n_weights])
            };
            let set = |probe: &mut DistilledModel, v: f64| {
                if i < n_weights {
                    probe.layers[l].weights[i] = v;
                } else {
                    probe.layers[l].biases[i - n_weights] = v;
                }
            };
            set(&mut probe, original + epsilon);
            let plus = loss_at(&probe)?;
            set(&mut probe, original - epsilon);
            let minus = loss_at(&probe)?;
            set(&mut probe, original);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let scale = exact.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((exact - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

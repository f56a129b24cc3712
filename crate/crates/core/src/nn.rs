//! Minimal dense network engine.
//!
//! A regression MLP is a chain of dense layers with ReLU hidden activations
//! and an identity head. The engine provides exactly what the attribution
//! and uncertainty modules need: a forward pass that records per-layer
//! pre/post-activations (LRP consumes the trace), reverse-mode input
//! gradients, Adam training with a best-validation snapshot, and test-time
//! dropout plans with inverted scaling.
//!
//! Networks are immutable once built; `forward` and `input_gradient` are
//! pure and safe to call concurrently.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::fmath;
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`; the ReLU sub-gradient at 0 is taken as 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
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

/// One dense layer: `a = activation(W x + b)`, weights `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::DimensionMismatch {
                context: "DenseLayer::new bias",
                expected: weights.rows(),
                got: bias.len(),
            });
        }
        if !weights.is_finite() || !bias.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "DenseLayer::new parameters",
            });
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    #[inline]
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Per-layer pre-activations (`z`) and post-activations (`a`, after any
/// dropout mask) recorded by a forward pass. LRP propagates through this.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

/// Test-time dropout masks for every hidden layer, with inverted-dropout
/// scaling: kept units carry `1/(1-rate)` so the expected forward pass
/// matches the mask-free pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutPlan {
    rate: f64,
    masks: Vec<Vec<f64>>,
    seed: u64,
}

impl DropoutPlan {
    /// Reassembles a plan from stored keep/drop bits.
    pub fn from_bits(rate: f64, bits: &[Vec<bool>], seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter {
                context: "DropoutPlan::from_bits",
                detail: alloc::format!("rate must be in [0, 1), got {rate}"),
            });
        }
        let scale = 1.0 / (1.0 - rate);
        let masks = bits
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|&keep| if keep { scale } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(DropoutPlan { rate, masks, seed })
    }

    #[inline]
    pub fn rate(&self) -> f64 {
        self.rate
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mask values per hidden layer (0 or `1/(1-rate)`).
    #[inline]
    pub fn masks(&self) -> &[Vec<f64>] {
        &self.masks
    }

    pub fn keep_bits(&self) -> Vec<Vec<bool>> {
        self.masks
            .iter()
            .map(|layer| layer.iter().map(|&m| m != 0.0).collect())
            .collect()
    }
}

/// Training hyperparameters. The optimizer is Adam with the usual
/// (0.9, 0.999, 1e-8) moment constants.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 32,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidParameter {
                context: "TrainConfig",
                detail: alloc::format!("epochs must be >= 1, got {}", self.epochs),
            });
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidParameter {
                context: "TrainConfig",
                detail: alloc::format!(
                    "validation_fraction must be in (0, 1), got {}",
                    self.validation_fraction
                ),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                context: "TrainConfig",
                detail: "batch_size must be >= 1".into(),
            });
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter {
                context: "TrainConfig",
                detail: alloc::format!(
                    "learning_rate must be positive, got {}",
                    self.learning_rate
                ),
            });
        }
        Ok(())
    }
}

/// A feed-forward ReLU regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Validates layer chaining and the identity regression head.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter {
                context: "Mlp::new",
                detail: "network needs at least one layer".into(),
            });
        }
        for pair in layers.windows(2) {
            if pair[1].fan_in() != pair[0].fan_out() {
                return Err(Error::DimensionMismatch {
                    context: "Mlp::new layer chain",
                    expected: pair[0].fan_out(),
                    got: pair[1].fan_in(),
                });
            }
        }
        if layers.last().unwrap().activation() != Activation::Identity {
            return Err(Error::InvalidParameter {
                context: "Mlp::new",
                detail: "last layer must use the identity activation".into(),
            });
        }
        Ok(Mlp { layers })
    }

    /// He-style seeded random network: ReLU hidden layers, identity head,
    /// uniform weights in `±sqrt(6/fan_in)`, zero biases.
    pub fn random(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(random_layer(&mut rng, fan_in, h, Activation::Relu)?);
            fan_in = h;
        }
        layers.push(random_layer(
            &mut rng,
            fan_in,
            output_dim,
            Activation::Identity,
        )?);
        Mlp::new(layers)
    }

    #[inline]
    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    /// Layer widths including input and output, e.g. `[d, 64, 32, 16, 1]`.
    pub fn architecture(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        dims.push(self.input_dim());
        dims.extend(self.layers.iter().map(DenseLayer::fan_out));
        dims
    }

    fn check_plan(&self, plan: Option<&DropoutPlan>) -> Result<()> {
        let Some(plan) = plan else { return Ok(()) };
        let hidden = self.layers.len() - 1;
        if plan.masks().len() != hidden {
            return Err(Error::DimensionMismatch {
                context: "dropout plan layer count",
                expected: hidden,
                got: plan.masks().len(),
            });
        }
        for (l, mask) in plan.masks().iter().enumerate() {
            if mask.len() != self.layers[l].fan_out() {
                return Err(Error::DimensionMismatch {
                    context: "dropout plan mask width",
                    expected: self.layers[l].fan_out(),
                    got: mask.len(),
                });
            }
        }
        Ok(())
    }

    /// Forward pass, recording per-layer `z` and `a`.
    ///
    /// Dropout masks, when given, apply to hidden-layer activations only —
    /// never to the input or the output layer.
    pub fn forward(
        &self,
        x: &[f64],
        plan: Option<&DropoutPlan>,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::forward input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        self.check_plan(plan)?;
        let last = self.layers.len() - 1;
        let mut trace = ForwardTrace {
            input: x.to_vec(),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.mul_vec(&a)?;
            for (zk, bk) in z.iter_mut().zip(&layer.bias) {
                *zk += bk;
            }
            let mut out: Vec<f64> = z.iter().map(|&zk| layer.activation.apply(zk)).collect();
            if l < last {
                if let Some(plan) = plan {
                    for (ak, mk) in out.iter_mut().zip(&plan.masks()[l]) {
                        *ak *= mk;
                    }
                }
            }
            if !out.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteForward { layer: l });
            }
            trace.pre.push(z);
            trace.post.push(out.clone());
            a = out;
        }
        Ok((a, trace))
    }

    /// Convenience forward pass without the trace.
    pub fn output(&self, x: &[f64], plan: Option<&DropoutPlan>) -> Result<Vec<f64>> {
        self.forward(x, plan).map(|(y, _)| y)
    }

    /// `∂ y[output_index] / ∂ x` by reverse accumulation through the trace.
    pub fn input_gradient(
        &self,
        x: &[f64],
        output_index: usize,
        plan: Option<&DropoutPlan>,
    ) -> Result<Vec<f64>> {
        if output_index >= self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::input_gradient output_index",
                expected: self.output_dim(),
                got: output_index,
            });
        }
        let (_, trace) = self.forward(x, plan)?;
        let last = self.layers.len() - 1;
        let mut delta = vec![0.0; self.output_dim()];
        delta[output_index] = 1.0;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            // d a_l / d z_l, including the mask factor on hidden layers.
            let mut pre_delta = delta;
            for (dk, &zk) in pre_delta.iter_mut().zip(&trace.pre[l]) {
                *dk *= layer.activation.derivative(zk);
            }
            if l < last {
                if let Some(plan) = plan {
                    for (dk, mk) in pre_delta.iter_mut().zip(&plan.masks()[l]) {
                        *dk *= mk;
                    }
                }
            }
            delta = layer.weights.mul_vec_transposed(&pre_delta)?;
        }
        Ok(delta)
    }

    /// The ReLU sign pattern (`z > 0`) of every ReLU layer at `x`.
    ///
    /// Two inputs with equal patterns lie in the same linear region of the
    /// network, where it is exactly affine.
    pub fn activation_pattern(
        &self,
        x: &[f64],
        plan: Option<&DropoutPlan>,
    ) -> Result<Vec<Vec<bool>>> {
        let (_, trace) = self.forward(x, plan)?;
        Ok(self
            .layers
            .iter()
            .zip(&trace.pre)
            .filter(|(layer, _)| layer.activation() == Activation::Relu)
            .map(|(_, z)| z.iter().map(|&zk| zk > 0.0).collect())
            .collect())
    }
}

fn random_layer(
    rng: &mut crate::rng::StreamRng,
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
) -> Result<DenseLayer> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidParameter {
            context: "random_layer",
            detail: "layer dimensions must be positive".into(),
        });
    }
    let limit = fmath::sqrt(6.0 / fan_in as f64);
    let mut data = Vec::with_capacity(fan_out * fan_in);
    for _ in 0..fan_out * fan_in {
        data.push(rng.gen_range(-limit..limit));
    }
    DenseLayer::new(
        Matrix::from_vec(fan_out, fan_in, data)?,
        vec![0.0; fan_out],
        activation,
    )
}

/// Samples `count` independent dropout plans for the hidden layers of `mlp`.
///
/// Each hidden unit is dropped with probability `rate`; kept units are
/// scaled by `1/(1-rate)`.
pub fn sample_dropout_plans(
    mlp: &Mlp,
    rate: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<DropoutPlan>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParameter {
            context: "sample_dropout_plans",
            detail: alloc::format!("rate must be in [0, 1), got {rate}"),
        });
    }
    if count < 2 {
        return Err(Error::InvalidParameter {
            context: "sample_dropout_plans",
            detail: alloc::format!("need at least 2 plans, got {count}"),
        });
    }
    let scale = 1.0 / (1.0 - rate);
    let hidden = &mlp.layers()[..mlp.layers().len() - 1];
    let mut rng = rng_from_seed(seed);
    let mut plans = Vec::with_capacity(count);
    for _ in 0..count {
        let masks: Vec<Vec<f64>> = hidden
            .iter()
            .map(|layer| {
                (0..layer.fan_out())
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
                    .collect()
            })
            .collect();
        plans.push(DropoutPlan { rate, masks, seed });
    }
    Ok(plans)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - powi(ADAM_BETA1, self.t);
        let bc2 = 1.0 - powi(ADAM_BETA2, self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (fmath::sqrt(v_hat) + ADAM_EPS);
        }
    }
}

fn powi(base: f64, mut exp: u64) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

/// Mutable training view of a network: flat parameter and gradient buffers.
struct TrainableMlp {
    arch: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

impl TrainableMlp {
    fn from_mlp(mlp: &Mlp) -> Self {
        let mut params = Vec::new();
        for layer in mlp.layers() {
            params.extend_from_slice(layer.weights().as_slice());
            params.extend_from_slice(layer.bias());
        }
        TrainableMlp {
            arch: mlp.architecture(),
            activations: mlp.layers().iter().map(DenseLayer::activation).collect(),
            params,
        }
    }

    fn to_mlp(&self) -> Mlp {
        let mut layers = Vec::with_capacity(self.activations.len());
        let mut off = 0;
        for l in 0..self.activations.len() {
            let (fi, fo) = (self.arch[l], self.arch[l + 1]);
            let w = self.params[off..off + fi * fo].to_vec();
            off += fi * fo;
            let b = self.params[off..off + fo].to_vec();
            off += fo;
            layers.push(
                DenseLayer::new(
                    Matrix::from_vec(fo, fi, w).expect("layout"),
                    b,
                    self.activations[l],
                )
                .expect("finite params"),
            );
        }
        Mlp::new(layers).expect("valid architecture")
    }

    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        // (weight offset, bias offset) per layer in the flat buffer
        let mut out = Vec::with_capacity(self.activations.len());
        let mut off = 0;
        for l in 0..self.activations.len() {
            let (fi, fo) = (self.arch[l], self.arch[l + 1]);
            out.push((off, off + fi * fo));
            off += fi * fo + fo;
        }
        out
    }

    /// Accumulates MSE gradients for a batch into `grads`; returns the batch
    /// loss. `grads` must be zeroed by the caller.
    fn batch_gradient(
        &self,
        x: &Matrix,
        y: &Matrix,
        batch: &[usize],
        grads: &mut [f64],
        scratch: &mut Scratch,
    ) -> f64 {
        let offsets = self.layer_offsets();
        let n_layers = self.activations.len();
        let norm = 1.0 / (batch.len() * y.cols()) as f64;
        let mut loss = 0.0;

        for &row in batch {
            // forward
            scratch.acts[0].copy_from_slice(x.row(row));
            for l in 0..n_layers {
                let (fi, fo) = (self.arch[l], self.arch[l + 1]);
                let (w_off, b_off) = offsets[l];
                let w = &self.params[w_off..w_off + fi * fo];
                let b = &self.params[b_off..b_off + fo];
                for k in 0..fo {
                    let mut z = b[k];
                    let wrow = &w[k * fi..(k + 1) * fi];
                    let a_prev = &scratch.acts[l];
                    for j in 0..fi {
                        z += wrow[j] * a_prev[j];
                    }
                    scratch.pre[l][k] = z;
                    scratch.acts[l + 1][k] = self.activations[l].apply(z);
                }
            }
            // output delta
            let pred = &scratch.acts[n_layers];
            let target = y.row(row);
            for k in 0..y.cols() {
                let diff = pred[k] - target[k];
                loss += diff * diff * norm;
                scratch.delta[n_layers - 1][k] = 2.0 * diff * norm;
            }
            // backward
            for l in (0..n_layers).rev() {
                let (fi, fo) = (self.arch[l], self.arch[l + 1]);
                let (w_off, b_off) = offsets[l];
                for k in 0..fo {
                    let d = scratch.delta[l][k] * self.activations[l].derivative(scratch.pre[l][k]);
                    scratch.delta[l][k] = d;
                }
                // parameter grads
                {
                    let a_prev = &scratch.acts[l];
                    for k in 0..fo {
                        let d = scratch.delta[l][k];
                        if d == 0.0 {
                            continue;
                        }
                        let g_row = &mut grads[w_off + k * fi..w_off + (k + 1) * fi];
                        for j in 0..fi {
                            g_row[j] += d * a_prev[j];
                        }
                        grads[b_off + k] += d;
                    }
                }
                // propagate
                if l > 0 {
                    let w = &self.params[w_off..w_off + fi * fo];
                    let (lower, upper) = scratch.delta.split_at_mut(l);
                    let down = &mut lower[l - 1];
                    let cur = &upper[0];
                    down[..fi].fill(0.0);
                    for k in 0..fo {
                        let d = cur[k];
                        if d == 0.0 {
                            continue;
                        }
                        let wrow = &w[k * fi..(k + 1) * fi];
                        for j in 0..fi {
                            down[j] += d * wrow[j];
                        }
                    }
                }
            }
        }
        loss
    }

    fn mse(&self, x: &Matrix, y: &Matrix, rows: &[usize], scratch: &mut Scratch) -> f64 {
        let offsets = self.layer_offsets();
        let n_layers = self.activations.len();
        let mut total = 0.0;
        for &row in rows {
            scratch.acts[0].copy_from_slice(x.row(row));
            for l in 0..n_layers {
                let (fi, fo) = (self.arch[l], self.arch[l + 1]);
                let (w_off, b_off) = offsets[l];
                let w = &self.params[w_off..w_off + fi * fo];
                let b = &self.params[b_off..b_off + fo];
                for k in 0..fo {
                    let mut z = b[k];
                    let wrow = &w[k * fi..(k + 1) * fi];
                    let a_prev = &scratch.acts[l];
                    for j in 0..fi {
                        z += wrow[j] * a_prev[j];
                    }
                    scratch.acts[l + 1][k] = self.activations[l].apply(z);
                }
            }
            let pred = &scratch.acts[n_layers];
            for (p, t) in pred.iter().zip(y.row(row)) {
                let diff = p - t;
                total += diff * diff;
            }
        }
        total / (rows.len() * y.cols()) as f64
    }
}

struct Scratch {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(arch: &[usize]) -> Self {
        Scratch {
            acts: arch.iter().map(|&n| vec![0.0; n]).collect(),
            pre: arch[1..].iter().map(|&n| vec![0.0; n]).collect(),
            delta: arch[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Outcome of [`train`]: the selected snapshot plus where it came from.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Mlp,
    pub best_epoch: usize,
    pub best_validation_mse: f64,
}

/// Trains an MLP (ReLU hidden layers of the given sizes, identity head) on
/// `(x, y)` with Adam and mini-batch MSE, returning the parameter snapshot
/// with minimal validation MSE across epochs. Fully deterministic for a
/// given seed.
pub fn train(
    x: &Matrix,
    y: &Matrix,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let n = x.rows();
    if n < 10 {
        return Err(Error::InvalidParameter {
            context: "train",
            detail: alloc::format!("need at least 10 rows, got {n}"),
        });
    }
    if y.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "train targets",
            expected: n,
            got: y.rows(),
        });
    }

    let mut rng = rng_from_seed(derive_seed(config.seed, &[0x7261_696e]));
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut rng);
    let n_val = fmath::round((n as f64) * config.validation_fraction).max(1.0) as usize;
    let n_val = n_val.min(n - 1);
    let (train_rows, val_rows) = order.split_at(n - n_val);
    let mut train_rows = train_rows.to_vec();
    let val_rows = val_rows.to_vec();

    let init = Mlp::random(
        x.cols(),
        hidden,
        y.cols(),
        derive_seed(config.seed, &[0x696e_6974]),
    )?;
    let mut net = TrainableMlp::from_mlp(&init);
    let mut scratch = Scratch::new(&net.arch);
    let mut grads = vec![0.0; net.params.len()];
    let mut adam = AdamState::new(net.params.len());

    let mut best_params = net.params.clone();
    let mut best_mse = net.mse(x, y, &val_rows, &mut scratch);
    let mut best_epoch = 0;

    for epoch in 1..=config.epochs {
        shuffle(&mut train_rows, &mut rng);
        for batch in train_rows.chunks(config.batch_size) {
            grads.fill(0.0);
            let loss = net.batch_gradient(x, y, batch, &mut grads, &mut scratch);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut net.params, &grads, config.learning_rate);
        }
        let val_mse = net.mse(x, y, &val_rows, &mut scratch);
        if !val_mse.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if val_mse < best_mse {
            best_mse = val_mse;
            best_epoch = epoch;
            best_params.copy_from_slice(&net.params);
        }
    }

    net.params = best_params;
    Ok(TrainReport {
        model: net.to_mlp(),
        best_epoch,
        best_validation_mse: best_mse,
    })
}

/// Fisher-Yates with our stream RNG (avoids pulling rand's `alloc` seq API).
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut crate::rng::StreamRng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

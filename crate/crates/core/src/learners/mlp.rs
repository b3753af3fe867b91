//! One-hidden-layer perceptron regressing the concern score.
//!
//! ```text
//! h = s(b1 + W1ᵀx)          W1: K × K_h
//! o = G(b2 + W2ᵀh)          W2: K_h × L, L = 5
//! r = sigmoid(Σ v_l · o_l)  v: the trait weighting vector (fixed)
//! ```
//!
//! The five outputs play the role of per-trait predictions and the final
//! layer combines them exactly like [`crate::concern::sigmoid_score`].
//! Training minimizes `½(r − t)²` averaged over a minibatch plus
//! `l2/2 · (‖W1‖² + ‖W2‖²)` with Adam.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_xy, Matrix, Regressor};
use crate::concern::{sigmoid, WeightVector};
use crate::error::{invalid, Error, Result};
use crate::rng_from_seed;

pub const MLP_OUTPUTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Identity => a,
            Activation::Tanh => a.tanh(),
            Activation::Sigmoid => sigmoid(a),
            Activation::Relu => a.max(0.0),
        }
    }

    /// Derivative at pre-activation `a`, given `out = apply(a)`.
    fn derivative(self, a: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_units: 80,
            epochs: 90,
            learning_rate: 1e-5,
            l2: 1e-5,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden_units > 0
            && self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.l2 >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid training configuration {self:?}")))
        }
    }

    /// Sets one field from its textual form, as found in `key=value`
    /// configuration files.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| invalid(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "hidden_units" => self.hidden_units = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "hidden_activation" => self.hidden_activation = Activation::parse(value)?,
            "output_activation" => self.output_activation = Activation::parse(value)?,
            other => return Err(invalid(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub outputs: usize,
    /// `input_dim × hidden_units`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden_units × outputs`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub head: WeightVector,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output_pre: Vec<f64>,
    pub output: Vec<f64>,
    pub concern: f64,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden_units: usize, hidden: Activation, output: Activation) -> Self {
        Self {
            input_dim,
            hidden_units,
            outputs: MLP_OUTPUTS,
            w1: vec![0.0; input_dim * hidden_units],
            b1: vec![0.0; hidden_units],
            w2: vec![0.0; hidden_units * MLP_OUTPUTS],
            b2: vec![0.0; MLP_OUTPUTS],
            hidden_activation: hidden,
            output_activation: output,
            head: WeightVector::default(),
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(input_dim: usize, cfg: &TrainConfig, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, cfg.hidden_units, cfg.hidden_activation, cfg.output_activation);
        let mut rng = rng_from_seed(seed);
        let a1 = 1.0 / (input_dim.max(1) as f64).sqrt();
        let a2 = 1.0 / (cfg.hidden_units as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (k, h, l) = (self.input_dim, self.hidden_units, self.outputs);
        if l != MLP_OUTPUTS {
            return Err(invalid(format!("expected {MLP_OUTPUTS} outputs, found {l}")));
        }
        if self.w1.len() != k * h || self.b1.len() != h || self.w2.len() != h * l || self.b2.len() != l {
            return Err(invalid(format!(
                "parameter shapes do not match {k} -> {h} -> {l}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let h = self.hidden_units;
        let mut hidden_pre = self.b1.clone();
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                let row = &self.w1[k * h..(k + 1) * h];
                for (a, w) in hidden_pre.iter_mut().zip(row) {
                    *a += xk * w;
                }
            }
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&a| self.hidden_activation.apply(a)).collect();

        let mut output_pre = self.b2.clone();
        for (j, &hj) in hidden.iter().enumerate() {
            let row = &self.w2[j * self.outputs..(j + 1) * self.outputs];
            for (a, w) in output_pre.iter_mut().zip(row) {
                *a += hj * w;
            }
        }
        let output: Vec<f64> = output_pre.iter().map(|&a| self.output_activation.apply(a)).collect();
        let z: f64 = self.head.values().iter().zip(&output).map(|(v, o)| v * o).sum();
        Forward {
            hidden_pre,
            hidden,
            output_pre,
            output,
            concern: sigmoid(z),
        }
    }

    pub fn predict_concern(&self, x: &[f64]) -> f64 {
        self.forward(x).concern
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.w1.iter().chain(&self.w2).map(|w| w * w).sum()
    }

    pub fn param_norm(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }

    /// `½(r − t)² + l2/2·(‖W1‖² + ‖W2‖²)` for one sample.
    pub fn objective(&self, x: &[f64], target: f64, l2: f64) -> f64 {
        let r = self.predict_concern(x);
        0.5 * (r - target).powi(2) + 0.5 * l2 * self.weight_norm_sq()
    }
}

/// `(hidden, output)` of a forward pass.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let f = params.forward(x);
    (f.hidden, f.output)
}

impl Regressor for MlpParams {
    fn predict_one(&self, x: &[f64]) -> f64 {
        self.predict_concern(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGradients {
    fn zeros_like(p: &MlpParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
        }
    }

    fn clear(&mut self) {
        for g in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Adds `scale · ∂(½(r − t)²)/∂θ` for one sample to `grads` and returns the
/// sample's data loss. Only rows of W1 with nonzero input are touched.
fn accumulate(p: &MlpParams, x: &[f64], target: f64, scale: f64, grads: &mut MlpGradients) -> f64 {
    let f = p.forward(x);
    let r = f.concern;
    let dz = (r - target) * r * (1.0 - r);

    let delta2: Vec<f64> = (0..p.outputs)
        .map(|l| {
            dz * p.head.values()[l] * p.output_activation.derivative(f.output_pre[l], f.output[l])
        })
        .collect();
    for l in 0..p.outputs {
        grads.b2[l] += scale * delta2[l];
    }
    let mut delta1 = vec![0.0; p.hidden_units];
    for j in 0..p.hidden_units {
        let row = &p.w2[j * p.outputs..(j + 1) * p.outputs];
        let g_row = &mut grads.w2[j * p.outputs..(j + 1) * p.outputs];
        let mut back = 0.0;
        for l in 0..p.outputs {
            g_row[l] += scale * f.hidden[j] * delta2[l];
            back += row[l] * delta2[l];
        }
        delta1[j] = back * p.hidden_activation.derivative(f.hidden_pre[j], f.hidden[j]);
    }
    for (g, d) in grads.b1.iter_mut().zip(&delta1) {
        *g += scale * d;
    }
    let h = p.hidden_units;
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            let g_row = &mut grads.w1[k * h..(k + 1) * h];
            for (g, d) in g_row.iter_mut().zip(&delta1) {
                *g += scale * xk * d;
            }
        }
    }
    0.5 * (r - target).powi(2)
}

fn add_weight_decay(p: &MlpParams, grads: &mut MlpGradients, l2: f64) {
    if l2 == 0.0 {
        return;
    }
    for (g, w) in grads.w1.iter_mut().zip(&p.w1) {
        *g += l2 * w;
    }
    for (g, w) in grads.w2.iter_mut().zip(&p.w2) {
        *g += l2 * w;
    }
}

/// Gradient of [`MlpParams::objective`] by backpropagation.
pub fn mlp_backward(params: &MlpParams, x: &[f64], target: f64, l2: f64) -> Result<MlpGradients> {
    params.validate()?;
    if x.len() != params.input_dim {
        return Err(invalid(format!(
            "input has {} features, network expects {}",
            x.len(),
            params.input_dim
        )));
    }
    let mut grads = MlpGradients::zeros_like(params);
    accumulate(params, x, target, 1.0, &mut grads);
    add_weight_decay(params, &mut grads, l2);
    Ok(grads)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr_t: f64, cfg: &TrainConfig) {
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + cfg.adam_eps);
        }
    }
}

pub fn mlp_train(x: &Matrix, y: &[f64], cfg: &TrainConfig) -> Result<MlpParams> {
    mlp_train_logged(x, y, cfg).map(|(p, _)| p)
}

/// Trains with Adam over seeded minibatches and also returns the mean
/// training objective of every epoch.
pub fn mlp_train_logged(x: &Matrix, y: &[f64], cfg: &TrainConfig) -> Result<(MlpParams, Vec<f64>)> {
    check_xy(x, y.len())?;
    cfg.validate()?;
    let mut p = MlpParams::init(x.cols(), cfg, cfg.seed);
    let mut grads = MlpGradients::zeros_like(&p);
    let mut adam = [
        Adam::new(p.w1.len()),
        Adam::new(p.b1.len()),
        Adam::new(p.w2.len()),
        Adam::new(p.b2.len()),
    ];
    // Shuffling draws from its own stream so the initialization seed and the
    // batch order are independent.
    let mut rng = rng_from_seed(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut t = 0i32;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                loss += accumulate(&p, x.row(i), y[i], scale, &mut grads);
            }
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss is {loss} at epoch {epoch}, batch {b}"
                )));
            }
            epoch_loss += loss;
            add_weight_decay(&p, &mut grads, cfg.l2);

            t += 1;
            let lr_t = cfg.learning_rate * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t));
            let [a1, ab1, a2, ab2] = &mut adam;
            a1.step(&mut p.w1, &grads.w1, lr_t, cfg);
            ab1.step(&mut p.b1, &grads.b1, lr_t, cfg);
            a2.step(&mut p.w2, &grads.w2, lr_t, cfg);
            ab2.step(&mut p.b2, &grads.b2, lr_t, cfg);
        }
        history.push(epoch_loss / x.rows() as f64 + 0.5 * cfg.l2 * p.weight_norm_sq());
    }
    Ok((p, history))
}

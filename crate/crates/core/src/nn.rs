//! Sigmoid feed-forward networks trained on per-example-weighted losses with Adam.
//!
//! Weight normalization is the caller's job: `train_weighted` minimizes
//! `sum_j w_j * L(h(x_j), y_j) / batch_len` for whatever weights it is given.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::seed;
use crate::{MoewError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Regression output, width 1.
    Linear,
    /// Binary decision score, width 1.
    Score,
    /// Multiclass logits, width C.
    Logits,
    /// Raw multi-output values (autoencoder reconstructions).
    Vector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    /// Input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    pub output: OutputKind,
}

impl MlpArchitecture {
    pub fn new(layer_sizes: Vec<usize>, output: OutputKind) -> Result<Self> {
        let arch = MlpArchitecture {
            layer_sizes,
            output,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Architecture matching a task: `input -> hidden... -> 1 or C`.
    pub fn for_task(input: usize, hidden: &[usize], task: Task) -> Result<Self> {
        let (out, kind) = match task {
            Task::Regression => (1, OutputKind::Linear),
            Task::Binary => (1, OutputKind::Score),
            Task::Multiclass { classes } => (classes, OutputKind::Logits),
        };
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        MlpArchitecture::new(sizes, kind)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(MoewError::Shape("an architecture needs at least 2 layers".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(MoewError::Shape("layer widths must be positive".into()));
        }
        let out = *self.layer_sizes.last().unwrap();
        if matches!(self.output, OutputKind::Linear | OutputKind::Score) && out != 1 {
            return Err(MoewError::Shape(format!(
                "{:?} output needs width 1, got {out}",
                self.output
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// One affine map. `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Layer {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

/// Network parameters. Gradients and Adam moments reuse the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub output: OutputKind,
}

impl ModelParams {
    pub fn zeros(arch: &MlpArchitecture) -> ModelParams {
        let layers = arch
            .layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        ModelParams {
            layers,
            output: arch.output,
        }
    }

    pub fn architecture(&self) -> MlpArchitecture {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        MlpArchitecture {
            layer_sizes: sizes,
            output: self.output,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All values, layer by layer, weights before bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn fill(&mut self, v: f64) {
        self.values_mut().for_each(|x| *x = v);
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> ModelParams {
    let mut rng = seed::rng(seed);
    let mut params = ModelParams::zeros(arch);
    for layer in &mut params.layers {
        let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.gen_range(-limit..=limit);
        }
    }
    params
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn affine(layer: &Layer, input: &[f64], out: &mut [f64]) {
    for (o, (row, b)) in out
        .iter_mut()
        .zip(layer.weights.chunks_exact(layer.inputs).zip(&layer.bias))
    {
        *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

fn check_input(params: &ModelParams, dim: usize) -> Result<()> {
    if dim != params.input_width() {
        return Err(MoewError::Shape(format!(
            "network expects {} inputs, got {dim}",
            params.input_width()
        )));
    }
    Ok(())
}

/// Activations of layer `upto` (0-based over the affine layers) for one input
/// row. Hidden layers are passed through the sigmoid; the last layer is raw.
pub fn forward_row(params: &ModelParams, x: &[f64], upto: usize) -> Vec<f64> {
    let mut current = x.to_vec();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate().take(upto + 1) {
        let mut next = vec![0.0; layer.outputs];
        affine(layer, &current, &mut next);
        if l != last {
            next.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        current = next;
    }
    current
}

/// Forward pass over an `n x D` row-major matrix; returns `n x out`.
pub fn predict(params: &ModelParams, features: &[f64], dim: usize) -> Result<Vec<f64>> {
    check_input(params, dim)?;
    if !features.len().is_multiple_of(dim) {
        return Err(MoewError::Shape("feature matrix length is not a multiple of D".into()));
    }
    let last = params.layers.len() - 1;
    let mut out = Vec::with_capacity(features.len() / dim * params.output_width());
    for x in features.chunks_exact(dim) {
        out.extend(forward_row(params, x, last));
    }
    Ok(out)
}

pub fn predict_dataset(params: &ModelParams, ds: &Dataset) -> Result<Vec<f64>> {
    predict(params, ds.features(), ds.dim())
}

// ---------------------------------------------------------------------------
// Losses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    /// Labels 0/1 are mapped to -1/+1.
    Hinge,
    /// Labels are class indices.
    CrossEntropy,
}

impl LossKind {
    /// Squared for numeric, hinge for binary, cross-entropy for multiclass labels.
    pub fn for_task(task: Task) -> LossKind {
        match task {
            Task::Regression => LossKind::Squared,
            Task::Binary => LossKind::Hinge,
            Task::Multiclass { .. } => LossKind::CrossEntropy,
        }
    }

    /// Loss of one example; writes dL/d(output) into `grad`.
    pub fn eval(&self, out: &[f64], y: f64, grad: &mut [f64]) -> f64 {
        match self {
            LossKind::Squared => {
                let r = out[0] - y;
                grad[0] = 2.0 * r;
                r * r
            }
            LossKind::Hinge => {
                let s = if y > 0.5 { 1.0 } else { -1.0 };
                let margin = s * out[0];
                if margin < 1.0 {
                    grad[0] = -s;
                    1.0 - margin
                } else {
                    grad[0] = 0.0;
                    0.0
                }
            }
            LossKind::CrossEntropy => {
                let c = y as usize;
                let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (g, o) in grad.iter_mut().zip(out) {
                    *g = (o - max).exp();
                    sum += *g;
                }
                for g in grad.iter_mut() {
                    *g /= sum;
                }
                grad[c] -= 1.0;
                max + sum.ln() - out[c]
            }
        }
    }
}

/// Per-example loss on a network's output row.
pub trait OutputLoss: Sync {
    /// Loss for example `row`; writes dL/d(output) into `grad`.
    fn loss_grad(&self, row: usize, out: &[f64], grad: &mut [f64]) -> f64;
}

/// A standard loss against one label per example.
pub struct LabelLoss<'a> {
    pub kind: LossKind,
    pub labels: &'a [f64],
}

impl OutputLoss for LabelLoss<'_> {
    fn loss_grad(&self, row: usize, out: &[f64], grad: &mut [f64]) -> f64 {
        self.kind.eval(out, self.labels[row], grad)
    }
}

/// Rows of a feature matrix with their example weights.
#[derive(Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub dim: usize,
    /// Row ids into `features` (and into `weights` and the loss).
    pub rows: &'a [usize],
    /// Full-length weight vector indexed by row id.
    pub weights: &'a [f64],
}

/// Reusable activation buffers for forward/backward passes.
struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    out_grad: Vec<f64>,
}

impl Workspace {
    fn new(params: &ModelParams) -> Workspace {
        Workspace {
            acts: params.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            deltas: params.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            out_grad: vec![0.0; params.output_width()],
        }
    }
}

fn accumulate(
    params: &ModelParams,
    batch: Batch<'_>,
    loss: &dyn OutputLoss,
    grad: &mut ModelParams,
    ws: &mut Workspace,
) -> f64 {
    let n_layers = params.layers.len();
    let scale = 1.0 / batch.rows.len() as f64;
    let mut total = 0.0;
    for &row in batch.rows {
        let w = batch.weights[row];
        if w == 0.0 {
            continue;
        }
        let x = &batch.features[row * batch.dim..(row + 1) * batch.dim];
        for l in 0..n_layers {
            let (before, after) = ws.acts.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
            let out = &mut after[0];
            affine(&params.layers[l], input, out);
            if l + 1 != n_layers {
                out.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
        }
        let coef = w * scale;
        total += coef * loss.loss_grad(row, &ws.acts[n_layers - 1], &mut ws.out_grad);
        for (d, g) in ws.deltas[n_layers - 1].iter_mut().zip(&ws.out_grad) {
            *d = coef * g;
        }
        for l in (0..n_layers).rev() {
            let layer = &params.layers[l];
            let input: &[f64] = if l == 0 { x } else { &ws.acts[l - 1] };
            let g = &mut grad.layers[l];
            let delta = &ws.deltas[l];
            for ((grow, gb), &d) in g
                .weights
                .chunks_exact_mut(layer.inputs)
                .zip(g.bias.iter_mut())
                .zip(delta)
            {
                *gb += d;
                if d != 0.0 {
                    for (gw, xi) in grow.iter_mut().zip(input) {
                        *gw += d * xi;
                    }
                }
            }
            if l > 0 {
                let (lower, upper) = ws.deltas.split_at_mut(l);
                let prev = &mut lower[l - 1];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for (wrow, &d) in layer.weights.chunks_exact(layer.inputs).zip(&upper[0]) {
                    if d != 0.0 {
                        for (p, w) in prev.iter_mut().zip(wrow) {
                            *p += d * w;
                        }
                    }
                }
                for (p, a) in prev.iter_mut().zip(&ws.acts[l - 1]) {
                    *p *= a * (1.0 - a);
                }
            }
        }
    }
    total
}

/// Weighted batch loss `sum_j w_j L_j / |batch|` and its exact gradient.
pub fn loss_and_grad_with(
    params: &ModelParams,
    batch: Batch<'_>,
    loss: &dyn OutputLoss,
) -> Result<(f64, ModelParams)> {
    check_input(params, batch.dim)?;
    let mut grad = ModelParams::zeros(&params.architecture());
    let mut ws = Workspace::new(params);
    let value = accumulate(params, batch, loss, &mut grad, &mut ws);
    Ok((value, grad))
}

/// Weighted loss over all rows of `features` against `labels`.
pub fn loss_and_grad(
    params: &ModelParams,
    features: &[f64],
    dim: usize,
    labels: &[f64],
    weights: &[f64],
    kind: LossKind,
) -> Result<(f64, ModelParams)> {
    if labels.len() != weights.len() || features.len() != labels.len() * dim {
        return Err(MoewError::Shape("batch features, labels and weights disagree".into()));
    }
    let rows: Vec<usize> = (0..labels.len()).collect();
    let batch = Batch {
        features,
        dim,
        rows: &rows,
        weights,
    };
    loss_and_grad_with(params, batch, &LabelLoss { kind, labels })
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Batches at least as large as the dataset run full-batch without shuffling.
    pub batch_size: usize,
    /// `None` picks the loss matching the label type.
    pub loss: Option<LossKind>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 100,
            loss: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(MoewError::Contract("steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MoewError::Contract("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(MoewError::Contract("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Adam optimizer state.
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Adam {
        let mut m = params.clone();
        m.fill(0.0);
        Adam {
            v: m.clone(),
            m,
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grad.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(MoewError::Shape(format!(
            "{} weights for {n} examples",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(MoewError::Contract(format!(
            "example weights must be finite and non-negative, got {w}"
        )));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(MoewError::Contract("all example weights are zero".into()));
    }
    Ok(())
}

/// Runs `cfg.steps` Adam updates from `params` on an arbitrary per-example loss.
///
/// Mini-batches walk a fresh seeded permutation each epoch; the last batch of
/// an epoch may be short.
pub fn train_with_loss(
    mut params: ModelParams,
    features: &[f64],
    dim: usize,
    weights: &[f64],
    loss: &dyn OutputLoss,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    cfg.validate()?;
    check_input(&params, dim)?;
    let n = weights.len();
    if features.len() != n * dim {
        return Err(MoewError::Shape("features and weights disagree on n".into()));
    }
    check_weights(weights, n)?;

    let mut rng = seed::rng(seed::derive(cfg.seed, &[0xBA7C]));
    let mut order: Vec<usize> = (0..n).collect();
    let full_batch = cfg.batch_size >= n;
    let mut cursor = n;
    let mut adam = Adam::new(&params, cfg);
    let mut grad = params.clone();
    let mut ws = Workspace::new(&params);
    for step in 0..cfg.steps {
        let rows: &[usize] = if full_batch {
            &order
        } else {
            if cursor >= n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(n);
            let r = &order[cursor..end];
            cursor = end;
            r
        };
        grad.fill(0.0);
        let batch = Batch {
            features,
            dim,
            rows,
            weights,
        };
        let value = accumulate(&params, batch, loss, &mut grad, &mut ws);
        if !value.is_finite() {
            return Err(MoewError::Divergence { step });
        }
        adam.step(&mut params, &grad);
    }
    if !params.is_finite() {
        return Err(MoewError::Divergence { step: cfg.steps });
    }
    Ok(params)
}

/// Trains the main model on the weighted loss, starting from `init_params(arch, cfg.seed)`.
pub fn train_weighted(
    train: &Dataset,
    weights: &[f64],
    arch: &MlpArchitecture,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    arch.validate()?;
    let kind = cfg.loss.unwrap_or_else(|| LossKind::for_task(train.task()));
    let params = init_params(arch, seed::derive(cfg.seed, &[0x1417]));
    let loss = LabelLoss {
        kind,
        labels: train.labels(),
    };
    train_with_loss(params, train.features(), train.dim(), weights, &loss, cfg)
}

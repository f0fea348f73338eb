//! Low-dimensional embeddings `z(x, y)` of feature/label pairs.
//!
//! Embeddings are centered on the training-set mean, so `alpha = 0` sits at
//! the "no reweighting" point of the weighting function's domain.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::nn::{self, LossKind, MlpArchitecture, ModelParams, OutputKind, OutputLoss, TrainConfig};
use crate::{MoewError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    /// Embedding dimension `d`, the width of the sigmoid middle layer.
    pub dim: usize,
    /// Weight of feature reconstruction; label reconstruction gets `1 - lambda`.
    pub lambda: f64,
    pub train: TrainConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            hidden: vec![10],
            dim: 2,
            lambda: 0.5,
            train: TrainConfig::default(),
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(MoewError::Contract("embedding dimension must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(MoewError::Contract(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        self.train.validate()
    }

    pub fn architecture(&self, input: usize) -> Result<MlpArchitecture> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(self.dim);
        sizes.extend(self.hidden.iter().rev());
        sizes.push(input);
        MlpArchitecture::new(sizes, OutputKind::Vector)
    }
}

/// Width of the label block appended to the autoencoder input.
pub fn label_width(task: Task) -> usize {
    match task {
        Task::Regression | Task::Binary => 1,
        Task::Multiclass { classes } => classes,
    }
}

/// Raw real for regression, +-1 for binary, one-hot for multiclass.
pub fn encode_label(task: Task, y: f64, out: &mut [f64]) {
    match task {
        Task::Regression => out[0] = y,
        Task::Binary => out[0] = if y > 0.5 { 1.0 } else { -1.0 },
        Task::Multiclass { .. } => {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[y as usize] = 1.0;
        }
    }
}

fn autoencoder_inputs(ds: &Dataset) -> Vec<f64> {
    let lw = label_width(ds.task());
    let width = ds.dim() + lw;
    let mut inputs = vec![0.0; ds.len() * width];
    for (i, row) in inputs.chunks_exact_mut(width).enumerate() {
        row[..ds.dim()].copy_from_slice(ds.row(i));
        encode_label(ds.task(), ds.labels()[i], &mut row[ds.dim()..]);
    }
    inputs
}

/// `lambda * L_x + (1 - lambda) * L_y` on the reconstruction of `(x, y)`.
///
/// `L_x` is the mean squared error over the feature block; `L_y` is the
/// label-type loss (squared, hinge or cross-entropy) on the label block.
pub struct ReconstructionLoss<'a> {
    pub inputs: &'a [f64],
    pub dim: usize,
    pub labels: &'a [f64],
    pub task: Task,
    pub lambda: f64,
}

impl ReconstructionLoss<'_> {
    fn width(&self) -> usize {
        self.dim + label_width(self.task)
    }

    /// Feature and label parts separately, for diagnostics.
    pub fn parts(&self, row: usize, out: &[f64]) -> (f64, f64) {
        let x = &self.inputs[row * self.width()..row * self.width() + self.dim];
        let lx = out[..self.dim]
            .iter()
            .zip(x)
            .map(|(o, v)| (o - v) * (o - v))
            .sum::<f64>()
            / self.dim as f64;
        let mut scratch = vec![0.0; label_width(self.task)];
        let ly = LossKind::for_task(self.task).eval(&out[self.dim..], self.labels[row], &mut scratch);
        (lx, ly)
    }
}

impl OutputLoss for ReconstructionLoss<'_> {
    fn loss_grad(&self, row: usize, out: &[f64], grad: &mut [f64]) -> f64 {
        let width = self.width();
        let x = &self.inputs[row * width..row * width + self.dim];
        let fx = self.lambda / self.dim as f64;
        let mut lx = 0.0;
        for ((g, o), v) in grad[..self.dim].iter_mut().zip(&out[..self.dim]).zip(x) {
            let r = o - v;
            lx += r * r;
            *g = fx * 2.0 * r;
        }
        let label_grad = &mut grad[self.dim..];
        let ly = LossKind::for_task(self.task).eval(&out[self.dim..], self.labels[row], label_grad);
        let fy = 1.0 - self.lambda;
        label_grad.iter_mut().for_each(|g| *g *= fy);
        fx * lx + fy * ly
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderKind {
    /// Encoder half of a trained autoencoder; `middle` is the index of the
    /// affine layer producing the embedding.
    Autoencoder {
        params: ModelParams,
        middle: usize,
        task: Task,
        features: usize,
    },
    /// One-hot class label.
    LabelPassthrough { classes: usize },
}

/// Maps `(x, y)` to a centered `d`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub kind: EmbedderKind,
    /// Training-set mean of the raw embedding.
    pub offsets: Vec<f64>,
}

impl Embedder {
    pub fn dim(&self) -> usize {
        self.offsets.len()
    }

    fn raw(&self, x: &[f64], y: f64) -> Result<Vec<f64>> {
        match &self.kind {
            EmbedderKind::Autoencoder {
                params,
                middle,
                task,
                features,
            } => {
                if x.len() != *features {
                    return Err(MoewError::Shape(format!(
                        "embedder expects {features} features, got {}",
                        x.len()
                    )));
                }
                let mut input = x.to_vec();
                input.resize(features + label_width(*task), 0.0);
                encode_label(*task, y, &mut input[*features..]);
                Ok(nn::forward_row(params, &input, *middle))
            }
            EmbedderKind::LabelPassthrough { classes } => {
                let c = y as usize;
                if y < 0.0 || y.fract() != 0.0 || c >= *classes {
                    return Err(MoewError::Shape(format!(
                        "label {y} is not a class index in [0, {classes})"
                    )));
                }
                let mut v = vec![0.0; *classes];
                v[c] = 1.0;
                Ok(v)
            }
        }
    }

    /// Centered embedding of one pair.
    pub fn embed(&self, x: &[f64], y: f64) -> Result<Vec<f64>> {
        let mut z = self.raw(x, y)?;
        for (v, o) in z.iter_mut().zip(&self.offsets) {
            *v -= o;
        }
        Ok(z)
    }

    /// Centered embeddings of every row, `n x d` row-major.
    pub fn embed_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ds.len() * self.dim());
        for i in 0..ds.len() {
            out.extend(self.embed(ds.row(i), ds.labels()[i])?);
        }
        Ok(out)
    }

    fn with_centering(kind: EmbedderKind, d: usize, train: &Dataset) -> Result<Embedder> {
        let mut e = Embedder {
            kind,
            offsets: vec![0.0; d],
        };
        let mut mean = vec![0.0; d];
        for i in 0..train.len() {
            for (m, v) in mean.iter_mut().zip(e.raw(train.row(i), train.labels()[i])?) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= train.len() as f64);
        e.offsets = mean;
        Ok(e)
    }
}

/// Trains the autoencoder on `(x, y)` pairs and returns its centered encoder.
pub fn train_autoencoder(train: &Dataset, cfg: &AutoencoderConfig) -> Result<Embedder> {
    cfg.validate()?;
    let params = train_autoencoder_params(train, cfg)?;
    let kind = EmbedderKind::Autoencoder {
        params,
        middle: cfg.hidden.len(),
        task: train.task(),
        features: train.dim(),
    };
    Embedder::with_centering(kind, cfg.dim, train)
}

/// The full trained autoencoder (encoder and decoder).
pub fn train_autoencoder_params(train: &Dataset, cfg: &AutoencoderConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let inputs = autoencoder_inputs(train);
    let width = train.dim() + label_width(train.task());
    let arch = cfg.architecture(width)?;
    let init = nn::init_params(&arch, crate::seed::derive(cfg.train.seed, &[0xAE]));
    let loss = ReconstructionLoss {
        inputs: &inputs,
        dim: train.dim(),
        labels: train.labels(),
        task: train.task(),
        lambda: cfg.lambda,
    };
    let ones = vec![1.0; train.len()];
    nn::train_with_loss(init, &inputs, width, &ones, &loss, &cfg.train)
}

/// Mean `(L_x, L_y)` of a trained autoencoder over a dataset.
pub fn reconstruction_losses(params: &ModelParams, ds: &Dataset, lambda: f64) -> Result<(f64, f64)> {
    let inputs = autoencoder_inputs(ds);
    let width = ds.dim() + label_width(ds.task());
    let out = nn::predict(params, &inputs, width)?;
    let loss = ReconstructionLoss {
        inputs: &inputs,
        dim: ds.dim(),
        labels: ds.labels(),
        task: ds.task(),
        lambda,
    };
    let (mut lx, mut ly) = (0.0, 0.0);
    for (i, o) in out.chunks_exact(width).enumerate() {
        let (a, b) = loss.parts(i, o);
        lx += a;
        ly += b;
    }
    let n = ds.len() as f64;
    Ok((lx / n, ly / n))
}

/// One-hot class embedding centered by the training class frequencies.
pub fn label_passthrough_embedder(train: &Dataset) -> Result<Embedder> {
    let classes = train
        .task()
        .num_classes()
        .ok_or_else(|| MoewError::Contract("label passthrough needs class labels".into()))?;
    Embedder::with_centering(EmbedderKind::LabelPassthrough { classes }, classes, train)
}

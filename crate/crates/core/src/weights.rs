//! The weighting function `w(x, y; alpha) = c * pi(y) * sigmoid(z(x, y) . alpha)`,
//! label-importance tables and baseline weightings.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ToySpec};
use crate::embed::Embedder;
use crate::nn::sigmoid;
use crate::{seed, MoewError, Result};

/// Lower clamp for every importance ratio.
pub const RATIO_FLOOR: f64 = 1e-3;
const HISTOGRAM_BINS: usize = 10;

/// Weighting parameter `alpha`, confined to the ball of radius `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightParams(Vec<f64>);

impl WeightParams {
    pub fn new(alpha: Vec<f64>, radius: f64) -> Result<Self> {
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(MoewError::Domain("alpha must be finite".into()));
        }
        let norm = norm2(&alpha);
        if norm > radius * (1.0 + 1e-12) {
            return Err(MoewError::Domain(format!(
                "|alpha| = {norm} exceeds ball radius {radius}"
            )));
        }
        Ok(WeightParams(alpha))
    }

    pub fn zeros(d: usize) -> Self {
        WeightParams(vec![0.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    /// Ratio of validation to training class frequencies.
    #[default]
    ClassRatio,
    /// Ratio over equal-frequency bins of the training labels.
    Histogram,
    ConstantOne,
}

/// `pi(y)`, the ratio of validation to training label densities.
#[derive(Debug, Clone, PartialEq)]
pub enum ImportanceTable {
    ClassRatio { ratios: Vec<f64> },
    /// `edges` are the interior bin boundaries; bin `k` holds `edges[k-1] <= y < edges[k]`.
    Histogram { edges: Vec<f64>, ratios: Vec<f64> },
    ConstantOne,
    /// Per-class ratios given by the user.
    UserSupplied { ratios: Vec<f64> },
}

impl ImportanceTable {
    pub fn user_supplied(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() || ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(MoewError::Domain("user importance ratios must be positive".into()));
        }
        Ok(ImportanceTable::UserSupplied {
            ratios: ratios.into_iter().map(|r| r.max(RATIO_FLOOR)).collect(),
        })
    }

    pub fn pi(&self, y: f64) -> f64 {
        match self {
            ImportanceTable::ClassRatio { ratios } | ImportanceTable::UserSupplied { ratios } => {
                ratios.get(y as usize).copied().unwrap_or(RATIO_FLOOR)
            }
            ImportanceTable::Histogram { edges, ratios } => {
                ratios[edges.partition_point(|&e| e <= y)]
            }
            ImportanceTable::ConstantOne => 1.0,
        }
    }
}

fn class_counts(labels: &[f64]) -> Vec<usize> {
    let mut counts = Vec::new();
    for &y in labels {
        let c = y as usize;
        if counts.len() <= c {
            counts.resize(c + 1, 0);
        }
        counts[c] += 1;
    }
    counts
}

fn is_class_labels(labels: &[f64]) -> bool {
    labels.iter().all(|&y| y >= 0.0 && y.fract() == 0.0 && y < 1e6)
}

/// Estimates `pi` from training and validation labels.
pub fn estimate_importance(
    train_labels: &[f64],
    val_labels: &[f64],
    kind: ImportanceKind,
) -> Result<ImportanceTable> {
    if train_labels.is_empty() || val_labels.is_empty() {
        return Err(MoewError::Estimation("label sets must be nonempty".into()));
    }
    match kind {
        ImportanceKind::ConstantOne => Ok(ImportanceTable::ConstantOne),
        ImportanceKind::ClassRatio => {
            if !is_class_labels(train_labels) || !is_class_labels(val_labels) {
                return Err(MoewError::Estimation("class ratio needs class-index labels".into()));
            }
            let tc = class_counts(train_labels);
            let vc = class_counts(val_labels);
            let (nt, nv) = (train_labels.len() as f64, val_labels.len() as f64);
            let classes = tc.len().max(vc.len());
            let mut ratios = Vec::with_capacity(classes);
            for c in 0..classes {
                let t = tc.get(c).copied().unwrap_or(0);
                let v = vc.get(c).copied().unwrap_or(0);
                if t == 0 {
                    if v > 0 {
                        return Err(MoewError::Estimation(format!(
                            "class {c} appears in validation but not in training"
                        )));
                    }
                    ratios.push(1.0);
                    continue;
                }
                ratios.push(((v as f64 / nv) / (t as f64 / nt)).max(RATIO_FLOOR));
            }
            Ok(ImportanceTable::ClassRatio { ratios })
        }
        ImportanceKind::Histogram => {
            let mut sorted = train_labels.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let edges: Vec<f64> = (1..HISTOGRAM_BINS).map(|k| sorted[k * n / HISTOGRAM_BINS]).collect();
            let bin = |y: f64| edges.partition_point(|&e| e <= y);
            let mut tc = [0usize; HISTOGRAM_BINS];
            let mut vc = [0usize; HISTOGRAM_BINS];
            train_labels.iter().for_each(|&y| tc[bin(y)] += 1);
            val_labels.iter().for_each(|&y| vc[bin(y)] += 1);
            let (nt, nv) = (n as f64, val_labels.len() as f64);
            let mut ratios = Vec::with_capacity(HISTOGRAM_BINS);
            for (k, (&t, &v)) in tc.iter().zip(&vc).enumerate() {
                if t == 0 {
                    if v > 0 {
                        return Err(MoewError::Estimation(format!(
                            "validation labels fall in training-empty bin {k}"
                        )));
                    }
                    ratios.push(1.0);
                    continue;
                }
                ratios.push(((v as f64 / nv) / (t as f64 / nt)).max(RATIO_FLOOR));
            }
            Ok(ImportanceTable::Histogram { edges, ratios })
        }
    }
}

/// Scales `w` in place to mean 1 and returns the factor applied.
pub fn normalize_mean_one(w: &mut [f64]) -> f64 {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let c = 1.0 / mean;
    w.iter_mut().for_each(|v| *v *= c);
    c
}

/// `pi(y) * sigmoid(z . alpha)` before normalization; always positive.
pub fn raw_weight(alpha: &[f64], z: &[f64], y: f64, pi: &ImportanceTable) -> f64 {
    let s: f64 = z.iter().zip(alpha).map(|(a, b)| a * b).sum();
    (pi.pi(y) * sigmoid(s)).max(f64::MIN_POSITIVE)
}

/// Normalized weights from precomputed embeddings (`n x d`, row-major).
/// Returns the weights and the normalization constant `c`.
pub fn eval_weights_embedded(
    alpha: &WeightParams,
    z: &[f64],
    labels: &[f64],
    pi: &ImportanceTable,
) -> Result<(Vec<f64>, f64)> {
    let d = alpha.dim();
    if d == 0 || z.len() != labels.len() * d {
        return Err(MoewError::Shape(format!(
            "embedding matrix of {} values does not match {} rows of dimension {d}",
            z.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(MoewError::Contract("cannot weight an empty dataset".into()));
    }
    let mut w: Vec<f64> = z
        .chunks_exact(d)
        .zip(labels)
        .map(|(row, &y)| raw_weight(alpha.as_slice(), row, y, pi))
        .collect();
    let c = normalize_mean_one(&mut w);
    Ok((w, c))
}

/// Evaluates the weighting function on every row of `ds`, normalized to mean 1.
pub fn eval_weights(
    alpha: &WeightParams,
    ds: &Dataset,
    embedder: &Embedder,
    pi: &ImportanceTable,
) -> Result<Vec<f64>> {
    if alpha.dim() != embedder.dim() {
        return Err(MoewError::Shape(format!(
            "alpha has dimension {}, embedding has {}",
            alpha.dim(),
            embedder.dim()
        )));
    }
    let z = embedder.embed_dataset(ds)?;
    Ok(eval_weights_embedded(alpha, &z, ds.labels(), pi)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineKind {
    Uniform,
    /// IID Uniform(0, 1) weights.
    Random,
    /// `pi(y)` alone.
    Importance,
    /// Per-example ratios read from a file.
    User { path: std::path::PathBuf },
    /// Analytic feature-density ratio of the synthetic beta task.
    ToyDensityRatio,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Uniform => "uniform",
            BaselineKind::Random => "random",
            BaselineKind::Importance => "importance",
            BaselineKind::User { .. } => "user",
            BaselineKind::ToyDensityRatio => "density_ratio",
        }
    }
}

/// One positive real per line, row-aligned with the training data.
pub fn read_user_weights(path: &Path, n: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| MoewError::io(path, e))?;
    let w = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: f64 = l.trim().parse().map_err(|_| MoewError::Parse {
                row: i + 1,
                column: "weight".into(),
                message: format!("`{l}` is not a number"),
            })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(MoewError::Parse {
                    row: i + 1,
                    column: "weight".into(),
                    message: format!("weight {v} is not positive"),
                });
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    if w.len() != n {
        return Err(MoewError::Shape(format!(
            "user weights file has {} rows, training set has {n}",
            w.len()
        )));
    }
    Ok(w)
}

/// Product of per-feature beta densities at `x`.
fn beta_density(x: &[f64], betas: &[(f64, f64); 2]) -> f64 {
    x.iter()
        .zip(betas)
        .map(|(&v, &(a, b))| {
            let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
            ((a - 1.0) * v.ln() + (b - 1.0) * (1.0 - v).ln() - ln_b).exp()
        })
        .product()
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Test-over-train feature density ratio for the synthetic task, at raw features.
pub fn toy_density_ratio(spec: &ToySpec, x: &[f64]) -> f64 {
    beta_density(x, &spec.beta_test) / beta_density(x, &spec.beta_train)
}

/// Baseline weightings, each normalized to mean 1 (uniform is already all ones).
///
/// `raw_train` is only consulted for the analytic density ratio, which is
/// defined on unstandardized features.
pub fn baseline_weights(
    ds: &Dataset,
    kind: &BaselineKind,
    seed: u64,
    pi: &ImportanceTable,
    toy: Option<(&ToySpec, &Dataset)>,
) -> Result<Vec<f64>> {
    let n = ds.len();
    let mut w = match kind {
        BaselineKind::Uniform => return Ok(vec![1.0; n]),
        BaselineKind::Random => {
            let mut rng = seed::rng(seed);
            // gen::<f64>() is in [0, 1); nudge away from an exact zero.
            (0..n).map(|_| rng.gen::<f64>().max(f64::MIN_POSITIVE)).collect()
        }
        BaselineKind::Importance => ds.labels().iter().map(|&y| pi.pi(y)).collect(),
        BaselineKind::User { path } => read_user_weights(path, n)?,
        BaselineKind::ToyDensityRatio => {
            let (spec, raw) = toy.ok_or_else(|| {
                MoewError::Unsupported("density-ratio weights need the synthetic task".into())
            })?;
            if raw.len() != n {
                return Err(MoewError::Shape("raw training set does not match".into()));
            }
            (0..n).map(|i| toy_density_ratio(spec, raw.row(i))).collect()
        }
    };
    normalize_mean_one(&mut w);
    Ok(w)
}

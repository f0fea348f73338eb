//! End-to-end experiments: the weighting-parameter search, best-of-N
//! baselines, and repeat summaries.
//!
//! Every random stream is derived from the master seed and the logical
//! coordinates of its use (repeat, slot, stage), so results do not depend on
//! how many threads train candidates.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, ColumnRole, CsvSchema, Dataset, GroupVocab, LabelTransform, Role, Splits, Standardizer, Task, ToySpec,
};
use crate::embed::{self, AutoencoderConfig, Embedder};
use crate::metrics::{EvalBundle, MetricSpec};
use crate::nn::{self, MlpArchitecture, ModelParams, TrainConfig};
use crate::persist::WeightingSnapshot;
use crate::search::{self, BucbConfig, History, DEFAULT_GRID_CAP};
use crate::seed::{self, Stage};
use crate::weights::{self, BaselineKind, ImportanceKind, ImportanceTable, WeightParams};
use crate::{MoewError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Multiplier of `sd / sqrt(n)` for a 95% normal margin.
pub const MARGIN_Z: f64 = 1.96;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Concurrent trainings; 0 uses every available core.
    #[serde(default)]
    pub jobs: usize,
    pub data: DataConfig,
    pub metric: MetricSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub importance: ImportanceKind,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub baselines: Vec<BaselineConfig>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Standardize features with training-split statistics.
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub label_transform: LabelTransform,
    /// Train on a fresh random subset of this many training rows per repeat.
    #[serde(default)]
    pub train_subsample: Option<usize>,
    #[serde(default)]
    pub toy: Option<ToySpec>,
    #[serde(default)]
    pub csv: Option<CsvSource>,
}

/// Either one file with a split column (`path` + `split`) or three files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub task: Task,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub label: String,
    /// Feature columns; empty means every column without another role.
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub aux_score: Option<String>,
    #[serde(default)]
    pub split: Option<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
}

impl CsvSource {
    pub fn schema(&self) -> CsvSchema {
        let mut s = CsvSchema::new(self.task).column(&self.label, ColumnRole::Label);
        for (name, role) in [
            (&self.group, ColumnRole::Group),
            (&self.aux_score, ColumnRole::AuxScore),
            (&self.split, ColumnRole::Split),
        ] {
            if let Some(n) = name {
                s = s.column(n, role);
            }
        }
        for n in &self.ignore {
            s = s.column(n, ColumnRole::Ignore);
        }
        for n in &self.features {
            s = s.column(n, ColumnRole::Feature);
        }
        if self.features.is_empty() {
            s = s.remaining_as_features();
        }
        s
    }

    pub fn load(&self) -> Result<Splits> {
        let schema = self.schema();
        if let Some(path) = &self.path {
            return data::load_csv_splits(path, &schema);
        }
        let mut vocab = GroupVocab::default();
        let mut load = |p: &Option<PathBuf>, role: Role| -> Result<Dataset> {
            let p = p
                .as_ref()
                .ok_or_else(|| MoewError::Schema(format!("missing {role:?} file")))?;
            data::load_csv_with_vocab(p, &schema, role, &mut vocab)
        };
        Ok(Splits {
            train: load(&self.train, Role::Train)?,
            validation: load(&self.validation, Role::Validation)?,
            test: load(&self.test, Role::Test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![20, 10],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Autoencoder(AutoencoderConfig),
    /// Centered one-hot class label.
    LabelPassthrough,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Autoencoder(AutoencoderConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Bucb,
    Random,
    /// Exhaustive epsilon-cover; ignores `batches` and walks the whole grid.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub generator: GeneratorKind,
    pub batches: usize,
    pub batch_size: usize,
    pub radius: f64,
    pub explore_percent: f64,
    pub hallucinate_percent: f64,
    pub acquisition_samples: usize,
    /// Retrainings at `alpha = 0` used to estimate the metric noise level.
    pub noise_seeds: usize,
    pub grid_epsilon: f64,
    pub grid_cap: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let b = BucbConfig::default();
        SearchConfig {
            generator: GeneratorKind::Bucb,
            batches: 10,
            batch_size: b.batch_size,
            radius: b.radius,
            explore_percent: b.explore_percent,
            hallucinate_percent: b.hallucinate_percent,
            acquisition_samples: b.acquisition_samples,
            noise_seeds: 5,
            grid_epsilon: 0.5,
            grid_cap: DEFAULT_GRID_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub weighting: BaselineKind,
    pub budget: usize,
}

fn config_error(path: &str, message: impl Into<String>) -> MoewError {
    MoewError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses TOML; errors carry the dotted key path of the offending entry.
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            let message = e.inner().message().trim().to_string();
            if let Some(field) = message
                .strip_prefix("missing field `")
                .and_then(|m| m.split('`').next())
            {
                path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
            }
            config_error(&path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| MoewError::io(path, e))?;
        let mut cfg = ExperimentConfig::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    /// Makes relative data and weight-file paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(csv) = &mut self.data.csv {
            for p in [&mut csv.path, &mut csv.train, &mut csv.validation, &mut csv.test]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
        for b in &mut self.baselines {
            if let BaselineKind::User { path } = &mut b.weighting {
                fix(path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config_error(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        if self.repeats == 0 {
            return Err(config_error("repeats", "must be at least 1"));
        }
        match (&self.data.toy, &self.data.csv) {
            (Some(t), None) => t.validate().map_err(|e| config_error("data.toy", e.to_string()))?,
            (None, Some(c)) => {
                let split_file = c.path.is_some();
                let three = c.train.is_some() && c.validation.is_some() && c.test.is_some();
                if split_file == three || (split_file && c.split.is_none()) {
                    return Err(config_error(
                        "data.csv",
                        "give either `path` with a `split` column or all of `train`, `validation`, `test`",
                    ));
                }
                if self.data.label_transform != LabelTransform::Identity && c.task.is_classification() {
                    return Err(config_error("data.label_transform", "only regression labels can be transformed"));
                }
            }
            _ => return Err(config_error("data", "exactly one of `toy` or `csv` is required")),
        }
        if self.data.train_subsample == Some(0) {
            return Err(config_error("data.train_subsample", "must be positive"));
        }
        self.metric
            .validate()
            .map_err(|e| config_error("metric", e.to_string()))?;
        self.model
            .train
            .validate()
            .map_err(|e| config_error("model.train", e.to_string()))?;
        if let EmbeddingConfig::Autoencoder(a) = &self.embedding {
            a.validate().map_err(|e| config_error("embedding", e.to_string()))?;
        }
        let s = &self.search;
        if s.batches == 0 {
            return Err(config_error("search.batches", "must be at least 1"));
        }
        self.bucb(0)
            .validate()
            .map_err(|e| config_error("search", e.to_string()))?;
        if s.generator == GeneratorKind::Grid && !(s.grid_epsilon > 0.0 && s.grid_epsilon <= 1.0) {
            return Err(config_error("search.grid_epsilon", "must lie in (0, 1]"));
        }
        for (i, b) in self.baselines.iter().enumerate() {
            if b.budget == 0 {
                return Err(config_error(&format!("baselines[{i}].budget"), "must be at least 1"));
            }
            if b.weighting == BaselineKind::ToyDensityRatio && self.data.toy.is_none() {
                return Err(config_error(
                    &format!("baselines[{i}].weighting"),
                    "density_ratio needs the synthetic toy data",
                ));
            }
        }
        Ok(())
    }

    pub fn bucb(&self, seed: u64) -> BucbConfig {
        let s = &self.search;
        BucbConfig {
            batch_size: s.batch_size,
            explore_percent: s.explore_percent,
            hallucinate_percent: s.hallucinate_percent,
            radius: s.radius,
            acquisition_samples: s.acquisition_samples,
            seed,
        }
    }

    /// Method names in output order: `moew`, then one per baseline.
    pub fn method_names(&self) -> Vec<String> {
        let mut names = vec!["moew".to_string()];
        for b in &self.baselines {
            let base = b.weighting.name();
            let mut name = base.to_string();
            let mut k = 2;
            while names.contains(&name) {
                name = format!("{base}_{k}");
                k += 1;
            }
            names.push(name);
        }
        names
    }
}

// ---------------------------------------------------------------------------
// Results

/// One trained candidate. Metrics are oriented so larger is better; a failed
/// training scores negative infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub repeat: usize,
    pub batch: usize,
    pub candidate: usize,
    /// Empty for baselines.
    pub alpha: Vec<f64>,
    pub val_metric: f64,
    pub test_metric: f64,
    pub wall_time_s: f64,
}

/// Same contents ignoring wall time.
pub fn same_outcome(a: &RunRecord, b: &RunRecord) -> bool {
    a.method == b.method
        && a.repeat == b.repeat
        && a.batch == b.batch
        && a.candidate == b.candidate
        && a.alpha.len() == b.alpha.len()
        && a.alpha.iter().zip(&b.alpha).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.val_metric.to_bits() == b.val_metric.to_bits()
        && a.test_metric.to_bits() == b.test_metric.to_bits()
}

/// Index of the record with the largest validation metric, earliest on ties.
pub fn select_best(records: &[RunRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if r.val_metric > f64::NEG_INFINITY && best.is_none_or(|b| r.val_metric > records[b].val_metric) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: String,
    pub records: Vec<RunRecord>,
    /// Index into `records` of the selected model.
    pub best: usize,
    pub best_params: ModelParams,
    /// The selected weighting function (search only).
    pub weighting: Option<WeightingSnapshot>,
    /// Metric noise variance given to the GP (search only).
    pub noise_variance: Option<f64>,
}

impl MethodRun {
    pub fn best_record(&self) -> &RunRecord {
        &self.records[self.best]
    }
}

#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub repeat: usize,
    /// `moew` first, then baselines in config order.
    pub methods: Vec<MethodRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub repeats: usize,
    pub mean_test: f64,
    pub margin_test: f64,
    pub mean_val: f64,
}

/// Mean and `1.96 * sd / sqrt(n)` with the sample standard deviation.
pub fn summarize(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(MoewError::Contract(format!(
            "a margin needs at least 2 repeats, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, MARGIN_Z * var.sqrt() / n.sqrt()))
}

pub fn summarize_outcomes(outcomes: &[RepeatOutcome]) -> Result<Vec<MethodSummary>> {
    let Some(first) = outcomes.first() else {
        return Err(MoewError::Contract("no repeats to summarize".into()));
    };
    let mut out = Vec::new();
    for (m, run) in first.methods.iter().enumerate() {
        let tests: Vec<f64> = outcomes.iter().map(|o| o.methods[m].best_record().test_metric).collect();
        let vals: Vec<f64> = outcomes.iter().map(|o| o.methods[m].best_record().val_metric).collect();
        let (mean_test, margin_test) = summarize(&tests)?;
        out.push(MethodSummary {
            method: run.method.clone(),
            repeats: outcomes.len(),
            mean_test,
            margin_test,
            mean_val: vals.iter().sum::<f64>() / vals.len() as f64,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Per-repeat state

/// Data and fitted preprocessing for one repeat.
pub struct RepeatContext {
    pub repeat: usize,
    /// Standardized features, transformed labels.
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Untouched training split (original features and labels).
    pub raw_train: Dataset,
    val_labels: Vec<f64>,
    test_labels: Vec<f64>,
    pub standardizer: Standardizer,
    pub embedder: Embedder,
    pub importance: ImportanceTable,
    /// Centered training embeddings, `n x d`.
    pub z_train: Vec<f64>,
    pub toy: Option<ToySpec>,
}

struct SlotOutcome {
    params: Option<ModelParams>,
    val: f64,
    test: f64,
    secs: f64,
}

pub struct Experiment {
    cfg: ExperimentConfig,
    csv: Option<Splits>,
    pool: rayon::ThreadPool,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Experiment> {
        cfg.validate()?;
        let csv = match &cfg.data.csv {
            Some(c) => Some(c.load()?),
            None => None,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| MoewError::Run(format!("thread pool: {e}")))?;
        Ok(Experiment { cfg, csv, pool })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    fn raw_splits(&self, repeat: usize) -> Result<(Splits, Option<ToySpec>)> {
        let master = self.cfg.seed;
        let (mut splits, toy) = match (&self.csv, &self.cfg.data.toy) {
            (Some(s), _) => (s.clone(), None),
            (None, Some(t)) => {
                let spec = ToySpec {
                    seed: seed::derive_stage(master, Stage::Data, &[t.seed, repeat as u64]),
                    ..t.clone()
                };
                (data::generate_toy(&spec)?, Some(spec))
            }
            (None, None) => return Err(MoewError::Contract("no data source".into())),
        };
        if let Some(k) = self.cfg.data.train_subsample {
            if k < splits.train.len() {
                let mut idx: Vec<usize> = (0..splits.train.len()).collect();
                let mut rng = seed::rng(seed::derive_stage(master, Stage::Subsample, &[repeat as u64]));
                idx.shuffle(&mut rng);
                idx.truncate(k);
                idx.sort_unstable();
                splits.train = splits.train.select(&idx)?;
            }
        }
        Ok((splits, toy))
    }

    /// Loads or draws the data for `repeat` and fits standardization,
    /// embedding and importance table.
    pub fn prepare(&self, repeat: usize) -> Result<RepeatContext> {
        let (raw, toy) = self.raw_splits(repeat)?;
        let standardizer = if self.cfg.data.standardize {
            Standardizer::fit(&raw.train)
        } else {
            Standardizer::identity(raw.train.dim())
        };
        let tf = self.cfg.data.label_transform;
        let prep = |ds: &Dataset| -> Result<Dataset> {
            data::transform_labels(&standardizer.apply(ds)?, tf)
        };
        let train = prep(&raw.train)?;
        let validation = prep(&raw.validation)?;
        let test = prep(&raw.test)?;
        let embedder = match &self.cfg.embedding {
            EmbeddingConfig::Autoencoder(a) => {
                let seed = seed::derive_stage(self.cfg.seed, Stage::Autoencoder, &[repeat as u64]);
                let cfg = AutoencoderConfig {
                    train: a.train.with_seed(seed),
                    ..a.clone()
                };
                embed::train_autoencoder(&train, &cfg)?
            }
            EmbeddingConfig::LabelPassthrough => embed::label_passthrough_embedder(&train)?,
        };
        let importance = weights::estimate_importance(train.labels(), validation.labels(), self.cfg.importance)?;
        let z_train = embedder.embed_dataset(&train)?;
        Ok(RepeatContext {
            repeat,
            val_labels: raw.validation.labels().to_vec(),
            test_labels: raw.test.labels().to_vec(),
            train,
            validation,
            test,
            raw_train: raw.train,
            standardizer,
            embedder,
            importance,
            z_train,
            toy,
        })
    }

    fn architecture(&self, ctx: &RepeatContext) -> Result<MlpArchitecture> {
        MlpArchitecture::for_task(ctx.train.dim(), &self.cfg.model.hidden, ctx.train.task())
    }

    fn metric_on(
        &self,
        params: &ModelParams,
        ds: &Dataset,
        labels: &[f64],
        train: Option<&EvalBundle<'_>>,
    ) -> Result<f64> {
        let mut out = nn::predict_dataset(params, ds)?;
        let tf = self.cfg.data.label_transform;
        out.iter_mut().for_each(|v| *v = tf.inverse(*v));
        let mut b = EvalBundle::new(&out, labels).with_width(params.output_width());
        if let Some(g) = ds.groups() {
            b = b.with_groups(g);
        }
        if let Some(a) = ds.aux_scores() {
            b = b.with_aux(a);
        }
        self.cfg.metric.evaluate(&b, train)
    }

    /// Oriented validation and test metrics of a trained model.
    pub fn score(&self, ctx: &RepeatContext, params: &ModelParams) -> Result<(f64, f64)> {
        let train_out;
        let mut train_bundle = None;
        if self.cfg.metric.needs_train() {
            train_out = nn::predict_dataset(params, &ctx.train)?
                .into_iter()
                .map(|v| self.cfg.data.label_transform.inverse(v))
                .collect::<Vec<_>>();
            let mut b = EvalBundle::new(&train_out, ctx.raw_train.labels()).with_width(params.output_width());
            if let Some(g) = ctx.train.groups() {
                b = b.with_groups(g);
            }
            if let Some(a) = ctx.train.aux_scores() {
                b = b.with_aux(a);
            }
            train_bundle = Some(b);
        }
        let val = self.metric_on(params, &ctx.validation, &ctx.val_labels, train_bundle.as_ref())?;
        let test = self.metric_on(params, &ctx.test, &ctx.test_labels, train_bundle.as_ref())?;
        Ok((val, test))
    }

    fn train_slot(&self, ctx: &RepeatContext, weights: &[f64], seed: u64) -> Result<SlotOutcome> {
        let start = Instant::now();
        let arch = self.architecture(ctx)?;
        let cfg = self.cfg.model.train.with_seed(seed);
        match nn::train_weighted(&ctx.train, weights, &arch, &cfg) {
            Ok(params) => {
                let (val, test) = self.score(ctx, &params)?;
                Ok(SlotOutcome {
                    params: Some(params),
                    val,
                    test,
                    secs: start.elapsed().as_secs_f64(),
                })
            }
            Err(MoewError::Divergence { .. }) => Ok(SlotOutcome {
                params: None,
                val: f64::NEG_INFINITY,
                test: f64::NEG_INFINITY,
                secs: start.elapsed().as_secs_f64(),
            }),
            Err(e) => Err(e),
        }
    }

    fn slot_seed(&self, ctx: &RepeatContext, slot: usize) -> u64 {
        seed::derive_stage(self.cfg.seed, Stage::Train, &[ctx.repeat as u64, slot as u64])
    }

    /// Normalized weights for `alpha` on this repeat's training set, and `c`.
    pub fn weights_for(&self, ctx: &RepeatContext, alpha: &[f64]) -> Result<(Vec<f64>, f64)> {
        let a = WeightParams::new(alpha.to_vec(), self.cfg.search.radius)?;
        weights::eval_weights_embedded(&a, &ctx.z_train, ctx.train.labels(), &ctx.importance)
    }

    /// Sample variance of the validation metric at `alpha = 0` over fresh seeds.
    pub fn estimate_noise(&self, ctx: &RepeatContext) -> Result<f64> {
        let d = ctx.embedder.dim();
        let (w, _) = self.weights_for(ctx, &vec![0.0; d])?;
        let seeds: Vec<u64> = (0..self.cfg.search.noise_seeds)
            .map(|s| seed::derive_stage(self.cfg.seed, Stage::NoiseProbe, &[ctx.repeat as u64, s as u64]))
            .collect();
        let vals = self.pool.install(|| {
            seeds
                .par_iter()
                .map(|&s| self.train_slot(ctx, &w, s).map(|o| o.val))
                .collect::<Result<Vec<f64>>>()
        })?;
        let finite: Vec<f64> = vals.into_iter().filter(|v| v.is_finite()).collect();
        if finite.len() < 2 {
            return Ok(0.0);
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        Ok(finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    }

    fn candidate_batches(&self, d: usize) -> Result<Option<Vec<Vec<Vec<f64>>>>> {
        if self.cfg.search.generator != GeneratorKind::Grid {
            return Ok(None);
        }
        let s = &self.cfg.search;
        let mut grid = search::get_candidates_grid(d, s.grid_epsilon, s.grid_cap)?;
        if let Some(i) = grid.iter().position(|p| p.iter().all(|&v| v == 0.0)) {
            let origin = grid.remove(i);
            grid.insert(0, origin);
        }
        let scaled: Vec<Vec<f64>> = grid
            .into_iter()
            .map(|p| p.into_iter().map(|v| v * s.radius).collect())
            .collect();
        Ok(Some(scaled.chunks(s.batch_size).map(|c| c.to_vec()).collect()))
    }

    /// Runs the weighting-parameter search for one repeat.
    pub fn run_moew_in(&self, ctx: &RepeatContext) -> Result<MethodRun> {
        let s = &self.cfg.search;
        let d = ctx.embedder.dim();
        let k = s.batch_size;
        let noise = if s.generator == GeneratorKind::Bucb {
            Some(self.estimate_noise(ctx)?)
        } else {
            None
        };
        let grid = self.candidate_batches(d)?;
        let batches = grid.as_ref().map_or(s.batches, |g| g.len());
        let origin = vec![0.0; d];
        let mut history = History::new();
        let mut records: Vec<RunRecord> = Vec::new();
        let mut best: Option<(usize, ModelParams)> = None;
        for b in 0..batches {
            let cand_seed = seed::derive_stage(self.cfg.seed, Stage::Candidates, &[ctx.repeat as u64, b as u64]);
            let candidates = match (&grid, s.generator) {
                (Some(g), _) => g[b].clone(),
                (None, GeneratorKind::Random) => {
                    let mut c = Vec::with_capacity(k);
                    let fresh = if b == 0 {
                        c.push(origin.clone());
                        k - 1
                    } else {
                        k
                    };
                    c.extend(search::get_candidates_random(fresh, d, s.radius, cand_seed));
                    c
                }
                (None, _) => {
                    let mut cfg = self.cfg.bucb(cand_seed);
                    let noise = noise.unwrap_or(0.0);
                    if b == 0 {
                        let mut c = vec![origin.clone()];
                        if k > 1 {
                            cfg.batch_size = k - 1;
                            c.extend(search::get_candidates_bucb_pending(
                                &history,
                                std::slice::from_ref(&origin),
                                &cfg,
                                d,
                                noise,
                            )?);
                        }
                        c
                    } else {
                        search::get_candidates_bucb(&history, &cfg, d, noise)?
                    }
                }
            };
            let outcomes = self.pool.install(|| {
                candidates
                    .par_iter()
                    .enumerate()
                    .map(|(j, alpha)| {
                        let (w, _) = self.weights_for(ctx, alpha)?;
                        self.train_slot(ctx, &w, self.slot_seed(ctx, b * k + j))
                    })
                    .collect::<Result<Vec<SlotOutcome>>>()
            })?;
            if outcomes.iter().all(|o| o.params.is_none()) {
                return Err(MoewError::Run(format!(
                    "every training in batch {b} of repeat {} diverged",
                    ctx.repeat
                )));
            }
            for (j, (alpha, o)) in candidates.into_iter().zip(outcomes).enumerate() {
                if o.val.is_finite() {
                    history.push(alpha.clone(), o.val)?;
                }
                let improves = match &best {
                    None => o.params.is_some(),
                    Some((i, _)) => o.val > records[*i].val_metric,
                };
                records.push(RunRecord {
                    method: "moew".into(),
                    repeat: ctx.repeat,
                    batch: b,
                    candidate: j,
                    alpha,
                    val_metric: o.val,
                    test_metric: o.test,
                    wall_time_s: o.secs,
                });
                if improves {
                    if let Some(p) = o.params {
                        best = Some((records.len() - 1, p));
                    }
                }
            }
        }
        let (best, best_params) = best.expect("at least one batch trained");
        let alpha = records[best].alpha.clone();
        let (_, normalizer) = self.weights_for(ctx, &alpha)?;
        Ok(MethodRun {
            method: "moew".into(),
            best,
            best_params,
            weighting: Some(WeightingSnapshot {
                task: ctx.train.task(),
                standardizer: ctx.standardizer.clone(),
                embedder: ctx.embedder.clone(),
                importance: ctx.importance.clone(),
                alpha,
                normalizer,
            }),
            noise_variance: noise,
            records,
        })
    }

    /// Best-of-`budget` training under a fixed baseline weighting.
    pub fn run_baseline_in(
        &self,
        ctx: &RepeatContext,
        name: &str,
        kind: &BaselineKind,
        budget: usize,
    ) -> Result<MethodRun> {
        if budget == 0 {
            return Err(MoewError::Contract("baseline budget must be at least 1".into()));
        }
        let toy = ctx.toy.as_ref().map(|t| (t, &ctx.raw_train));
        let weight_seed = |slot: usize| {
            seed::derive_stage(self.cfg.seed, Stage::BaselineWeights, &[ctx.repeat as u64, slot as u64])
        };
        let shared = match kind {
            BaselineKind::Random => None,
            _ => Some(weights::baseline_weights(&ctx.train, kind, 0, &ctx.importance, toy)?),
        };
        let outcomes = self.pool.install(|| {
            (0..budget)
                .into_par_iter()
                .map(|slot| {
                    let own;
                    let w = match &shared {
                        Some(w) => w,
                        None => {
                            own = weights::baseline_weights(&ctx.train, kind, weight_seed(slot), &ctx.importance, toy)?;
                            &own
                        }
                    };
                    self.train_slot(ctx, w, self.slot_seed(ctx, slot))
                })
                .collect::<Result<Vec<SlotOutcome>>>()
        })?;
        let mut records = Vec::with_capacity(budget);
        let mut params = Vec::with_capacity(budget);
        for (slot, o) in outcomes.into_iter().enumerate() {
            records.push(RunRecord {
                method: name.to_string(),
                repeat: ctx.repeat,
                batch: 0,
                candidate: slot,
                alpha: Vec::new(),
                val_metric: o.val,
                test_metric: o.test,
                wall_time_s: o.secs,
            });
            params.push(o.params);
        }
        let best = select_best(&records)
            .ok_or_else(|| MoewError::Run(format!("every `{name}` training in repeat {} diverged", ctx.repeat)))?;
        let best_params = params[best].take().expect("selected training succeeded");
        Ok(MethodRun {
            method: name.to_string(),
            records,
            best,
            best_params,
            weighting: None,
            noise_variance: None,
        })
    }

    pub fn run_repeat(&self, repeat: usize) -> Result<RepeatOutcome> {
        let ctx = self.prepare(repeat)?;
        let mut methods = vec![self.run_moew_in(&ctx)?];
        let names = self.cfg.method_names();
        for (b, name) in self.cfg.baselines.iter().zip(&names[1..]) {
            methods.push(self.run_baseline_in(&ctx, name, &b.weighting, b.budget)?);
        }
        Ok(RepeatOutcome { repeat, methods })
    }

    pub fn run(&self) -> Result<Vec<RepeatOutcome>> {
        (0..self.cfg.repeats).map(|r| self.run_repeat(r)).collect()
    }
}

/// The search on repeat 0: the selected record and every record.
pub fn run_moew(cfg: &ExperimentConfig) -> Result<(RunRecord, Vec<RunRecord>)> {
    let ex = Experiment::new(cfg.clone())?;
    let run = ex.run_moew_in(&ex.prepare(0)?)?;
    Ok((run.best_record().clone(), run.records))
}

/// A best-of-`budget` baseline on repeat 0.
pub fn run_baseline(cfg: &ExperimentConfig, kind: &BaselineKind, budget: usize) -> Result<(RunRecord, Vec<RunRecord>)> {
    let ex = Experiment::new(cfg.clone())?;
    let run = ex.run_baseline_in(&ex.prepare(0)?, kind.name(), kind, budget)?;
    Ok((run.best_record().clone(), run.records))
}

/// Every repeat of every method, plus per-method test-metric summaries.
pub fn run_repeats(cfg: &ExperimentConfig) -> Result<(Vec<RepeatOutcome>, Vec<MethodSummary>)> {
    if cfg.repeats < 2 {
        return Err(MoewError::Contract(format!(
            "repeat summaries need at least 2 repeats, got {}",
            cfg.repeats
        )));
    }
    let outcomes = Experiment::new(cfg.clone())?.run()?;
    let summary = summarize_outcomes(&outcomes)?;
    Ok((outcomes, summary))
}

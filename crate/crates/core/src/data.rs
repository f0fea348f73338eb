//! Datasets, CSV ingestion, the synthetic beta-distributed task and label transforms.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::seed::{self, Stage};
use crate::{MoewError, Result};

/// What the label column means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Regression,
    /// Labels are 0 or 1.
    Binary,
    /// Labels are class indices in `0..classes`.
    Multiclass { classes: usize },
}

impl Task {
    pub fn num_classes(&self) -> Option<usize> {
        match *self {
            Task::Regression => None,
            Task::Binary => Some(2),
            Task::Multiclass { classes } => Some(classes),
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Task::Regression)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    fn parse(s: &str) -> Option<Role> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Some(Role::Train),
            "validation" | "valid" | "val" => Some(Role::Validation),
            "test" | "testing" => Some(Role::Test),
            _ => None,
        }
    }
}

/// Feature matrix (row-major), labels and optional side columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<f64>,
    groups: Option<Vec<usize>>,
    aux_scores: Option<Vec<f64>>,
    task: Task,
    role: Role,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<f64>,
        task: Task,
        role: Role,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(MoewError::InvalidData("dataset has no rows".into()));
        }
        if dim == 0 || features.len() != n * dim {
            return Err(MoewError::InvalidData(format!(
                "feature matrix has {} entries, expected {n} x {dim}",
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(MoewError::InvalidData(format!(
                "non-finite feature at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        validate_labels(&labels, task)?;
        Ok(Dataset {
            features,
            dim,
            labels,
            groups: None,
            aux_scores: None,
            task,
            role,
        })
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Result<Self> {
        if groups.len() != self.len() {
            return Err(MoewError::InvalidData(format!(
                "groups has length {}, expected {}",
                groups.len(),
                self.len()
            )));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn with_aux_scores(mut self, aux: Vec<f64>) -> Result<Self> {
        if aux.len() != self.len() {
            return Err(MoewError::InvalidData(format!(
                "aux_scores has length {}, expected {}",
                aux.len(),
                self.len()
            )));
        }
        if let Some(v) = aux.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MoewError::InvalidData(format!(
                "aux score {v} outside [0, 1]"
            )));
        }
        self.aux_scores = Some(aux);
        Ok(self)
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn aux_scores(&self) -> Option<&[f64]> {
        self.aux_scores.as_deref()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Class index of row `i`. Only meaningful for classification tasks.
    pub fn class(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Rows `indices` in the given order, keeping side columns aligned.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = Dataset::new(features, self.dim, labels, self.task, self.role)?;
        if let Some(g) = &self.groups {
            out = out.with_groups(indices.iter().map(|&i| g[i]).collect())?;
        }
        if let Some(a) = &self.aux_scores {
            out = out.with_aux_scores(indices.iter().map(|&i| a[i]).collect())?;
        }
        Ok(out)
    }

    /// Returns a copy whose features are replaced, keeping labels and side columns.
    pub fn with_features(&self, features: Vec<f64>, dim: usize) -> Result<Dataset> {
        let mut out = Dataset::new(features, dim, self.labels.clone(), self.task, self.role)?;
        out.groups = self.groups.clone();
        out.aux_scores = self.aux_scores.clone();
        Ok(out)
    }

    fn with_labels(&self, labels: Vec<f64>) -> Result<Dataset> {
        validate_labels(&labels, self.task)?;
        let mut out = self.clone();
        out.labels = labels;
        Ok(out)
    }
}

fn validate_labels(labels: &[f64], task: Task) -> Result<()> {
    for (i, &y) in labels.iter().enumerate() {
        if !y.is_finite() {
            return Err(MoewError::InvalidData(format!("non-finite label at row {i}")));
        }
        if let Some(c) = task.num_classes() {
            if y < 0.0 || y.fract() != 0.0 || y as usize >= c {
                return Err(MoewError::InvalidData(format!(
                    "label {y} at row {i} is not a class index in [0, {c})"
                )));
            }
        }
    }
    Ok(())
}

/// Per-column standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Standardizer {
        let n = ds.len() as f64;
        let d = ds.dim();
        let mut mean = vec![0.0; d];
        for i in 0..ds.len() {
            for (m, v) in mean.iter_mut().zip(ds.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..ds.len() {
            for ((s, v), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(dim: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.mean.len() {
            return Err(MoewError::Shape(format!(
                "standardizer has {} columns, dataset has {}",
                self.mean.len(),
                ds.dim()
            )));
        }
        let mut features = vec![0.0; ds.features().len()];
        for (i, out) in features.chunks_mut(ds.dim()).enumerate() {
            self.transform_row(ds.row(i), out);
        }
        ds.with_features(features, ds.dim())
    }
}

// ---------------------------------------------------------------------------
// CSV

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Label,
    Group,
    AuxScore,
    Split,
    Ignore,
}

/// Maps CSV header names to column roles.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub columns: Vec<(String, ColumnRole)>,
    /// Header columns not listed in `columns` become features.
    pub remaining_as_features: bool,
    pub task: Task,
}

impl CsvSchema {
    pub fn new(task: Task) -> Self {
        CsvSchema {
            columns: Vec::new(),
            remaining_as_features: false,
            task,
        }
    }

    pub fn column(mut self, name: impl Into<String>, role: ColumnRole) -> Self {
        self.columns.push((name.into(), role));
        self
    }

    pub fn remaining_as_features(mut self) -> Self {
        self.remaining_as_features = true;
        self
    }
}

/// Dense ids for categorical group values, assigned by first appearance.
/// Share one vocabulary across files so ids agree between splits.
#[derive(Debug, Clone, Default)]
pub struct GroupVocab {
    ids: HashMap<String, usize>,
}

impl GroupVocab {
    pub fn id(&mut self, value: &str) -> usize {
        let next = self.ids.len();
        *self.ids.entry(value.to_string()).or_insert(next)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

struct ResolvedSchema {
    features: Vec<usize>,
    label: usize,
    group: Option<usize>,
    aux: Option<usize>,
    split: Option<usize>,
}

fn resolve(headers: &csv::StringRecord, schema: &CsvSchema) -> Result<ResolvedSchema> {
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let mut listed = vec![false; headers.len()];
    let mut features = Vec::new();
    let (mut label, mut group, mut aux, mut split) = (None, None, None, None);
    for (name, role) in &schema.columns {
        let &col = index
            .get(name.as_str())
            .ok_or_else(|| MoewError::Schema(format!("missing column `{name}`")))?;
        listed[col] = true;
        let slot = match role {
            ColumnRole::Feature => {
                features.push(col);
                continue;
            }
            ColumnRole::Ignore => continue,
            ColumnRole::Label => &mut label,
            ColumnRole::Group => &mut group,
            ColumnRole::AuxScore => &mut aux,
            ColumnRole::Split => &mut split,
        };
        if slot.replace(col).is_some() {
            return Err(MoewError::Schema(format!("role {role:?} assigned twice")));
        }
    }
    if schema.remaining_as_features {
        features.extend((0..headers.len()).filter(|&c| !listed[c]));
        features.sort_unstable();
    }
    let label = label.ok_or_else(|| MoewError::Schema("no label column".into()))?;
    if features.is_empty() {
        return Err(MoewError::Schema("no feature columns".into()));
    }
    Ok(ResolvedSchema {
        features,
        label,
        group,
        aux,
        split,
    })
}

#[derive(Default)]
struct Columns {
    features: Vec<f64>,
    labels: Vec<f64>,
    groups: Vec<usize>,
    aux: Vec<f64>,
}

impl Columns {
    fn into_dataset(self, r: &ResolvedSchema, task: Task, role: Role) -> Result<Dataset> {
        let mut ds = Dataset::new(self.features, r.features.len(), self.labels, task, role)?;
        if r.group.is_some() {
            ds = ds.with_groups(self.groups)?;
        }
        if r.aux.is_some() {
            ds = ds.with_aux_scores(self.aux)?;
        }
        Ok(ds)
    }
}

fn parse_real(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| MoewError::Parse {
        row,
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(MoewError::Parse {
            row,
            column: column.to_string(),
            message: format!("`{raw}` is not finite"),
        });
    }
    Ok(v)
}

fn read_rows(
    path: &Path,
    schema: &CsvSchema,
    vocab: &mut GroupVocab,
    mut sink: impl FnMut(Option<Role>, &mut dyn FnMut(&mut Columns) -> Result<()>) -> Result<()>,
) -> Result<ResolvedSchema> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let r = resolve(&headers, schema)?;
    for (i, record) in reader.records().enumerate() {
        // Row numbers are 1-based data rows (the header is row 0).
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        let split = match r.split {
            Some(c) => Some(Role::parse(&record[c]).ok_or_else(|| MoewError::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("unknown split `{}`", &record[c]),
            })?),
            None => None,
        };
        let mut push = |cols: &mut Columns| -> Result<()> {
            for &c in &r.features {
                cols.features.push(parse_real(&record[c], row, &headers[c])?);
            }
            let y = parse_real(&record[r.label], row, &headers[r.label])?;
            if let Some(k) = schema.task.num_classes() {
                if y < 0.0 || y.fract() != 0.0 || y as usize >= k {
                    return Err(MoewError::Parse {
                        row,
                        column: headers[r.label].to_string(),
                        message: format!("`{}` is not a class index in [0, {k})", &record[r.label]),
                    });
                }
            }
            cols.labels.push(y);
            if let Some(c) = r.group {
                cols.groups.push(vocab.id(record[c].trim()));
            }
            if let Some(c) = r.aux {
                cols.aux.push(parse_real(&record[c], row, &headers[c])?);
            }
            Ok(())
        };
        sink(split, &mut push)?;
    }
    Ok(r)
}

fn csv_error(path: &Path, e: csv::Error) -> MoewError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MoewError::io(path, io),
        other => MoewError::Schema(format!("{}: {other:?}", path.display())),
    }
}

/// Loads a single-split CSV. Rows keep file order.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema, role: Role) -> Result<Dataset> {
    load_csv_with_vocab(path, schema, role, &mut GroupVocab::default())
}

pub fn load_csv_with_vocab(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    role: Role,
    vocab: &mut GroupVocab,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut cols = Columns::default();
    let r = read_rows(path, schema, vocab, |_, push| push(&mut cols))?;
    cols.into_dataset(&r, schema.task, role)
}

/// Train, validation and test splits.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Loads one CSV whose split column assigns each row to train, validation or test.
pub fn load_csv_splits(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Splits> {
    let path = path.as_ref();
    let mut vocab = GroupVocab::default();
    let mut parts: [Columns; 3] = Default::default();
    let r = read_rows(path, schema, &mut vocab, |split, push| {
        let role = split.ok_or_else(|| MoewError::Schema("schema has no split column".into()))?;
        push(&mut parts[role as usize])
    })?;
    let [train, validation, test] = parts;
    Ok(Splits {
        train: train.into_dataset(&r, schema.task, Role::Train)?,
        validation: validation.into_dataset(&r, schema.task, Role::Validation)?,
        test: test.into_dataset(&r, schema.task, Role::Test)?,
    })
}

/// Writes features and labels back out as CSV (`x1..xD,label[,group][,aux]`).
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = (1..=ds.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    if ds.groups().is_some() {
        header.push("group".into());
    }
    if ds.aux_scores().is_some() {
        header.push("aux".into());
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| format!("{v}")).collect();
        rec.push(format!("{}", ds.labels()[i]));
        if let Some(g) = ds.groups() {
            rec.push(g[i].to_string());
        }
        if let Some(a) = ds.aux_scores() {
            rec.push(format!("{}", a[i]));
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| MoewError::io(path, e))
}

// ---------------------------------------------------------------------------
// Synthetic task

/// Two features drawn from per-split beta distributions; the clean label is 1
/// above the anti-diagonal `x1 + x2 > 1`, then flipped with `label_noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// `(a, b)` for each of the two features.
    pub beta_train: [(f64, f64); 2],
    /// Shared by validation and test, which are IID with each other.
    pub beta_test: [(f64, f64); 2],
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            n_train: 5000,
            n_val: 1000,
            n_test: 5000,
            beta_train: [(2.0, 1.0), (2.0, 1.0)],
            beta_test: [(1.0, 2.0), (1.0, 2.0)],
            label_noise: 0.15,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(MoewError::Domain("toy split sizes must be positive".into()));
        }
        let all = self.beta_train.iter().chain(&self.beta_test);
        if all.clone().any(|&(a, b)| !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite())) {
            return Err(MoewError::Domain("beta parameters must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(MoewError::Domain(format!(
                "label_noise {} outside [0, 0.5)",
                self.label_noise
            )));
        }
        Ok(())
    }
}

pub fn toy_clean_label(x1: f64, x2: f64) -> f64 {
    if x1 + x2 > 1.0 {
        1.0
    } else {
        0.0
    }
}

fn toy_split(
    n: usize,
    betas: &[(f64, f64); 2],
    noise: f64,
    seed: u64,
    role: Role,
) -> Result<Dataset> {
    let mut rng = seed::rng(seed);
    let dists = betas
        .iter()
        .map(|&(a, b)| Beta::new(a, b).map_err(|e| MoewError::Domain(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = dists[0].sample(&mut rng);
        let x2 = dists[1].sample(&mut rng);
        let mut y = toy_clean_label(x1, x2);
        if rng.gen::<f64>() < noise {
            y = 1.0 - y;
        }
        features.extend([x1, x2]);
        labels.push(y);
    }
    Dataset::new(features, 2, labels, Task::Binary, role)
}

/// Draws train, validation and test splits, each from its own seeded stream.
pub fn generate_toy(spec: &ToySpec) -> Result<Splits> {
    spec.validate()?;
    let s = |role: Role| seed::derive_stage(spec.seed, Stage::Data, &[role as u64]);
    Ok(Splits {
        train: toy_split(spec.n_train, &spec.beta_train, spec.label_noise, s(Role::Train), Role::Train)?,
        validation: toy_split(
            spec.n_val,
            &spec.beta_test,
            spec.label_noise,
            s(Role::Validation),
            Role::Validation,
        )?,
        test: toy_split(spec.n_test, &spec.beta_test, spec.label_noise, s(Role::Test), Role::Test)?,
    })
}

// ---------------------------------------------------------------------------
// Label transforms

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTransform {
    #[default]
    Identity,
    Log,
}

impl LabelTransform {
    pub fn forward(&self, y: f64) -> Result<f64> {
        match self {
            LabelTransform::Identity => Ok(y),
            LabelTransform::Log if y > 0.0 => Ok(y.ln()),
            LabelTransform::Log => Err(MoewError::Domain(format!(
                "log transform needs positive labels, got {y}"
            ))),
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match self {
            LabelTransform::Identity => y,
            LabelTransform::Log => y.exp(),
        }
    }
}

pub fn transform_labels(ds: &Dataset, kind: LabelTransform) -> Result<Dataset> {
    if kind != LabelTransform::Identity && ds.task().is_classification() {
        return Err(MoewError::Domain("label transforms apply to regression labels only".into()));
    }
    let labels = ds
        .labels()
        .iter()
        .map(|&y| kind.forward(y))
        .collect::<Result<Vec<_>>>()?;
    ds.with_labels(labels)
}

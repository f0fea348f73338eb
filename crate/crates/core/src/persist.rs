//! Plain-text model files.
//!
//! Files are line oriented: a keyword followed by space-separated values.
//! Reals use Rust's shortest round-trip formatting, so reading back a written
//! file reproduces every value bitwise.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Standardizer, Task};
use crate::embed::{Embedder, EmbedderKind};
use crate::nn::{Layer, ModelParams, OutputKind};
use crate::weights::{raw_weight, ImportanceTable};
use crate::{MoewError, Result};

const MODEL_MAGIC: &str = "moew-model 1";
const WEIGHTING_MAGIC: &str = "moew-weighting 1";

/// Everything needed to evaluate a trained weighting function on raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingSnapshot {
    pub task: Task,
    pub standardizer: Standardizer,
    pub embedder: Embedder,
    pub importance: ImportanceTable,
    pub alpha: Vec<f64>,
    /// Normalization constant from the training run.
    pub normalizer: f64,
}

impl WeightingSnapshot {
    /// `c * pi(y) * sigmoid(z(x, y) . alpha)` at raw (unstandardized) features.
    pub fn weight(&self, raw_x: &[f64], y: f64) -> Result<f64> {
        if raw_x.len() != self.standardizer.mean.len() {
            return Err(MoewError::Shape(format!(
                "expected {} features, got {}",
                self.standardizer.mean.len(),
                raw_x.len()
            )));
        }
        let mut x = vec![0.0; raw_x.len()];
        self.standardizer.transform_row(raw_x, &mut x);
        let z = self.embedder.embed(&x, y)?;
        Ok(self.normalizer * raw_weight(&self.alpha, &z, y, &self.importance))
    }
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

fn output_name(kind: OutputKind) -> &'static str {
    match kind {
        OutputKind::Linear => "linear",
        OutputKind::Score => "score",
        OutputKind::Logits => "logits",
        OutputKind::Vector => "vector",
    }
}

fn write_params(out: &mut String, p: &ModelParams) {
    writeln!(out, "output {}", output_name(p.output)).unwrap();
    writeln!(out, "layers {}", p.layers.len()).unwrap();
    for l in &p.layers {
        writeln!(out, "layer {} {}", l.inputs, l.outputs).unwrap();
        for row in l.weights.chunks(l.inputs.max(1)) {
            writeln!(out, "w {}", join(row)).unwrap();
        }
        writeln!(out, "b {}", join(&l.bias)).unwrap();
    }
}

fn write_task(out: &mut String, task: Task) {
    match task {
        Task::Regression => writeln!(out, "task regression").unwrap(),
        Task::Binary => writeln!(out, "task binary").unwrap(),
        Task::Multiclass { classes } => writeln!(out, "task multiclass {classes}").unwrap(),
    }
}

pub fn model_to_string(p: &ModelParams) -> String {
    let mut out = format!("{MODEL_MAGIC}\n");
    write_params(&mut out, p);
    out
}

pub fn weighting_to_string(s: &WeightingSnapshot) -> String {
    let mut out = format!("{WEIGHTING_MAGIC}\n");
    write_task(&mut out, s.task);
    writeln!(out, "mean {}", join(&s.standardizer.mean)).unwrap();
    writeln!(out, "std {}", join(&s.standardizer.std)).unwrap();
    match &s.embedder.kind {
        EmbedderKind::Autoencoder {
            params,
            middle,
            task,
            features,
        } => {
            writeln!(out, "embedder autoencoder {middle} {features}").unwrap();
            write_task(&mut out, *task);
            write_params(&mut out, params);
        }
        EmbedderKind::LabelPassthrough { classes } => {
            writeln!(out, "embedder label_passthrough {classes}").unwrap();
        }
    }
    writeln!(out, "offsets {}", join(&s.embedder.offsets)).unwrap();
    match &s.importance {
        ImportanceTable::ClassRatio { ratios } => writeln!(out, "importance class_ratio {}", join(ratios)),
        ImportanceTable::UserSupplied { ratios } => {
            writeln!(out, "importance user_supplied {}", join(ratios))
        }
        ImportanceTable::ConstantOne => writeln!(out, "importance constant_one"),
        ImportanceTable::Histogram { edges, ratios } => {
            writeln!(out, "importance histogram {}", edges.len())
                .and_then(|_| writeln!(out, "edges {}", join(edges)))
                .and_then(|_| writeln!(out, "ratios {}", join(ratios)))
        }
    }
    .unwrap();
    writeln!(out, "alpha {}", join(&s.alpha)).unwrap();
    writeln!(out, "normalizer {}", s.normalizer).unwrap();
    out
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: text.lines().enumerate(),
        }
    }

    fn err(line: usize, msg: impl Into<String>) -> MoewError {
        MoewError::Parse {
            row: line + 1,
            column: "model file".into(),
            message: msg.into(),
        }
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (i, line) = self
            .lines
            .next()
            .ok_or_else(|| Reader::err(usize::MAX - 1, format!("unexpected end of file, wanted `{key}`")))?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some(k) if k == key => Ok((i, tokens.collect())),
            other => Err(Reader::err(i, format!("expected `{key}`, found `{}`", other.unwrap_or("")))),
        }
    }

    fn reals(&mut self, key: &str) -> Result<Vec<f64>> {
        let (i, tokens) = self.expect(key)?;
        tokens
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| Reader::err(i, format!("`{t}`: {e}"))))
            .collect()
    }

    fn usizes(&mut self, key: &str, count: usize) -> Result<(usize, Vec<usize>)> {
        let (i, tokens) = self.expect(key)?;
        if tokens.len() < count {
            return Err(Reader::err(i, format!("`{key}` needs {count} integers")));
        }
        let v = tokens[..count]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|e| Reader::err(i, format!("`{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok((i, v))
    }

    fn params(&mut self) -> Result<ModelParams> {
        let (i, t) = self.expect("output")?;
        let output = match t.first().copied() {
            Some("linear") => OutputKind::Linear,
            Some("score") => OutputKind::Score,
            Some("logits") => OutputKind::Logits,
            Some("vector") => OutputKind::Vector,
            other => return Err(Reader::err(i, format!("unknown output kind {other:?}"))),
        };
        let (_, n) = self.usizes("layers", 1)?;
        let mut layers = Vec::with_capacity(n[0]);
        for _ in 0..n[0] {
            let (i, shape) = self.usizes("layer", 2)?;
            let (inputs, outputs) = (shape[0], shape[1]);
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                let row = self.reals("w")?;
                if row.len() != inputs {
                    return Err(Reader::err(i, format!("weight row has {} values, expected {inputs}", row.len())));
                }
                weights.extend(row);
            }
            let bias = self.reals("b")?;
            if bias.len() != outputs {
                return Err(Reader::err(i, "bias length does not match layer"));
            }
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        if layers.is_empty() || layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(Reader::err(i, "layer shapes do not chain"));
        }
        Ok(ModelParams { layers, output })
    }

    fn task(&mut self) -> Result<Task> {
        let (i, t) = self.expect("task")?;
        match t.as_slice() {
            ["regression"] => Ok(Task::Regression),
            ["binary"] => Ok(Task::Binary),
            ["multiclass", c] => c
                .parse()
                .map(|classes| Task::Multiclass { classes })
                .map_err(|e| Reader::err(i, format!("class count: {e}"))),
            _ => Err(Reader::err(i, "unknown task")),
        }
    }

    fn magic(&mut self, magic: &str) -> Result<()> {
        match self.lines.next() {
            Some((_, l)) if l.trim() == magic => Ok(()),
            _ => Err(Reader::err(0, format!("missing header `{magic}`"))),
        }
    }
}

pub fn model_from_str(text: &str) -> Result<ModelParams> {
    let mut r = Reader::new(text);
    r.magic(MODEL_MAGIC)?;
    r.params()
}

pub fn weighting_from_str(text: &str) -> Result<WeightingSnapshot> {
    let mut r = Reader::new(text);
    r.magic(WEIGHTING_MAGIC)?;
    let task = r.task()?;
    let mean = r.reals("mean")?;
    let std = r.reals("std")?;
    let (i, t) = r.expect("embedder")?;
    let kind = match t.as_slice() {
        ["autoencoder", m, f] => {
            let parse = |s: &str| s.parse::<usize>().map_err(|e| Reader::err(i, e.to_string()));
            let (middle, features) = (parse(m)?, parse(f)?);
            let task = r.task()?;
            let params = r.params()?;
            EmbedderKind::Autoencoder {
                params,
                middle,
                task,
                features,
            }
        }
        ["label_passthrough", c] => EmbedderKind::LabelPassthrough {
            classes: c.parse().map_err(|e| Reader::err(i, format!("class count: {e}")))?,
        },
        _ => return Err(Reader::err(i, "unknown embedder")),
    };
    let offsets = r.reals("offsets")?;
    let (i, t) = r.expect("importance")?;
    let parse_all = |ts: &[&str]| -> Result<Vec<f64>> {
        ts.iter()
            .map(|s| s.parse::<f64>().map_err(|e| Reader::err(i, format!("`{s}`: {e}"))))
            .collect()
    };
    let importance = match t.split_first() {
        Some((&"class_ratio", rest)) => ImportanceTable::ClassRatio { ratios: parse_all(rest)? },
        Some((&"user_supplied", rest)) => ImportanceTable::UserSupplied { ratios: parse_all(rest)? },
        Some((&"constant_one", _)) => ImportanceTable::ConstantOne,
        Some((&"histogram", _)) => {
            let edges = r.reals("edges")?;
            let ratios = r.reals("ratios")?;
            if ratios.len() != edges.len() + 1 {
                return Err(Reader::err(i, "histogram needs one more ratio than edges"));
            }
            ImportanceTable::Histogram { edges, ratios }
        }
        _ => return Err(Reader::err(i, "unknown importance table")),
    };
    let alpha = r.reals("alpha")?;
    let normalizer = r.reals("normalizer")?;
    if normalizer.len() != 1 || mean.len() != std.len() || alpha.len() != offsets.len() {
        return Err(Reader::err(i, "inconsistent weighting file"));
    }
    Ok(WeightingSnapshot {
        task,
        standardizer: Standardizer { mean, std },
        embedder: Embedder { kind, offsets },
        importance,
        alpha,
        normalizer: normalizer[0],
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| MoewError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| MoewError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, MlpArchitecture};

    fn snapshot(kind: EmbedderKind, offsets: Vec<f64>, importance: ImportanceTable) -> WeightingSnapshot {
        WeightingSnapshot {
            task: Task::Binary,
            standardizer: Standardizer {
                mean: vec![0.5, -1.0 / 3.0],
                std: vec![0.1, 2.0],
            },
            embedder: Embedder { kind, offsets },
            importance,
            alpha: vec![0.25, -1e-300],
            normalizer: 1.0 / 0.7,
        }
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let arch = MlpArchitecture::new(vec![3, 4, 2], OutputKind::Logits).unwrap();
        let p = init_params(&arch, 17);
        assert_eq!(model_from_str(&model_to_string(&p)).unwrap(), p);
    }

    #[test]
    fn weighting_round_trip() {
        let arch = MlpArchitecture::new(vec![3, 5, 2, 5, 3], OutputKind::Vector).unwrap();
        let ae = EmbedderKind::Autoencoder {
            params: init_params(&arch, 3),
            middle: 1,
            task: Task::Binary,
            features: 2,
        };
        let tables = [
            ImportanceTable::ClassRatio { ratios: vec![0.2, 1.5] },
            ImportanceTable::ConstantOne,
            ImportanceTable::UserSupplied { ratios: vec![2.0, 0.001] },
            ImportanceTable::Histogram {
                edges: vec![0.5],
                ratios: vec![1.0, 3.0],
            },
        ];
        for t in tables {
            let s = snapshot(ae.clone(), vec![0.1, 0.2], t.clone());
            assert_eq!(weighting_from_str(&weighting_to_string(&s)).unwrap(), s);
            let s = snapshot(EmbedderKind::LabelPassthrough { classes: 2 }, vec![0.4, 0.6], t);
            assert_eq!(weighting_from_str(&weighting_to_string(&s)).unwrap(), s);
        }
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(model_from_str("").is_err());
        assert!(model_from_str("moew-model 1\noutput linear\nlayers 1\nlayer 2 1\nw 1\nb 0\n").is_err());
        assert!(model_from_str("moew-model 1\noutput wide\n").is_err());
    }

    #[test]
    fn snapshot_weight_matches_formula() {
        let s = snapshot(
            EmbedderKind::LabelPassthrough { classes: 2 },
            vec![0.4, 0.6],
            ImportanceTable::ClassRatio { ratios: vec![0.2, 1.5] },
        );
        let w = s.weight(&[0.3, 0.3], 1.0).unwrap();
        let z = [-0.4, 0.4];
        let expect = s.normalizer * 1.5 * crate::nn::sigmoid(z[0] * s.alpha[0] + z[1] * s.alpha[1]);
        assert!((w - expect).abs() < 1e-15);
        assert!(s.weight(&[0.3], 1.0).is_err());
    }
}

//! Black-box evaluation metrics and thresholding utilities.
//!
//! A score `s` is flagged positive iff `s > t` (strict) for threshold `t`.
//! [`MetricSpec::evaluate`] returns values where larger is always better;
//! [`MetricSpec::raw`] returns each metric in its natural orientation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{MoewError, Result};

/// Model outputs for a set of examples, with their labels and side columns.
#[derive(Debug, Clone, Copy)]
pub struct EvalBundle<'a> {
    /// `n x width` row-major outputs; width 1 for scores and regression.
    pub scores: &'a [f64],
    pub width: usize,
    pub labels: &'a [f64],
    pub groups: Option<&'a [usize]>,
    pub aux_scores: Option<&'a [f64]>,
}

impl<'a> EvalBundle<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [f64]) -> Self {
        EvalBundle {
            scores,
            width: 1,
            labels,
            groups: None,
            aux_scores: None,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn with_groups(mut self, groups: &'a [usize]) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn with_aux(mut self, aux: &'a [f64]) -> Self {
        self.aux_scores = Some(aux);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.width == 0 || self.scores.len() != self.labels.len() * self.width {
            return Err(MoewError::Shape(format!(
                "{} scores for {} labels of width {}",
                self.scores.len(),
                self.labels.len(),
                self.width
            )));
        }
        if self.is_empty() {
            return Err(MoewError::Metric("empty evaluation set".into()));
        }
        if self.groups.is_some_and(|g| g.len() != self.len())
            || self.aux_scores.is_some_and(|a| a.len() != self.len())
        {
            return Err(MoewError::Shape("side columns are not aligned with labels".into()));
        }
        Ok(())
    }

    fn scalar_scores(&self) -> Result<&'a [f64]> {
        self.check()?;
        if self.width != 1 {
            return Err(MoewError::Shape("metric needs one score per example".into()));
        }
        Ok(self.scores)
    }

    fn groups_required(&self) -> Result<&'a [usize]> {
        self.groups
            .ok_or_else(|| MoewError::Metric("metric needs group ids".into()))
    }

    /// Row-wise argmax of the outputs (lowest index wins ties).
    pub fn predicted_classes(&self) -> Vec<usize> {
        self.scores
            .chunks_exact(self.width)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

fn is_positive(y: f64) -> bool {
    y > 0.5
}

/// Largest float strictly below `x`.
fn just_below(x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return x;
    }
    if x == 0.0 {
        return -f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits - 1)
    } else {
        f64::from_bits(bits + 1)
    }
}

fn sorted_desc(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Precision at the largest threshold whose recall reaches `target_recall`.
pub fn precision_at_recall(b: &EvalBundle<'_>, target_recall: f64) -> Result<f64> {
    let scores = b.scalar_scores()?;
    let positives = b.labels.iter().filter(|&&y| is_positive(y)).count();
    if positives == 0 {
        return Err(MoewError::Metric("precision at recall needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        // Flag the whole tie block at once.
        let level = scores[order[i]];
        while i < order.len() && scores[order[i]] == level {
            if is_positive(b.labels[order[i]]) {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp as f64 >= target_recall * positives as f64 - 1e-12 {
            return Ok(tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(tp as f64 / (tp + fp) as f64)
}

/// `max_c Pr(prediction != c | y = c)` over classes `0..classes`.
pub fn max_per_class_error(b: &EvalBundle<'_>, classes: usize) -> Result<f64> {
    b.check()?;
    let pred = if b.width == 1 {
        // Already class predictions.
        b.scores.iter().map(|&s| s as usize).collect()
    } else {
        b.predicted_classes()
    };
    let mut total = vec![0usize; classes];
    let mut wrong = vec![0usize; classes];
    for (&y, &p) in b.labels.iter().zip(&pred) {
        let c = y as usize;
        if c >= classes {
            return Err(MoewError::Metric(format!("label {y} outside {classes} classes")));
        }
        total[c] += 1;
        if p != c {
            wrong[c] += 1;
        }
    }
    if let Some(c) = total.iter().position(|&t| t == 0) {
        return Err(MoewError::Metric(format!("class {c} has no examples")));
    }
    Ok(total
        .iter()
        .zip(&wrong)
        .map(|(&t, &w)| w as f64 / t as f64)
        .fold(0.0, f64::max))
}

/// Worst bucket mean of `|prediction / y - 1|`, bucketing labels at `thresholds`
/// (a label equal to a threshold goes to the upper bucket).
pub fn worst_quartile_relative_error(b: &EvalBundle<'_>, thresholds: &[f64; 3]) -> Result<f64> {
    let preds = b.scalar_scores()?;
    let mut sum = [0.0; 4];
    let mut count = [0usize; 4];
    for (&p, &y) in preds.iter().zip(b.labels) {
        if y <= 0.0 {
            return Err(MoewError::Metric(format!("relative error needs positive labels, got {y}")));
        }
        let k = thresholds.partition_point(|&t| t <= y);
        sum[k] += (p / y - 1.0).abs();
        count[k] += 1;
    }
    if let Some(k) = count.iter().position(|&c| c == 0) {
        return Err(MoewError::Metric(format!("label bucket {k} is empty")));
    }
    Ok((0..4).map(|k| sum[k] / count[k] as f64).fold(0.0, f64::max))
}

/// Decision thresholds: one shared value, or one per group id.
#[derive(Debug, Clone, PartialEq)]
pub enum Thresholds {
    Global(f64),
    PerGroup(BTreeMap<usize, f64>),
}

impl Thresholds {
    fn for_group(&self, g: usize) -> Result<f64> {
        match self {
            Thresholds::Global(t) => Ok(*t),
            Thresholds::PerGroup(m) => m
                .get(&g)
                .copied()
                .ok_or_else(|| MoewError::Metric(format!("no threshold for group {g}"))),
        }
    }
}

fn group_ids(groups: &[usize]) -> Vec<usize> {
    let mut ids = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Per-group false positive rates under `thresholds`.
pub fn group_fprs(b: &EvalBundle<'_>, thresholds: &Thresholds) -> Result<BTreeMap<usize, f64>> {
    let scores = b.scalar_scores()?;
    let groups = b.groups_required()?;
    let mut neg: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for g in group_ids(groups) {
        neg.insert(g, (0, 0));
    }
    for ((&s, &y), &g) in scores.iter().zip(b.labels).zip(groups) {
        if !is_positive(y) {
            let t = thresholds.for_group(g)?;
            let e = neg.get_mut(&g).unwrap();
            e.0 += 1;
            if s > t {
                e.1 += 1;
            }
        }
    }
    neg.into_iter()
        .map(|(g, (n, fp))| {
            if n == 0 {
                Err(MoewError::Metric(format!("group {g} has no negatives")))
            } else {
                Ok((g, fp as f64 / n as f64))
            }
        })
        .collect()
}

/// `max_g FPR_g - min_g FPR_g`.
pub fn fairness_violation_fpr_gap(b: &EvalBundle<'_>, thresholds: &Thresholds) -> Result<f64> {
    let fprs = group_fprs(b, thresholds)?;
    let max = fprs.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = fprs.values().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Fraction of examples classified correctly under `thresholds`.
pub fn accuracy(b: &EvalBundle<'_>, thresholds: &Thresholds) -> Result<f64> {
    let scores = b.scalar_scores()?;
    let mut correct = 0usize;
    for (i, (&s, &y)) in scores.iter().zip(b.labels).enumerate() {
        let t = match thresholds {
            Thresholds::Global(t) => *t,
            Thresholds::PerGroup(_) => thresholds.for_group(b.groups_required()?[i])?,
        };
        if (s > t) == is_positive(y) {
            correct += 1;
        }
    }
    Ok(correct as f64 / b.len() as f64)
}

/// The observed-score threshold maximizing overall accuracy (largest wins ties).
pub fn accuracy_maximizing_threshold(b: &EvalBundle<'_>) -> Result<f64> {
    let scores = b.scalar_scores()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Threshold below the minimum flags everything: correct = #positives.
    let positives = b.labels.iter().filter(|&&y| is_positive(y)).count();
    let mut best = (positives, just_below(scores[order[0]]));
    let mut correct = positives;
    let mut i = 0;
    while i < order.len() {
        let level = scores[order[i]];
        while i < order.len() && scores[order[i]] == level {
            if is_positive(b.labels[order[i]]) {
                correct -= 1;
            } else {
                correct += 1;
            }
            i += 1;
        }
        if correct >= best.0 {
            best = (correct, level);
        }
    }
    Ok(best.1)
}

/// Smallest `t` with `fraction(scores > t) <= coverage`.
pub fn threshold_at_coverage(scores: &[f64], coverage: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(MoewError::Metric("no scores".into()));
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(MoewError::Metric(format!("coverage {coverage} outside (0, 1]")));
    }
    let n = scores.len();
    let k = ((coverage * n as f64) + 1e-9).floor() as usize;
    let sorted = sorted_desc(scores);
    if k >= n {
        Ok(just_below(sorted[n - 1]))
    } else {
        Ok(sorted[k])
    }
}

/// Per-group thresholds from post-shift, with the coverage actually achieved.
#[derive(Debug, Clone, PartialEq)]
pub struct PostShift {
    pub thresholds: Thresholds,
    pub target_fpr: f64,
    pub achieved_coverage: f64,
}

struct GroupCurve {
    group: usize,
    /// Candidate thresholds, ascending: "below min" then each distinct score.
    thresholds: Vec<f64>,
    fpr: Vec<f64>,
    flagged: Vec<usize>,
}

impl GroupCurve {
    fn build(group: usize, scores: &[f64], labels: &[f64]) -> Result<GroupCurve> {
        let negatives = labels.iter().filter(|&&y| !is_positive(y)).count();
        if negatives == 0 {
            return Err(MoewError::Metric(format!("group {group} has no negatives")));
        }
        let mut levels = scores.to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut thresholds = vec![just_below(levels[0])];
        thresholds.extend(levels);
        let mut fpr = Vec::with_capacity(thresholds.len());
        let mut flagged = Vec::with_capacity(thresholds.len());
        for &t in &thresholds {
            let mut fp = 0;
            let mut f = 0;
            for (&s, &y) in scores.iter().zip(labels) {
                if s > t {
                    f += 1;
                    if !is_positive(y) {
                        fp += 1;
                    }
                }
            }
            fpr.push(fp as f64 / negatives as f64);
            flagged.push(f);
        }
        Ok(GroupCurve {
            group,
            thresholds,
            fpr,
            flagged,
        })
    }

    /// Index of the threshold whose FPR is nearest `target` (higher threshold on ties).
    fn pick(&self, target: f64) -> usize {
        let mut best = 0;
        for i in 0..self.thresholds.len() {
            if (self.fpr[i] - target).abs() <= (self.fpr[best] - target).abs() {
                best = i;
            }
        }
        best
    }
}

/// Per-group thresholds that equalize training FPR at a common target while
/// flagging (as nearly as possible) `coverage` of all training examples.
pub fn post_shift_thresholds(train: &EvalBundle<'_>, coverage: f64) -> Result<PostShift> {
    let scores = train.scalar_scores()?;
    let groups = train.groups_required()?;
    let curves = group_ids(groups)
        .into_iter()
        .map(|g| {
            let idx: Vec<usize> = (0..scores.len()).filter(|&i| groups[i] == g).collect();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| train.labels[i]).collect();
            GroupCurve::build(g, &s, &y)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    let flagged_at = |t: f64| -> usize { curves.iter().map(|c| c.flagged[c.pick(t)]).sum() };
    let target = coverage * n;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if flagged_at(mid) as f64 > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let err = |t: f64| (flagged_at(t) as f64 - target).abs();
    let t_star = if err(hi) < err(lo) { hi } else { lo };
    let mut map = BTreeMap::new();
    let mut flagged = 0;
    for c in &curves {
        let i = c.pick(t_star);
        map.insert(c.group, c.thresholds[i]);
        flagged += c.flagged[i];
    }
    Ok(PostShift {
        thresholds: Thresholds::PerGroup(map),
        target_fpr: t_star,
        achieved_coverage: flagged as f64 / n,
    })
}

/// Mean aux score of the examples flagged at `coverage`.
pub fn mean_aux_of_flagged(b: &EvalBundle<'_>, coverage: f64) -> Result<f64> {
    let scores = b.scalar_scores()?;
    let aux = b
        .aux_scores
        .ok_or_else(|| MoewError::Metric("metric needs aux scores".into()))?;
    let t = threshold_at_coverage(scores, coverage)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (&s, &a) in scores.iter().zip(aux) {
        if s > t {
            sum += a;
            count += 1;
        }
    }
    if count == 0 {
        return Err(MoewError::Metric("no examples flagged".into()));
    }
    Ok(sum / count as f64)
}

// ---------------------------------------------------------------------------
// Registry

/// How shared or per-group thresholds are derived from the training predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// One threshold maximizing overall training accuracy.
    #[default]
    MaxAccuracy,
    /// Post-shift per-group thresholds at the coverage of the max-accuracy threshold.
    PostShift,
}

/// A named metric with its parameters, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    PrecisionAtRecall {
        target_recall: f64,
    },
    MaxPerClassError {
        classes: usize,
    },
    WorstQuartileRelativeError {
        thresholds: [f64; 3],
    },
    FairnessViolation {
        #[serde(default)]
        rule: ThresholdRule,
    },
    Accuracy {
        #[serde(default)]
        rule: ThresholdRule,
    },
    MeanAuxOfFlagged {
        coverage: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Maximize,
    Minimize,
}

impl MetricSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MetricSpec::PrecisionAtRecall { .. } => "precision_at_recall",
            MetricSpec::MaxPerClassError { .. } => "max_per_class_error",
            MetricSpec::WorstQuartileRelativeError { .. } => "worst_quartile_relative_error",
            MetricSpec::FairnessViolation { .. } => "fairness_violation",
            MetricSpec::Accuracy { .. } => "accuracy",
            MetricSpec::MeanAuxOfFlagged { .. } => "mean_aux_of_flagged",
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            MetricSpec::MaxPerClassError { .. }
            | MetricSpec::WorstQuartileRelativeError { .. }
            | MetricSpec::FairnessViolation { .. } => Orientation::Minimize,
            _ => Orientation::Maximize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MoewError::Metric(m));
        match self {
            MetricSpec::PrecisionAtRecall { target_recall } if !(0.0..=1.0).contains(target_recall) => {
                bad(format!("target_recall {target_recall} outside [0, 1]"))
            }
            MetricSpec::MaxPerClassError { classes } if *classes < 2 => {
                bad("max_per_class_error needs at least 2 classes".into())
            }
            MetricSpec::WorstQuartileRelativeError { thresholds }
                if !thresholds.windows(2).all(|w| w[0] < w[1]) =>
            {
                bad("quartile thresholds must be increasing".into())
            }
            MetricSpec::MeanAuxOfFlagged { coverage } if !(*coverage > 0.0 && *coverage <= 1.0) => {
                bad(format!("coverage {coverage} outside (0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// Whether evaluation consults the training predictions.
    pub fn needs_train(&self) -> bool {
        matches!(self, MetricSpec::FairnessViolation { .. } | MetricSpec::Accuracy { .. })
    }

    fn thresholds(rule: ThresholdRule, train: Option<&EvalBundle<'_>>) -> Result<Thresholds> {
        let train = train.ok_or_else(|| MoewError::Metric("metric needs training predictions".into()))?;
        let t = accuracy_maximizing_threshold(train)?;
        match rule {
            ThresholdRule::MaxAccuracy => Ok(Thresholds::Global(t)),
            ThresholdRule::PostShift => {
                let scores = train.scalar_scores()?;
                let covered = scores.iter().filter(|&&s| s > t).count() as f64 / scores.len() as f64;
                // Post-shift needs a positive coverage target.
                let coverage = covered.max(1.0 / scores.len() as f64);
                Ok(post_shift_thresholds(train, coverage)?.thresholds)
            }
        }
    }

    /// The metric in its natural orientation.
    pub fn raw(&self, b: &EvalBundle<'_>, train: Option<&EvalBundle<'_>>) -> Result<f64> {
        match self {
            MetricSpec::PrecisionAtRecall { target_recall } => precision_at_recall(b, *target_recall),
            MetricSpec::MaxPerClassError { classes } => max_per_class_error(b, *classes),
            MetricSpec::WorstQuartileRelativeError { thresholds } => {
                worst_quartile_relative_error(b, thresholds)
            }
            MetricSpec::FairnessViolation { rule } => {
                fairness_violation_fpr_gap(b, &Self::thresholds(*rule, train)?)
            }
            MetricSpec::Accuracy { rule } => accuracy(b, &Self::thresholds(*rule, train)?),
            MetricSpec::MeanAuxOfFlagged { coverage } => mean_aux_of_flagged(b, *coverage),
        }
    }

    /// Maps a natural-orientation value to larger-is-better.
    pub fn orient(&self, raw: f64) -> f64 {
        match self.orientation() {
            Orientation::Maximize => raw,
            Orientation::Minimize => -raw,
        }
    }

    /// The metric oriented so that larger is better.
    pub fn evaluate(&self, b: &EvalBundle<'_>, train: Option<&EvalBundle<'_>>) -> Result<f64> {
        Ok(self.orient(self.raw(b, train)?))
    }
}

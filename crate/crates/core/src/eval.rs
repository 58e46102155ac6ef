//! Confusion matrices, accuracy/precision/recall/F1, fold aggregation and
//! cross-validated head evaluation.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{Partition, SplitPlan};
use crate::train::{train_head, Samples, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{actual} actual labels but {predicted} predictions")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("positive class {0} out of range")]
    BadPositive(usize),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: TrainError,
    },
}

/// Rows are actual classes, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion(actual: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&a, &p) in actual.iter().zip(predicted) {
        let label = a.max(p);
        if label >= k {
            return Err(EvalError::LabelOutOfRange { label, classes: k });
        }
        counts[a][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: (0..k).map(|i| i.to_string()).collect(),
        counts,
    })
}

/// Binary counts for one class against the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn with_classes(mut self, names: &[String]) -> Self {
        if names.len() == self.counts.len() {
            self.classes = names.to_vec();
        }
        self
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn one_vs_rest(&self, c: usize) -> BinaryCounts {
        let tp = self.counts[c][c];
        let actual: u64 = self.counts[c].iter().sum();
        let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
        BinaryCounts {
            tp,
            fp: predicted - tp,
            fn_: actual - tp,
            tn: self.total() + tp - actual - predicted,
        }
    }

    pub fn from_binary(b: BinaryCounts) -> Self {
        ConfusionMatrix {
            classes: vec!["positive".into(), "negative".into()],
            counts: vec![vec![b.tp, b.fn_], vec![b.fp, b.tn]],
        }
    }

    /// Aligned text grid, actual classes down, predicted across.
    pub fn to_grid(&self) -> String {
        let w = self
            .classes
            .iter()
            .map(String::len)
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .chain(["actual\\pred".len()])
            .max()
            .unwrap_or(1);
        let mut s = format!("{:>w$}", "actual\\pred");
        for c in &self.classes {
            let _ = write!(s, "  {c:>w$}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let _ = write!(s, "{c:>w$}");
            for v in row {
                let _ = write!(s, "  {v:>w$}");
            }
            s.push('\n');
        }
        s
    }
}

/// Why a metric is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Undefined {
    NoPredictedPositives,
    NoActualPositives,
    PrecisionOrRecallUndefined,
    ZeroPrecisionAndRecall,
}

impl fmt::Display for Undefined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Undefined::NoPredictedPositives => "no-predicted-positives",
            Undefined::NoActualPositives => "no-actual-positives",
            Undefined::PrecisionOrRecallUndefined => "precision-or-recall-undefined",
            Undefined::ZeroPrecisionAndRecall => "zero-precision-and-recall",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Score {
    Value(f64),
    Undefined(Undefined),
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Undefined(_) => None,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) => write!(f, "{v:.4}"),
            Score::Undefined(r) => write!(f, "n/a ({r})"),
        }
    }
}

fn ratio(num: u64, den: u64, why: Undefined) -> Score {
    if den == 0 {
        Score::Undefined(why)
    } else {
        Score::Value(num as f64 / den as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: Score,
    pub recall: Score,
    pub f1: Score,
}

impl ClassScores {
    pub fn from_counts(b: BinaryCounts) -> Self {
        let precision = ratio(b.tp, b.tp + b.fp, Undefined::NoPredictedPositives);
        let recall = ratio(b.tp, b.tp + b.fn_, Undefined::NoActualPositives);
        let f1 = match (precision.value(), recall.value()) {
            (Some(p), Some(r)) if p + r > 0.0 => Score::Value(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Score::Undefined(Undefined::ZeroPrecisionAndRecall),
            _ => Score::Undefined(Undefined::PrecisionOrRecallUndefined),
        };
        ClassScores { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Headline precision/recall/F1: the positive class for two classes,
    /// the unweighted macro average otherwise.
    pub precision: Score,
    pub recall: Score,
    pub f1: Score,
    /// One-vs-rest scores per class when there are more than two.
    pub per_class: Vec<ClassScores>,
}

fn macro_avg(scores: impl Iterator<Item = Score>, why: Undefined) -> Score {
    let v: Vec<f64> = scores.filter_map(Score::value).collect();
    if v.is_empty() {
        Score::Undefined(why)
    } else {
        Score::Value(v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn metrics(cm: &ConfusionMatrix, positive: usize) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    if positive >= cm.k() {
        return Err(EvalError::BadPositive(positive));
    }
    let accuracy = cm.trace() as f64 / total as f64;
    if cm.k() <= 2 {
        let s = ClassScores::from_counts(cm.one_vs_rest(positive));
        return Ok(MetricsReport {
            accuracy,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            per_class: Vec::new(),
        });
    }
    let per_class: Vec<ClassScores> = (0..cm.k()).map(|c| ClassScores::from_counts(cm.one_vs_rest(c))).collect();
    Ok(MetricsReport {
        accuracy,
        precision: macro_avg(per_class.iter().map(|s| s.precision), Undefined::NoPredictedPositives),
        recall: macro_avg(per_class.iter().map(|s| s.recall), Undefined::NoActualPositives),
        f1: macro_avg(per_class.iter().map(|s| s.f1), Undefined::PrecisionOrRecallUndefined),
        per_class,
    })
}

/// Mean and sample (n − 1) standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

pub fn summarize(values: &[Option<f64>]) -> Option<Summary> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary { mean, std, n })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub accuracy: Option<Summary>,
    pub precision: Option<Summary>,
    pub recall: Option<Summary>,
    pub f1: Option<Summary>,
}

pub fn aggregate(reports: &[MetricsReport]) -> Aggregate {
    let col = |f: fn(&MetricsReport) -> Option<f64>| summarize(&reports.iter().map(f).collect::<Vec<_>>());
    Aggregate {
        accuracy: col(|r| Some(r.accuracy)),
        precision: col(|r| r.precision.value()),
        recall: col(|r| r.recall.value()),
        f1: col(|r| r.f1.value()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    pub aggregate: Aggregate,
}

impl CrossValReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("fold\taccuracy\tprecision\trecall\tf1\n");
        for f in &self.folds {
            let m = &f.metrics;
            let _ = writeln!(s, "{}\t{:.4}\t{}\t{}\t{}", f.fold, m.accuracy, m.precision, m.recall, m.f1);
        }
        let show = |x: Option<Summary>| x.map_or_else(|| "n/a".to_string(), |v| v.to_string());
        let a = &self.aggregate;
        let _ = writeln!(
            s,
            "mean±std\t{}\t{}\t{}\t{}",
            show(a.accuracy),
            show(a.precision),
            show(a.recall),
            show(a.f1)
        );
        s
    }
}

/// Per fold: train a head on the train partition, select on val, score on
/// test. Folds run in parallel.
pub fn cross_validate(
    features: &[Vec<f32>],
    labels: &[usize],
    classes: &[String],
    plan: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<CrossValReport, EvalError> {
    let folds: Vec<FoldReport> = (0..plan.folds)
        .into_par_iter()
        .map(|fold| {
            let wrap = |source| EvalError::Fold { fold, source };
            let pick = |part| {
                let idx = plan.indices(fold, part);
                let x: Vec<Vec<f32>> = idx.iter().map(|&i| features[i].clone()).collect();
                let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                (x, y)
            };
            let (tx, ty) = pick(Partition::Train);
            let (vx, vy) = pick(Partition::Val);
            let (sx, sy) = pick(Partition::Test);
            let val = (!vx.is_empty()).then(|| Samples::new(&vx, &vy)).transpose().map_err(wrap)?;
            let (head, log) = train_head(Samples::new(&tx, &ty).map_err(wrap)?, val, classes.len(), cfg).map_err(wrap)?;
            let predicted: Vec<usize> = sx.iter().map(|r| head.predict(r)).collect();
            let cm = confusion(&sy, &predicted, classes.len())?.with_classes(classes);
            let metrics = metrics(&cm, head.positive_class)?;
            Ok(FoldReport {
                fold,
                best_epoch: log.best_epoch,
                confusion: cm,
                metrics,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let aggregate = aggregate(&folds.iter().map(|f| f.metrics.clone()).collect::<Vec<_>>());
    Ok(CrossValReport { folds, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix::from_binary(BinaryCounts { tp, fp, fn_, tn })
    }

    #[test]
    fn hand_counts() {
        let cm = confusion(&[1, 1, 0, 0], &[1, 0, 0, 0], 2).unwrap();
        let b = cm.one_vs_rest(1);
        assert_eq!((b.tp, b.fn_, b.tn, b.fp), (1, 1, 2, 0));
        let d = confusion(&[1, 0, 1], &[1, 0, 1], 2).unwrap();
        assert_eq!(d.counts, vec![vec![1, 0], vec![0, 2]]);
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
        assert!(confusion(&[0], &[], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn undefined_metrics_have_reasons() {
        let m = metrics(&binary(0, 0, 0, 5), 0).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, Score::Undefined(Undefined::NoPredictedPositives));
        assert_eq!(m.recall, Score::Undefined(Undefined::NoActualPositives));
        assert_eq!(m.f1, Score::Undefined(Undefined::PrecisionOrRecallUndefined));
        let z = metrics(&binary(0, 2, 3, 5), 0).unwrap();
        assert_eq!(z.f1, Score::Undefined(Undefined::ZeroPrecisionAndRecall));
        assert!(matches!(metrics(&binary(0, 0, 0, 0), 0), Err(EvalError::EmptyMatrix)));
    }

    #[test]
    fn fold_summary() {
        let s = summarize(&[Some(0.9), Some(0.9), Some(0.9), Some(0.9), Some(0.95)]).unwrap();
        assert!((s.mean - 0.91).abs() < 1e-12);
        assert!((s.std - 0.022_360_68).abs() < 1e-8);
        assert_eq!(summarize(&[Some(0.5); 4]).unwrap().std, 0.0);
    }

    #[test]
    fn grid_alignment() {
        let g = confusion(&[0, 1], &[0, 0], 2).unwrap().to_grid();
        let widths: Vec<usize> = g.lines().map(str::len).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{g}");
    }
}

//! Classification metrics, cross-validation summaries and their rendering.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::models::Pipeline;
use crate::trainer::EpochRecord;
use crate::{Error, Result};

mod plot;
mod render;

pub use render::{render, RenderedFiles};

pub type ConfusionMatrix = Vec<Vec<u64>>;

/// Entry `(i, j)` counts samples of true class `i` predicted as `j`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = vec![vec![0u64; classes]; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= classes || p >= classes {
            return Err(Error::Data(format!("label pair ({t}, {p}) outside {classes} classes")));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

pub fn trace(cm: &ConfusionMatrix) -> u64 {
    cm.iter().enumerate().map(|(i, row)| row[i]).sum()
}

pub fn total(cm: &ConfusionMatrix) -> u64 {
    cm.iter().flatten().sum()
}

/// `trace / total`, or 0 for an empty matrix.
pub fn cm_accuracy(cm: &ConfusionMatrix) -> f64 {
    let n = total(cm);
    if n == 0 {
        0.0
    } else {
        trace(cm) as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// One note per metric that hit a zero denominator and was set to 0.
    pub flags: Vec<String>,
}

fn ratio(num: f64, den: f64, flag: impl FnOnce() -> String, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        flags.push(flag());
        0.0
    } else {
        num / den
    }
}

/// Per-class precision, recall and F1 plus their unweighted means.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let c = cm.len();
    if cm.iter().any(|row| row.len() != c) {
        return Err(Error::Shape("confusion matrix is not square".into()));
    }
    let mut flags = Vec::new();
    let mut per_class = Vec::with_capacity(c);
    for j in 0..c {
        let tp = cm[j][j] as f64;
        let predicted: u64 = cm.iter().map(|row| row[j]).sum();
        let support: u64 = cm[j].iter().sum();
        let precision = ratio(tp, predicted as f64, || format!("class {j}: precision undefined (no predictions)"), &mut flags);
        let recall = ratio(tp, support as f64, || format!("class {j}: recall undefined (no true samples)"), &mut flags);
        let f1 = ratio(
            2.0 * precision * recall,
            precision + recall,
            || format!("class {j}: f1 undefined (precision + recall = 0)"),
            &mut flags,
        );
        per_class.push(ClassScores {
            precision,
            recall,
            f1,
            support,
        });
    }
    let mean = |f: fn(&ClassScores) -> f64| {
        if c == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / c as f64
        }
    };
    Ok(ClassificationReport {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Stat { mean, std }
}

/// Everything known about one fold after its best checkpoint was restored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// 1-based epoch of the best checkpoint.
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    /// Accuracy of the restored checkpoint on the fold's validation set.
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub confusion: ConfusionMatrix,
    pub scores: ClassificationReport,
    pub history: Vec<EpochRecord>,
    /// Validation sample indices in evaluation order.
    pub eval_ids: Vec<usize>,
    pub checkpoint: Option<String>,
}

/// The scalar columns of `folds.csv`, in order.
pub const FOLD_COLUMNS: [&str; 6] = ["train_accuracy", "train_loss", "val_accuracy", "val_loss", "test_accuracy", "epoch"];

impl FoldResult {
    pub fn scalars(&self) -> [f64; 6] {
        [
            self.train_accuracy,
            self.train_loss,
            self.val_accuracy,
            self.val_loss,
            self.test_accuracy,
            self.epoch as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub train_accuracy: Stat,
    pub train_loss: Stat,
    pub val_accuracy: Stat,
    pub val_loss: Stat,
    pub test_accuracy: Stat,
    pub epoch: Stat,
    pub macro_precision: Stat,
    pub macro_recall: Stat,
    pub macro_f1: Stat,
}

impl Aggregate {
    pub fn from_folds(folds: &[FoldResult]) -> Self {
        let col = |f: &dyn Fn(&FoldResult) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
        Aggregate {
            train_accuracy: col(&|r| r.train_accuracy),
            train_loss: col(&|r| r.train_loss),
            val_accuracy: col(&|r| r.val_accuracy),
            val_loss: col(&|r| r.val_loss),
            test_accuracy: col(&|r| r.test_accuracy),
            epoch: col(&|r| r.epoch as f64),
            macro_precision: col(&|r| r.scores.macro_precision),
            macro_recall: col(&|r| r.scores.macro_recall),
            macro_f1: col(&|r| r.scores.macro_f1),
        }
    }

    pub fn scalars(&self) -> [Stat; 6] {
        [
            self.train_accuracy,
            self.train_loss,
            self.val_accuracy,
            self.val_loss,
            self.test_accuracy,
            self.epoch,
        ]
    }
}

/// A row of the method comparison table. Numbers are kept as written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: String,
    pub train_accuracy: String,
    pub test_accuracy: String,
}

/// Read `method,train_accuracy,test_accuracy` rows (header required).
pub fn read_baselines(path: &Path) -> Result<Vec<BaselineRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        let row: BaselineRow = row?;
        for v in [&row.train_accuracy, &row.test_accuracy] {
            if v.parse::<f64>().is_err() {
                return Err(Error::Data(format!("baseline {:?}: {v:?} is not a number", row.method)));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub pipeline: Pipeline,
    pub backbone: String,
    pub classes: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub aggregate: Aggregate,
    #[serde(default)]
    pub comparison: Vec<BaselineRow>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(run_id: String, pipeline: Pipeline, backbone: String, classes: Vec<String>, folds: Vec<FoldResult>) -> Self {
        let aggregate = Aggregate::from_folds(&folds);
        RunReport {
            run_id,
            pipeline,
            backbone,
            classes,
            folds,
            aggregate,
            comparison: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Check the internal consistency of every fold.
    pub fn validate(&self) -> Result<()> {
        let c = self.classes.len();
        for f in &self.folds {
            if f.confusion.len() != c || f.confusion.iter().any(|row| row.len() != c) {
                return Err(Error::Data(format!("fold {}: confusion matrix is not {c}x{c}", f.fold)));
            }
            let acc = cm_accuracy(&f.confusion);
            if (acc - f.test_accuracy).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "fold {}: test accuracy {} differs from confusion-matrix accuracy {acc}",
                    f.fold, f.test_accuracy
                )));
            }
            if f.per_class_len() != c {
                return Err(Error::Data(format!("fold {}: scores cover {} classes, expected {c}", f.fold, f.per_class_len())));
            }
            let mean_f1 = f.scores.per_class.iter().map(|s| s.f1).sum::<f64>() / c.max(1) as f64;
            if (mean_f1 - f.scores.macro_f1).abs() > 1e-12 {
                return Err(Error::Data(format!("fold {}: macro F1 is not the mean of per-class F1", f.fold)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl FoldResult {
    fn per_class_len(&self) -> usize {
        self.scores.per_class.len()
    }
}

//! Classification metrics from a confusion matrix.

use std::fmt;

use crate::dataset::TimeSeriesDataset;
use crate::model::{Model, ModelError};

/// `counts[t][p]` is the number of samples with true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    /// Panics if a label or prediction is outside `0..classes`.
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Self {
        assert_eq!(
            labels.len(),
            predictions.len(),
            "labels and predictions differ in length"
        );
        let mut counts = vec![vec![0; classes]; classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            counts[t][p] += 1;
        }
        Self { counts }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// 0 when nothing was predicted as `class`.
    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.predicted(class))
    }

    /// 0 when `class` has no samples.
    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.support(class))
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn metrics(&self) -> MetricSet {
        let c = self.classes();
        let mean = |f: &dyn Fn(usize) -> f64| (0..c).map(f).sum::<f64>() / c as f64;
        let supported: Vec<usize> = (0..c).filter(|&k| self.support(k) > 0).collect();
        let balanced = if supported.is_empty() {
            0.0
        } else {
            supported.iter().map(|&k| self.recall(k)).sum::<f64>() / supported.len() as f64
        };
        MetricSet {
            accuracy: ratio(self.trace(), self.total()),
            balanced_accuracy: balanced,
            macro_f1: mean(&|k| self.f1(k)),
            macro_precision: mean(&|k| self.precision(k)),
            macro_recall: mean(&|k| self.recall(k)),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

impl MetricSet {
    pub fn as_pairs(&self) -> [(&'static str, f64); 5] {
        [
            ("accuracy", self.accuracy),
            ("balanced_accuracy", self.balanced_accuracy),
            ("macro_f1", self.macro_f1),
            ("macro_precision", self.macro_precision),
            ("macro_recall", self.macro_recall),
        ]
    }
}

impl fmt::Display for MetricSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.as_pairs().iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
        f.write_str(&parts.join(" "))
    }
}

pub fn predict_dataset(model: &Model, data: &TimeSeriesDataset) -> Result<Vec<usize>, ModelError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(256) {
        let x = data
            .batch_tensor(chunk)
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, data: &TimeSeriesDataset) -> Result<(MetricSet, ConfusionMatrix), ModelError> {
    let pred = predict_dataset(model, data)?;
    let cm = ConfusionMatrix::from_predictions(&data.labels, &pred, data.num_classes().max(model.config.classes));
    Ok((cm.metrics(), cm))
}

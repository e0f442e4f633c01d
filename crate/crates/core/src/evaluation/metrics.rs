use std::fmt::Write as _;

use crate::numeric::{mean, sample_sd};

/// Confusion counts, `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut c = Confusion::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            c.counts[t][p] += 1;
        }
        c
    }

    /// Two-class confusion from the usual cells; class 1 is positive.
    pub fn binary(tp: usize, fn_: usize, tn: usize, fp: usize) -> Self {
        Confusion {
            counts: vec![vec![tn, fp], vec![fn_, tp]],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hit: usize = (0..self.classes()).map(|k| self.counts[k][k]).sum();
        hit as f64 / self.total() as f64
    }

    /// One-vs-rest recall of class `k` (NaN if the class is absent).
    pub fn recall(&self, k: usize) -> f64 {
        let row: usize = self.counts[k].iter().sum();
        self.counts[k][k] as f64 / row as f64
    }

    /// Recall of the positive class (index 1) in a two-class problem.
    pub fn sensitivity(&self) -> f64 {
        self.recall(1)
    }

    /// Recall of the negative class (index 0) in a two-class problem.
    pub fn specificity(&self) -> f64 {
        self.recall(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub repeat: usize,
    pub fold: usize,
    pub confusion: Confusion,
}

/// Per-cell results of one cross-validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub class_names: Vec<String>,
    pub cells: Vec<CellMetrics>,
}

impl FoldMetrics {
    pub fn accuracies(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.confusion.accuracy()).collect()
    }

    pub fn recalls(&self, k: usize) -> Vec<f64> {
        self.cells.iter().map(|c| c.confusion.recall(k)).collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.accuracies())
    }

    pub fn sd_accuracy(&self) -> f64 {
        sample_sd(&self.accuracies())
    }

    /// Column headers for the per-class metrics: sensitivity/specificity for
    /// two classes, `recall_<class>` otherwise.
    pub fn metric_names(&self) -> Vec<String> {
        if self.class_names.len() == 2 {
            vec!["sensitivity".into(), "specificity".into()]
        } else {
            self.class_names.iter().map(|c| format!("recall_{c}")).collect()
        }
    }

    /// Per-class metric values of one cell in `metric_names` order.
    pub fn cell_metric_values(&self, cell: &CellMetrics) -> Vec<f64> {
        if self.class_names.len() == 2 {
            vec![cell.confusion.sensitivity(), cell.confusion.specificity()]
        } else {
            (0..self.class_names.len()).map(|k| cell.confusion.recall(k)).collect()
        }
    }

    /// Mean of each per-class metric over cells (NaN cells skipped).
    pub fn mean_metrics(&self) -> Vec<f64> {
        let names = self.metric_names();
        (0..names.len())
            .map(|m| {
                let v: Vec<f64> = self
                    .cells
                    .iter()
                    .map(|c| self.cell_metric_values(c)[m])
                    .filter(|v| v.is_finite())
                    .collect();
                mean(&v)
            })
            .collect()
    }

    /// `repeat,fold,accuracy,<metrics>` rows, prefixed by `prefix` fields.
    pub fn write_rows(&self, out: &mut String, prefix: &str) {
        for c in &self.cells {
            let _ = write!(out, "{prefix}{},{},{:.6}", c.repeat, c.fold, c.confusion.accuracy());
            for v in self.cell_metric_values(c) {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
    }
}

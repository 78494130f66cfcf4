//! Per-class precision / recall / F1, macro averages and accuracy.
//!
//! Any ratio whose denominator is zero is reported as 0, so a class that is
//! never predicted has precision 0 and macro averages are always defined.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Metrics over `num_classes` classes. Classes absent from both labels and
/// predictions still count towards the macro averages (with zeros).
pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::InvalidArgument(
            "num_classes must be positive".into(),
        ));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class index out of range for {num_classes} classes (label {t}, prediction {p})"
            )));
        }
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        class_names: (0..num_classes).map(|c| format!("class{c}")).collect(),
        macro_precision: mean(per_class.iter().map(|m| m.precision)),
        macro_recall: mean(per_class.iter().map(|m| m.recall)),
        macro_f1: mean(per_class.iter().map(|m| m.f1)),
        accuracy: ratio(correct, labels.len()),
        per_class,
        confusion,
    })
}

impl MetricsReport {
    pub fn with_class_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.per_class.len() {
            return Err(Error::Shape(format!(
                "{} names for {} classes",
                names.len(),
                self.per_class.len()
            )));
        }
        self.class_names = names.to_vec();
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn recalls(&self) -> Vec<f64> {
        self.per_class.iter().map(|m| m.recall).collect()
    }

    /// `class,precision,recall,f1,support`, one row per class then a `macro`
    /// row whose support is the total sample count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{name},{},{},{},{}",
                m.precision, m.recall, m.f1, m.support
            );
        }
        let total: usize = self.per_class.iter().map(|m| m.support).sum();
        let _ = writeln!(
            out,
            "macro,{},{},{},{total}",
            self.macro_precision, self.macro_recall, self.macro_f1
        );
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

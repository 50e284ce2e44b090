use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::normalize_minmax;
use crate::model::{forward, ModelParams};
use crate::synthdata::LabeledImage;

use super::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Confusion matrix as CSV with a header row of predicted classes.
    pub fn confusion_csv(&self) -> String {
        let c = self.confusion.len();
        let mut out = String::from("true\\pred");
        for k in 0..c {
            out.push_str(&format!(",{k}"));
        }
        out.push('\n');
        for (k, row) in self.confusion.iter().enumerate() {
            out.push_str(&k.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Classifies every test image by the argmax of its logits (ties to the lower
/// class). Images are min-max normalized first, as in training.
pub fn evaluate(params: &ModelParams, test: &[LabeledImage]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(invalid("test", "test set is empty"));
    }
    let c = params.shape.num_classes;
    let mut confusion = vec![vec![0u64; c]; c];
    for x in test {
        if x.label >= c {
            return Err(invalid("label", format!("label {} >= {c} classes", x.label)));
        }
        let bundle = forward(params, &normalize_minmax(&x.image))?;
        confusion[x.label][argmax(&bundle.logits)] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..c).map(|k| confusion[k][k]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: u64 = row.iter().sum();
            if n == 0 {
                0.0
            } else {
                row[k] as f64 / n as f64
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: trace as f64 / total as f64,
        per_class_accuracy,
        confusion,
    })
}

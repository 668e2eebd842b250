//! Pixel-level confusion matrices and the derived segmentation metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// C x C pixel counts; rows are ground truth, columns predictions.
/// Merging is elementwise addition, which is associative and exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix { counts: Array2::zeros((num_classes, num_classes)) }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.dim().0
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, prediction: usize) {
        self.counts[[truth, prediction]] += 1;
    }

    /// Accumulate a (ground truth, prediction) map pair.
    pub fn add_maps(&mut self, truth: &Array2<u8>, prediction: &Array2<u8>) -> Result<()> {
        if truth.dim() != prediction.dim() {
            return Err(Error::Validation(format!(
                "prediction {:?} does not match ground truth {:?}",
                prediction.dim(),
                truth.dim()
            )));
        }
        let c = self.num_classes();
        for (&t, &p) in truth.iter().zip(prediction.iter()) {
            if t as usize >= c || p as usize >= c {
                return Err(Error::Validation(format!(
                    "class id {} outside the {c}-class matrix",
                    t.max(p)
                )));
            }
            self.counts[[t as usize, p as usize]] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes(), other.num_classes());
        self.counts += &other.counts;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[[i, i]]).sum()
    }

    /// Per-class intersection over union: TP / (TP + FP + FN); `None` for
    /// classes absent from both ground truth and predictions.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let c = self.num_classes();
        (0..c)
            .map(|k| {
                let tp = self.counts[[k, k]];
                let fn_: u64 = (0..c).filter(|&j| j != k).map(|j| self.counts[[k, j]]).sum();
                let fp: u64 = (0..c).filter(|&i| i != k).map(|i| self.counts[[i, k]]).sum();
                let denom = tp + fp + fn_;
                if denom == 0 {
                    None
                } else {
                    Some(tp as f64 / denom as f64)
                }
            })
            .collect()
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.trace() as f64 / total as f64
    }

    /// Mean IoU over classes with a defined IoU.
    pub fn miou(&self) -> f64 {
        let ious = self.per_class_iou();
        let defined: Vec<f64> = ious.into_iter().flatten().collect();
        if defined.is_empty() {
            return 0.0;
        }
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Evaluation summary for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arm: String,
    /// Row-major confusion counts, rows = ground truth.
    pub confusion: Vec<Vec<u64>>,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub evaluated_pixels: u64,
}

impl MetricsReport {
    pub fn from_confusion(arm: impl Into<String>, confusion: &ConfusionMatrix) -> Self {
        MetricsReport {
            arm: arm.into(),
            confusion: confusion
                .counts()
                .outer_iter()
                .map(|row| row.to_vec())
                .collect(),
            per_class_iou: confusion.per_class_iou(),
            miou: confusion.miou(),
            pixel_accuracy: confusion.pixel_accuracy(),
            evaluated_pixels: confusion.total(),
        }
    }

    /// Per-class table plus aggregates, for humans.
    pub fn render(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        out.push_str(&format!("arm: {}\n", self.arm));
        out.push_str("class                iou\n");
        for (i, iou) in self.per_class_iou.iter().enumerate() {
            let name = class_names.get(i).cloned().unwrap_or_else(|| format!("class{i}"));
            match iou {
                Some(v) => out.push_str(&format!("{name:<20} {v:.4}\n")),
                None => out.push_str(&format!("{name:<20} (absent)\n")),
            }
        }
        out.push_str(&format!("mIoU: {:.4}\n", self.miou));
        out.push_str(&format!("pixel accuracy: {:.4}\n", self.pixel_accuracy));
        out
    }
}

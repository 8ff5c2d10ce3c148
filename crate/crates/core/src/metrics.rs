//! Evaluation metrics: overlap scores for masks, frame classification scores,
//! and absolute measurement differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::raster::Plane;

/// IoU and Dice of two binary masks (values > 0.5 are foreground). Two empty
/// masks score 1.
pub fn mask_overlap(pred: &[f64], gt: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::shape("mask overlap", gt.len(), pred.len()));
    }
    let (mut inter, mut a, mut b) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p > 0.5, g > 0.5);
        inter += (p && g) as u64;
        a += p as u64;
        b += g as u64;
    }
    if a + b == 0 {
        return Ok((1.0, 1.0));
    }
    let iou = inter as f64 / (a + b - inter) as f64;
    let dice = 2.0 * inter as f64 / (a + b) as f64;
    Ok((iou, dice))
}

/// Frame-averaged IoU and Dice. Callers pass foreground frames only; `None`
/// when there are no frames.
pub fn segmentation_metrics(pred: &[Plane], gt: &[Plane]) -> Result<Option<(f64, f64)>> {
    if pred.len() != gt.len() {
        return Err(Error::shape("segmentation metrics", gt.len(), pred.len()));
    }
    if pred.is_empty() {
        return Ok(None);
    }
    let mut iou = 0.0;
    let mut dice = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (i, d) = mask_overlap(p.data(), g.data())?;
        iou += i;
        dice += d;
    }
    let n = pred.len() as f64;
    Ok(Some((iou / n, dice / n)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy over all four classes; precision, recall and F1 macro-averaged
/// over the foreground classes that occur in either labelling.
pub fn classification_metrics(pred: &[ClassLabel], gt: &[ClassLabel]) -> Result<ClassScores> {
    if pred.len() != gt.len() {
        return Err(Error::shape("classification metrics", gt.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no frames to score".into()));
    }
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    let accuracy = correct as f64 / pred.len() as f64;

    let mut sums = (0.0, 0.0, 0.0);
    let mut classes = 0usize;
    for c in ClassLabel::FOREGROUND {
        let tp = pred.iter().zip(gt).filter(|&(&p, &g)| p == c && g == c).count();
        let fp = pred.iter().zip(gt).filter(|&(&p, &g)| p == c && g != c).count();
        let fn_ = pred.iter().zip(gt).filter(|&(&p, &g)| p != c && g == c).count();
        if tp + fp + fn_ == 0 {
            continue;
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        sums.0 += precision;
        sums.1 += recall;
        sums.2 += f1;
        classes += 1;
    }
    // Nothing but background in both labellings: no foreground mistakes exist.
    let (precision, recall, f1) = if classes == 0 {
        (1.0, 1.0, 1.0)
    } else {
        let k = classes as f64;
        (sums.0 / k, sums.1 / k, sums.2 / k)
    };
    Ok(ClassScores {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Absolute difference between a measurement and its reference, in mm.
pub fn adf(measured_mm: f64, reference_mm: f64) -> f64 {
    (measured_mm - reference_mm).abs()
}

/// Mean ± population standard deviation of a set of absolute differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdfStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl AdfStat {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(AdfStat {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

/// One evaluation row. Field names are the stable JSON keys and CSV columns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: Option<f64>,
    pub dice: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub adf_head_mean: Option<f64>,
    pub adf_head_std: Option<f64>,
    pub adf_head_count: usize,
    pub adf_abdomen_mean: Option<f64>,
    pub adf_abdomen_std: Option<f64>,
    pub adf_abdomen_count: usize,
    pub adf_femur_mean: Option<f64>,
    pub adf_femur_std: Option<f64>,
    pub adf_femur_count: usize,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 15] = [
        "iou",
        "dice",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "adf_head_mean",
        "adf_head_std",
        "adf_head_count",
        "adf_abdomen_mean",
        "adf_abdomen_std",
        "adf_abdomen_count",
        "adf_femur_mean",
        "adf_femur_std",
        "adf_femur_count",
    ];

    pub fn set_adf(&mut self, class: ClassLabel, stat: Option<AdfStat>) {
        let (mean, std, count) = match class {
            ClassLabel::Head => (
                &mut self.adf_head_mean,
                &mut self.adf_head_std,
                &mut self.adf_head_count,
            ),
            ClassLabel::Abdomen => (
                &mut self.adf_abdomen_mean,
                &mut self.adf_abdomen_std,
                &mut self.adf_abdomen_count,
            ),
            ClassLabel::Femur => (
                &mut self.adf_femur_mean,
                &mut self.adf_femur_std,
                &mut self.adf_femur_count,
            ),
            ClassLabel::Background => return,
        };
        *mean = stat.map(|s| s.mean);
        *std = stat.map(|s| s.std);
        *count = stat.map_or(0, |s| s.count);
    }

    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        vec![
            f(self.iou),
            f(self.dice),
            f(self.accuracy),
            f(self.precision),
            f(self.recall),
            f(self.f1),
            f(self.adf_head_mean),
            f(self.adf_head_std),
            self.adf_head_count.to_string(),
            f(self.adf_abdomen_mean),
            f(self.adf_abdomen_std),
            self.adf_abdomen_count.to_string(),
            f(self.adf_femur_mean),
            f(self.adf_femur_std),
            self.adf_femur_count.to_string(),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

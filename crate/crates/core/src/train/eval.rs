use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::Result;
use crate::geometry::{measure, postprocess, BinaryMask, BiometryResult, DEFAULT_THRESHOLD};
use crate::label::ClassLabel;
use crate::metrics::{adf, classification_metrics, mask_overlap, AdfStat, MetricReport};
use crate::model::{FetalNet, FramePrediction, ModelParams, Pass};

/// Probability cut-off for the overlap metrics.
pub const METRIC_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub frame_id: String,
    pub true_label: ClassLabel,
    pub predicted_label: Option<ClassLabel>,
    /// Set on frames whose true label is foreground.
    pub iou: Option<f64>,
    pub dice: Option<f64>,
    pub measured: Option<BiometryResult>,
    pub reference: Option<BiometryResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub report: MetricReport,
    pub frames: Vec<FrameEval>,
}

/// Post-process a predicted map at its own resolution and measure it as `label`.
pub fn measure_prediction(pred: &FramePrediction, label: ClassLabel, spacing_mm: f64) -> Result<BiometryResult> {
    let p = &pred.seg_prob;
    let mask = postprocess(p, (p.width(), p.height()), DEFAULT_THRESHOLD, spacing_mm)?;
    Ok(measure(label, &mask))
}

/// Evaluation-mode metrics over `clips`.
///
/// Overlap scores use foreground ground-truth frames. Measurements use the
/// predicted class (the true class for variants without a classifier) and are
/// compared with `reference` when a frame id is found there, otherwise with a
/// measurement of the ground-truth mask.
pub fn evaluate(
    net: &FetalNet,
    params: &ModelParams,
    clips: &[Sample],
    reference: Option<&HashMap<String, BiometryResult>>,
    with_measurements: bool,
) -> Result<EvalResult> {
    let mut frames = Vec::new();
    for clip in clips {
        let preds = net.forward_clip(params, &clip.frames, &mut Pass::eval())?;
        for (t, pred) in preds.iter().enumerate() {
            let truth = clip.labels[t];
            let predicted = pred
                .predicted_class()
                .map(ClassLabel::from_index)
                .transpose()?;
            let (iou, dice) = if truth.is_foreground() {
                let bin: Vec<f64> = pred
                    .seg_prob
                    .data()
                    .iter()
                    .map(|&v| (v > METRIC_THRESHOLD) as u8 as f64)
                    .collect();
                let (i, d) = mask_overlap(&bin, clip.masks[t].data())?;
                (Some(i), Some(d))
            } else {
                (None, None)
            };
            let (measured, reference) = if with_measurements && truth.is_foreground() {
                let label = predicted.unwrap_or(truth);
                let spacing = clip.spacing_mm[t];
                let measured = measure_prediction(pred, label, spacing)?;
                let reference = match reference.and_then(|r| r.get(&clip.frame_ids[t])) {
                    Some(r) => r.clone(),
                    None => {
                        let m = BinaryMask::from_plane(&clip.masks[t], 0.5, spacing)?;
                        measure(truth, &m)
                    }
                };
                (Some(measured), Some(reference))
            } else {
                (None, None)
            };
            frames.push(FrameEval {
                frame_id: clip.frame_ids[t].clone(),
                true_label: truth,
                predicted_label: predicted,
                iou,
                dice,
                measured: measured.map(|m| m.with_frame_id(clip.frame_ids[t].clone())),
                reference,
            });
        }
    }
    Ok(EvalResult {
        report: summarize(&frames)?,
        frames,
    })
}

fn summarize(frames: &[FrameEval]) -> Result<MetricReport> {
    let mut r = MetricReport::default();
    let overlaps: Vec<(f64, f64)> = frames
        .iter()
        .filter_map(|f| Some((f.iou?, f.dice?)))
        .collect();
    if !overlaps.is_empty() {
        let n = overlaps.len() as f64;
        r.iou = Some(overlaps.iter().map(|o| o.0).sum::<f64>() / n);
        r.dice = Some(overlaps.iter().map(|o| o.1).sum::<f64>() / n);
    }
    if !frames.is_empty() && frames.iter().all(|f| f.predicted_label.is_some()) {
        let pred: Vec<ClassLabel> = frames.iter().filter_map(|f| f.predicted_label).collect();
        let truth: Vec<ClassLabel> = frames.iter().map(|f| f.true_label).collect();
        let c = classification_metrics(&pred, &truth)?;
        r.accuracy = Some(c.accuracy);
        r.precision = Some(c.precision);
        r.recall = Some(c.recall);
        r.f1 = Some(c.f1);
    }
    for class in ClassLabel::FOREGROUND {
        let diffs: Vec<f64> = frames
            .iter()
            .filter(|f| f.true_label == class)
            .filter_map(|f| {
                let m = f.measured.as_ref()?;
                let g = f.reference.as_ref()?;
                (m.label == class).then_some(())?;
                Some(adf(m.primary_mm()?, g.primary_mm()?))
            })
            .collect();
        r.set_adf(class, AdfStat::from_values(&diffs));
    }
    Ok(r)
}

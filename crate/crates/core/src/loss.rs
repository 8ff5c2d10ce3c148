//! Training objective: per-frame Dice loss on the aggregated probability map
//! plus class-weighted cross-entropy on the frame logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::model::{FramePrediction, NetOutput, OutputGrads};
use crate::raster::Plane;
use crate::tensor::{sigmoid, Tensor};

pub const DEFAULT_SMOOTH: f64 = 1.0;

/// Per-class cross-entropy weights in class-index order
/// (head, abdomen, femur, background).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossWeights(pub [f64; 4]);

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights([0.25, 0.25, 0.4, 0.1])
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative: {:?}",
                self.0
            )));
        }
        if self.0.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, label: ClassLabel) -> f64 {
        self.0[label.index()]
    }
}

fn check_same_len(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape("dice operands", pred.len(), target.len()));
    }
    Ok(())
}

/// `1 − (2Σpt + s) / (Σp + Σt + s)`.
pub fn dice_loss(pred: &[f64], target: &[f64], smooth: f64) -> Result<f64> {
    check_same_len(pred, target)?;
    let (inter, sp, st) = dice_sums(pred, target);
    Ok(1.0 - (2.0 * inter + smooth) / (sp + st + smooth))
}

fn dice_sums(pred: &[f64], target: &[f64]) -> (f64, f64, f64) {
    pred.iter()
        .zip(target)
        .fold((0.0, 0.0, 0.0), |(i, p, t), (&a, &b)| (i + a * b, p + a, t + b))
}

/// Gradient of [`dice_loss`] with respect to `pred`.
pub fn dice_loss_grad(pred: &[f64], target: &[f64], smooth: f64) -> Result<Vec<f64>> {
    check_same_len(pred, target)?;
    let (inter, sp, st) = dice_sums(pred, target);
    let num = 2.0 * inter + smooth;
    let den = sp + st + smooth;
    Ok(target
        .iter()
        .map(|&t| -(2.0 * t * den - num) / (den * den))
        .collect())
}

/// `log softmax(logits)[label]`, computed without overflow.
fn log_softmax_at(logits: &[f64; 4], label: usize) -> f64 {
    let (arg, m) = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    logits[label] - m - rest.ln_1p()
}

fn softmax(logits: &[f64; 4]) -> [f64; 4] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// `−w[label] · log softmax(logits)[label]`.
pub fn weighted_ce(logits: &[f64; 4], label: ClassLabel, w: &LossWeights) -> Result<f64> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite logits {logits:?}")));
    }
    Ok(-w.get(label) * log_softmax_at(logits, label.index()))
}

/// Gradient of [`weighted_ce`] with respect to the logits.
pub fn weighted_ce_grad(logits: &[f64; 4], label: ClassLabel, w: &LossWeights) -> [f64; 4] {
    let mut g = softmax(logits);
    g[label.index()] -= 1.0;
    g.map(|v| v * w.get(label))
}

/// Supervision for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTarget {
    /// Binary mask at network resolution.
    pub mask: Plane,
    pub label: ClassLabel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean Dice loss over foreground frames (0 when there are none).
    pub dice: f64,
    /// Mean weighted cross-entropy over all frames (0 without a classifier).
    pub ce: f64,
}

/// Objective over already-activated predictions.
pub fn total_loss(
    preds: &[FramePrediction],
    targets: &[FrameTarget],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("loss over zero frames".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::shape("loss targets", preds.len(), targets.len()));
    }
    let mut dice = 0.0;
    let mut fg = 0usize;
    let mut ce = 0.0;
    let mut has_logits = false;
    for (p, t) in preds.iter().zip(targets) {
        if t.label.is_foreground() {
            dice += dice_loss(p.seg_prob.data(), t.mask.data(), DEFAULT_SMOOTH)?;
            fg += 1;
        }
        if let Some(l) = &p.class_logits {
            ce += weighted_ce(l, t.label, w)?;
            has_logits = true;
        }
    }
    let dice = if fg > 0 { dice / fg as f64 } else { 0.0 };
    let ce = if has_logits { ce / preds.len() as f64 } else { 0.0 };
    Ok(LossBreakdown {
        total: dice + ce,
        dice,
        ce,
    })
}

/// Objective and its gradient with respect to the raw network logits.
pub fn loss_with_grads(
    out: &NetOutput,
    targets: &[FrameTarget],
    w: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads)> {
    let n = out.frames();
    if n == 0 {
        return Err(Error::InvalidInput("loss over zero frames".into()));
    }
    if targets.len() != n {
        return Err(Error::shape("loss targets", n, targets.len()));
    }
    let fg = targets.iter().filter(|t| t.label.is_foreground()).count();
    let mut d_seg = Tensor::zeros(out.seg_logits.shape());
    let mut dice = 0.0;
    for (i, t) in targets.iter().enumerate() {
        if !t.label.is_foreground() {
            continue;
        }
        let prob: Vec<f64> = out.seg_logits.sample(i).iter().map(|&z| sigmoid(z)).collect();
        dice += dice_loss(&prob, t.mask.data(), DEFAULT_SMOOTH)?;
        let g = dice_loss_grad(&prob, t.mask.data(), DEFAULT_SMOOTH)?;
        for ((d, g), p) in d_seg.sample_mut(i).iter_mut().zip(g).zip(&prob) {
            *d = g * p * (1.0 - p) / fg as f64;
        }
    }
    let dice = if fg > 0 { dice / fg as f64 } else { 0.0 };

    let mut ce = 0.0;
    let d_cls = match &out.class_logits {
        Some(logits) => {
            let mut d = Tensor::zeros(logits.shape());
            for (i, t) in targets.iter().enumerate() {
                let s = logits.sample(i);
                let l = [s[0], s[1], s[2], s[3]];
                ce += weighted_ce(&l, t.label, w)?;
                let g = weighted_ce_grad(&l, t.label, w);
                for (dst, g) in d.sample_mut(i).iter_mut().zip(g) {
                    *dst = g / n as f64;
                }
            }
            ce /= n as f64;
            Some(d)
        }
        None => None,
    };
    Ok((
        LossBreakdown {
            total: dice + ce,
            dice,
            ce,
        },
        OutputGrads {
            seg_logits: d_seg,
            class_logits: d_cls,
        },
    ))
}

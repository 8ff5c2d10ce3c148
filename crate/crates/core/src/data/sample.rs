use super::io::{read_frame, read_mask};
use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::loss::FrameTarget;
use crate::raster::Plane;

/// One clip: aligned frames, binary masks, labels, and per-frame spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub patient_id: String,
    pub clip_id: String,
    /// `"{clip_id}/{frame index}"` for each frame.
    pub frame_ids: Vec<String>,
    pub frames: Vec<Plane>,
    pub masks: Vec<Plane>,
    pub labels: Vec<ClassLabel>,
    pub spacing_mm: Vec<f64>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn targets(&self) -> Vec<FrameTarget> {
        self.masks
            .iter()
            .zip(&self.labels)
            .map(|(m, &label)| FrameTarget {
                mask: m.clone(),
                label,
            })
            .collect()
    }

    /// Consecutive non-overlapping windows of `t` frames; a short tail is dropped.
    pub fn windows(&self, t: usize) -> Vec<Sample> {
        if t == 0 {
            return Vec::new();
        }
        (0..self.len() / t)
            .map(|k| {
                let r = k * t..(k + 1) * t;
                Sample {
                    patient_id: self.patient_id.clone(),
                    clip_id: self.clip_id.clone(),
                    frame_ids: self.frame_ids[r.clone()].to_vec(),
                    frames: self.frames[r.clone()].to_vec(),
                    masks: self.masks[r.clone()].to_vec(),
                    labels: self.labels[r.clone()].to_vec(),
                    spacing_mm: self.spacing_mm[r].to_vec(),
                }
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let n = self.frames.len();
        for (what, len) in [
            ("masks", self.masks.len()),
            ("labels", self.labels.len()),
            ("spacing", self.spacing_mm.len()),
            ("frame ids", self.frame_ids.len()),
        ] {
            if len != n {
                return Err(Error::InvalidInput(format!(
                    "clip {}: {n} frames but {len} {what}",
                    self.clip_id
                )));
            }
        }
        for (f, m) in self.frames.iter().zip(&self.masks) {
            if (f.width(), f.height()) != (m.width(), m.height())
                || (f.width(), f.height()) != (self.frames[0].width(), self.frames[0].height())
            {
                return Err(Error::InvalidInput(format!(
                    "clip {}: frames and masks must share one size",
                    self.clip_id
                )));
            }
        }
        Ok(())
    }
}

/// Read one manifest entry at native resolution. Frames without a mask get
/// an empty one.
pub fn load_clip(manifest: &DatasetManifest, entry: usize) -> Result<Sample> {
    let e = manifest.entries.get(entry).ok_or_else(|| {
        Error::InvalidInput(format!("manifest has no entry {entry}"))
    })?;
    let spacing = e.spacing_mm();
    let mut s = Sample {
        patient_id: e.patient_id.clone(),
        clip_id: e.clip_id.clone(),
        frame_ids: Vec::new(),
        frames: Vec::new(),
        masks: Vec::new(),
        labels: Vec::new(),
        spacing_mm: Vec::new(),
    };
    for (j, f) in e.frames.iter().enumerate() {
        let frame = read_frame(&manifest.resolve(&f.path))?;
        let mask = match &f.mask {
            Some(p) => read_mask(&manifest.resolve(p))?,
            None => Plane::new(frame.width(), frame.height(), 0.0),
        };
        if (mask.width(), mask.height()) != (frame.width(), frame.height()) {
            return Err(Error::Manifest {
                entry,
                field: format!("frames[{j}].mask"),
                message: format!(
                    "mask is {}×{} but frame is {}×{}",
                    mask.width(),
                    mask.height(),
                    frame.width(),
                    frame.height()
                ),
            });
        }
        s.frame_ids.push(format!("{}/{}", e.clip_id, f.index));
        s.frames.push(frame);
        s.masks.push(mask);
        s.labels.push(f.label);
        s.spacing_mm.push(spacing);
    }
    s.check()?;
    Ok(s)
}

/// Load every clip and resize it to `target × target`.
pub fn load_samples(manifest: &DatasetManifest, target: usize, letterbox: bool) -> Result<Vec<Sample>> {
    (0..manifest.entries.len())
        .map(|i| resize_sample(&load_clip(manifest, i)?, target, letterbox))
        .collect()
}

/// Resize to `target × target`: bilinear frames, nearest-neighbour masks,
/// spacing scaled by the same factor. Non-square inputs need `letterbox`,
/// which zero-pads them to a square first.
pub fn resize_sample(sample: &Sample, target: usize, letterbox: bool) -> Result<Sample> {
    sample.check()?;
    if target == 0 {
        return Err(Error::InvalidInput("resize target must be positive".into()));
    }
    let mut out = sample.clone();
    for i in 0..sample.len() {
        let (mut f, mut m) = (sample.frames[i].clone(), sample.masks[i].clone());
        if f.width() != f.height() {
            if !letterbox {
                return Err(Error::InvalidInput(format!(
                    "frame {} is {}×{}; non-square input needs letterboxing",
                    sample.frame_ids[i],
                    f.width(),
                    f.height()
                )));
            }
            f = f.letterbox().0;
            m = m.letterbox().0;
        }
        let side = f.width();
        out.frames[i] = f.resize_bilinear(target, target);
        out.masks[i] = m.resize_nearest(target, target);
        out.spacing_mm[i] = sample.spacing_mm[i] * side as f64 / target as f64;
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample(w: usize, h: usize, t: usize) -> Sample {
        let frame = Plane::from_fn(w, h, |x, y| ((x + 2 * y) % 7) as f64 / 7.0);
        let mask = Plane::from_fn(w, h, |x, y| ((x as f64 - w as f64 / 2.0).hypot(y as f64 - h as f64 / 2.0) < 5.0) as u8 as f64);
        Sample {
            patient_id: "p".into(),
            clip_id: "c".into(),
            frame_ids: (0..t).map(|i| format!("c/{i}")).collect(),
            frames: vec![frame; t],
            masks: vec![mask; t],
            labels: vec![ClassLabel::Head; t],
            spacing_mm: vec![0.1; t],
        }
    }

    #[test]
    fn halving_doubles_spacing() {
        let s = resize_sample(&sample(448, 448, 2), 224, false).unwrap();
        assert_eq!((s.frames[0].width(), s.frames[0].height()), (224, 224));
        assert!((s.spacing_mm[0] - 0.2).abs() < 1e-15);
        assert!(s.masks[0].data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn non_square_needs_letterbox() {
        let s = sample(40, 30, 1);
        assert!(resize_sample(&s, 20, false).is_err());
        let r = resize_sample(&s, 20, true).unwrap();
        assert!((r.spacing_mm[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn windows_drop_tail() {
        let w = sample(8, 8, 7).windows(3);
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].frame_ids, vec!["c/3", "c/4", "c/5"]);
    }
}

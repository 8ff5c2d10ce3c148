use serde::{Deserialize, Serialize};

use super::contour::{find_contours, simplify_closed};
use super::ellipse::{fit_ellipse, EllipseFit};
use super::mask::BinaryMask;
use super::rect::{min_area_rect, RotatedRect};
use super::Point;
use crate::label::ClassLabel;

/// RDP tolerance as a fraction of the contour's arc length.
pub const RDP_EPSILON_FRACTION: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureFailure {
    EmptyMask,
    FitFailed,
    DegenerateContour,
}

/// Measurements in millimetres. Which fields are set depends on `label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiometryResult {
    pub frame_id: Option<String>,
    pub label: ClassLabel,
    pub hc_mm: Option<f64>,
    pub bpd_mm: Option<f64>,
    pub ac_mm: Option<f64>,
    pub fl_mm: Option<f64>,
    pub reason: Option<MeasureFailure>,
}

impl BiometryResult {
    pub fn empty(label: ClassLabel) -> Self {
        BiometryResult {
            frame_id: None,
            label,
            hc_mm: None,
            bpd_mm: None,
            ac_mm: None,
            fl_mm: None,
            reason: None,
        }
    }

    fn failed(label: ClassLabel, reason: MeasureFailure) -> Self {
        BiometryResult {
            reason: Some(reason),
            ..Self::empty(label)
        }
    }

    pub fn with_frame_id(mut self, id: impl Into<String>) -> Self {
        self.frame_id = Some(id.into());
        self
    }

    /// The single circumference or length reported for the label (HC, AC or FL).
    pub fn primary_mm(&self) -> Option<f64> {
        match self.label {
            ClassLabel::Head => self.hc_mm,
            ClassLabel::Abdomen => self.ac_mm,
            ClassLabel::Femur => self.fl_mm,
            ClassLabel::Background => None,
        }
    }
}

/// A measurement together with the fitted shapes, for drawing overlays.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub result: BiometryResult,
    pub contour: Option<Vec<Point>>,
    pub ellipse: Option<EllipseFit>,
    pub rect: Option<RotatedRect>,
}

/// Class-dependent measurement of the largest component in `mask`.
pub fn measure(label: ClassLabel, mask: &BinaryMask) -> BiometryResult {
    measure_detailed(label, mask).result
}

pub fn measure_detailed(label: ClassLabel, mask: &BinaryMask) -> Measurement {
    let none = |result| Measurement {
        result,
        contour: None,
        ellipse: None,
        rect: None,
    };
    if label == ClassLabel::Background {
        return none(BiometryResult::empty(label));
    }
    let Some(contour) = find_contours(mask).into_iter().next() else {
        return none(BiometryResult::failed(label, MeasureFailure::EmptyMask));
    };
    let mm = mask.pixel_spacing();
    let mut out = none(BiometryResult::empty(label));
    match label {
        ClassLabel::Head | ClassLabel::Abdomen => {
            let eps = RDP_EPSILON_FRACTION * contour.arc_length();
            let simplified = simplify_closed(&contour.points, eps);
            match fit_ellipse(&simplified) {
                Ok(e) => {
                    let perimeter = e.perimeter() * mm;
                    if label == ClassLabel::Head {
                        out.result.hc_mm = Some(perimeter);
                        out.result.bpd_mm = Some(2.0 * e.b * mm);
                    } else {
                        out.result.ac_mm = Some(perimeter);
                    }
                    out.ellipse = Some(e);
                }
                Err(_) => out.result.reason = Some(MeasureFailure::FitFailed),
            }
            out.contour = Some(simplified);
        }
        ClassLabel::Femur => {
            let r = min_area_rect(&contour.points);
            if r.long > 0.0 {
                out.result.fl_mm = Some(r.long * mm);
                out.rect = Some(r);
            } else {
                out.result.reason = Some(MeasureFailure::DegenerateContour);
            }
            out.contour = Some(contour.points);
        }
        ClassLabel::Background => unreachable!(),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{postprocess, DEFAULT_THRESHOLD};
    use std::f64::consts::PI;

    fn disk(w: usize, r: f64, spacing: f64) -> BinaryMask {
        let c = w as f64 / 2.0 + 0.3;
        BinaryMask::from_fn(w, w, spacing, |x, y| {
            (x as f64 - c).hypot(y as f64 - c) <= r
        })
        .unwrap()
    }

    #[test]
    fn head_circle() {
        let m = disk(128, 50.0, 0.2);
        let r = measure(ClassLabel::Head, &m);
        let hc = r.hc_mm.unwrap();
        assert!((hc / (2.0 * PI * 50.0 * 0.2) - 1.0).abs() < 0.01, "{hc}");
        assert!((r.bpd_mm.unwrap() / 20.0 - 1.0).abs() < 0.02);
        assert!(r.ac_mm.is_none() && r.fl_mm.is_none() && r.reason.is_none());
    }

    #[test]
    fn abdomen_fills_ac_only() {
        let r = measure(ClassLabel::Abdomen, &disk(100, 40.0, 0.3));
        assert!(r.ac_mm.is_some());
        assert!(r.hc_mm.is_none() && r.bpd_mm.is_none() && r.fl_mm.is_none());
    }

    #[test]
    fn femur_capsule() {
        // 80 px tip to tip, 10 px wide, axis-aligned.
        let (cx, cy) = (60.0, 30.0);
        let m = BinaryMask::from_fn(120, 60, 0.25, |x, y| {
            let dx = ((x as f64 - cx).abs() - 35.0).max(0.0);
            dx.hypot(y as f64 - cy) <= 5.0
        })
        .unwrap();
        let m = postprocess(&m.to_plane(), (120, 60), DEFAULT_THRESHOLD, 0.25).unwrap();
        let fl = measure(ClassLabel::Femur, &m).fl_mm.unwrap();
        assert!((fl - 20.0).abs() <= 0.25, "{fl}");
    }

    #[test]
    fn background_and_empty() {
        let r = measure(ClassLabel::Background, &disk(64, 20.0, 0.1));
        assert_eq!(r, BiometryResult::empty(ClassLabel::Background));
        let e = BinaryMask::empty(10, 10, 0.1).unwrap();
        let r = measure(ClassLabel::Head, &e);
        assert_eq!(r.reason, Some(MeasureFailure::EmptyMask));
        assert!(r.hc_mm.is_none());
    }

    #[test]
    fn json_has_explicit_nulls() {
        let r = measure(ClassLabel::Head, &disk(64, 20.0, 0.1)).with_frame_id("clip0/3");
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let obj = v.as_object().unwrap();
        for k in ["frame_id", "label", "hc_mm", "bpd_mm", "ac_mm", "fl_mm", "reason"] {
            assert!(obj.contains_key(k), "{k}");
        }
        assert_eq!(obj["label"], "head");
        assert!(obj["ac_mm"].is_null() && obj["reason"].is_null());
    }
}

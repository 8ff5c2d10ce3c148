//! Speckled ultrasound-like clips with analytically known labels, masks, and
//! measurements.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    save_manifest, write_frame_u16, write_mask, DatasetManifest, FrameRecord, ManifestEntry,
    PixelSpacing, Sample,
};
use crate::error::{Error, Result};
use crate::geometry::{ellipse_perimeter, BiometryResult, Point};
use crate::label::ClassLabel;
use crate::raster::Plane;

const BACKGROUND_LEVEL: f64 = 0.1;
const HEAD_RIM_LEVEL: f64 = 0.8;
const HEAD_INNER_LEVEL: f64 = 0.45;
/// Normalized radius beyond which the head renders as skull rim.
const HEAD_RIM_START: f64 = 0.75;
const ABDOMEN_LEVEL: f64 = 0.6;
const FEMUR_LEVEL: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Semi-axes `a`, `b` in pixels; `angle` of the `a` axis in radians.
    Ellipse { a: f64, b: f64, center: Point, angle: f64 },
    /// A rectangle with semicircular caps; `length` is tip to tip.
    Capsule { length: f64, width: f64, center: Point, angle: f64 },
}

impl Shape {
    pub fn center(&self) -> Point {
        match *self {
            Shape::Ellipse { center, .. } | Shape::Capsule { center, .. } => center,
        }
    }

    fn angle(&self) -> f64 {
        match *self {
            Shape::Ellipse { angle, .. } | Shape::Capsule { angle, .. } => angle,
        }
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extent(&self) -> (f64, f64) {
        let (s, c) = self.angle().sin_cos();
        match *self {
            Shape::Ellipse { a, b, .. } => (
                (a * a * c * c + b * b * s * s).sqrt(),
                (a * a * s * s + b * b * c * c).sqrt(),
            ),
            Shape::Capsule { length, width, .. } => {
                let core = (length - width) / 2.0;
                (core * c.abs() + width / 2.0, core * s.abs() + width / 2.0)
            }
        }
    }

    /// Normalized distance from the centre: `≤ 1` inside.
    fn level(&self, offset: Point, p: Point) -> f64 {
        let (s, c) = self.angle().sin_cos();
        let ctr = self.center();
        let (dx, dy) = (p.x - ctr.x - offset.x, p.y - ctr.y - offset.y);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        match *self {
            Shape::Ellipse { a, b, .. } => ((u / a).powi(2) + (v / b).powi(2)).sqrt(),
            Shape::Capsule { length, width, .. } => {
                let du = (u.abs() - (length - width) / 2.0).max(0.0);
                du.hypot(v) / (width / 2.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Ellipse { a, b, .. } => a > 0.0 && b > 0.0,
            Shape::Capsule { length, width, .. } => width > 0.0 && length >= width,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Phantom(format!("degenerate shape {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub label: ClassLabel,
    /// Required for foreground labels, ignored for background.
    pub shape: Option<Shape>,
    /// Square frame side in pixels.
    pub size: usize,
    pub spacing_mm: f64,
    pub clip_len: usize,
    /// Per-frame translation of the shape, in pixels.
    pub drift: (f64, f64),
    /// Speckle strength: `pixel · (1 + σ·n)` with unit-variance `n`.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.clip_len == 0 {
            return Err(Error::Phantom("size and clip length must be positive".into()));
        }
        if !(self.spacing_mm > 0.0) {
            return Err(Error::Phantom(format!("spacing {} must be positive", self.spacing_mm)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Phantom(format!("noise σ {} must be nonnegative", self.noise_sigma)));
        }
        if self.label == ClassLabel::Background {
            return Ok(());
        }
        let shape = self
            .shape
            .ok_or_else(|| Error::Phantom(format!("{} phantom needs a shape", self.label)))?;
        shape.validate()?;
        match (self.label, shape) {
            (ClassLabel::Femur, Shape::Capsule { .. }) => {}
            (ClassLabel::Head | ClassLabel::Abdomen, Shape::Ellipse { .. }) => {}
            (l, s) => return Err(Error::Phantom(format!("{l} phantom cannot use {s:?}"))),
        }
        let (ex, ey) = shape.half_extent();
        let hi = (self.size - 1) as f64;
        for t in [0, self.clip_len - 1] {
            let c = shape.center();
            let (x, y) = (c.x + t as f64 * self.drift.0, c.y + t as f64 * self.drift.1);
            if x - ex < 0.0 || y - ey < 0.0 || x + ex > hi || y + ey > hi {
                return Err(Error::Phantom(format!(
                    "shape leaves the {0}×{0} frame at frame {t}",
                    self.size
                )));
            }
        }
        Ok(())
    }

    /// Analytic measurements from the shape and spacing.
    pub fn ground_truth(&self) -> BiometryResult {
        let mut r = BiometryResult::empty(self.label);
        let s = self.spacing_mm;
        match (self.label, self.shape) {
            (ClassLabel::Head, Some(Shape::Ellipse { a, b, .. })) => {
                r.hc_mm = Some(ellipse_perimeter(a, b) * s);
                r.bpd_mm = Some(2.0 * a.min(b) * s);
            }
            (ClassLabel::Abdomen, Some(Shape::Ellipse { a, b, .. })) => {
                r.ac_mm = Some(ellipse_perimeter(a, b) * s);
            }
            (ClassLabel::Femur, Some(Shape::Capsule { length, .. })) => {
                r.fl_mm = Some(length * s);
            }
            _ => {}
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomClip {
    pub sample: Sample,
    pub ground_truth: Vec<BiometryResult>,
}

/// Clean mask of `shape` shifted by `offset`, sampled at pixel centres.
pub fn rasterize(shape: &Shape, size: usize, offset: Point) -> Plane {
    Plane::from_fn(size, size, |x, y| {
        (shape.level(offset, Point::new(x as f64, y as f64)) <= 1.0) as u8 as f64
    })
}

pub fn generate(spec: &PhantomSpec, clip_id: &str, patient_id: &str) -> Result<PhantomClip> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size;
    let mut sample = Sample {
        patient_id: patient_id.into(),
        clip_id: clip_id.into(),
        frame_ids: Vec::new(),
        frames: Vec::new(),
        masks: Vec::new(),
        labels: Vec::new(),
        spacing_mm: Vec::new(),
    };
    let mut truth = Vec::new();
    for t in 0..spec.clip_len {
        let offset = Point::new(t as f64 * spec.drift.0, t as f64 * spec.drift.1);
        let (mask, clean) = match (spec.label, spec.shape) {
            (ClassLabel::Background, _) | (_, None) => {
                (Plane::new(n, n, 0.0), Plane::new(n, n, BACKGROUND_LEVEL))
            }
            (label, Some(shape)) => {
                let mut mask = Plane::new(n, n, 0.0);
                let img = Plane::from_fn(n, n, |x, y| {
                    let r = shape.level(offset, Point::new(x as f64, y as f64));
                    if r > 1.0 {
                        return BACKGROUND_LEVEL;
                    }
                    match label {
                        ClassLabel::Head if r > HEAD_RIM_START => HEAD_RIM_LEVEL,
                        ClassLabel::Head => HEAD_INNER_LEVEL,
                        ClassLabel::Abdomen => ABDOMEN_LEVEL,
                        _ => FEMUR_LEVEL,
                    }
                });
                for (m, &v) in mask.data_mut().iter_mut().zip(img.data()) {
                    *m = (v != BACKGROUND_LEVEL) as u8 as f64;
                }
                (mask, img)
            }
        };
        let frame = if spec.noise_sigma > 0.0 {
            let mut f = clean;
            for v in f.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = (*v * (1.0 + spec.noise_sigma * z)).clamp(0.0, 1.0);
            }
            f
        } else {
            clean
        };
        let id = format!("{clip_id}/{t}");
        truth.push(spec.ground_truth().with_frame_id(id.clone()));
        sample.frame_ids.push(id);
        sample.frames.push(frame);
        sample.masks.push(mask);
        sample.labels.push(spec.label);
        sample.spacing_mm.push(spec.spacing_mm);
    }
    Ok(PhantomClip {
        sample,
        ground_truth: truth,
    })
}

/// Relative class frequencies for a generated suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    pub head: f64,
    pub abdomen: f64,
    pub femur: f64,
    pub background: f64,
}

impl Default for ClassMix {
    /// Background-heavy, as in clinical video where most frames are not
    /// standard planes.
    fn default() -> Self {
        ClassMix {
            head: 0.2,
            abdomen: 0.2,
            femur: 0.2,
            background: 0.4,
        }
    }
}

impl ClassMix {
    pub fn uniform() -> Self {
        ClassMix {
            head: 1.0,
            abdomen: 1.0,
            femur: 1.0,
            background: 1.0,
        }
    }

    fn weights(&self) -> [f64; 4] {
        [self.head, self.abdomen, self.femur, self.background]
    }

    /// Clips per class (in [`ClassLabel::ALL`] order) by largest remainder.
    pub fn counts(&self, n: usize) -> Result<[usize; 4]> {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        if w.iter().any(|&x| !(x >= 0.0)) || !(total > 0.0) {
            return Err(Error::Config(format!("invalid class mix {self:?}")));
        }
        let exact = w.map(|x| x / total * n as f64);
        let mut counts = exact.map(|x| x.floor() as usize);
        let mut order = [0, 1, 2, 3];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let left = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(left) {
            counts[i] += 1;
        }
        Ok(counts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub size: usize,
    pub clip_len: usize,
    pub noise_sigma: f64,
    /// Spacing is drawn uniformly from this range per clip.
    pub spacing_mm: (f64, f64),
    pub max_drift: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            size: 64,
            clip_len: 3,
            noise_sigma: 0.1,
            spacing_mm: (0.1, 0.3),
            max_drift: 1.0,
        }
    }
}

/// A random spec of class `label` that fits a `size × size` frame.
pub fn random_spec<R: Rng + ?Sized>(
    rng: &mut R,
    label: ClassLabel,
    opts: &SuiteOptions,
) -> Result<PhantomSpec> {
    let s = opts.size as f64;
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let shape = match label {
        ClassLabel::Head => {
            let b = rng.random_range(0.15 * s..0.25 * s);
            let a = b * rng.random_range(1.0..1.3);
            Some(Shape::Ellipse { a, b, center: Point::default(), angle })
        }
        ClassLabel::Abdomen => {
            let b = rng.random_range(0.15 * s..0.25 * s);
            let a = b * rng.random_range(1.0..1.2);
            Some(Shape::Ellipse { a, b, center: Point::default(), angle })
        }
        ClassLabel::Femur => {
            let length = rng.random_range(0.45 * s..0.7 * s);
            let width = rng.random_range(0.1 * s..0.15 * s);
            Some(Shape::Capsule { length, width, center: Point::default(), angle })
        }
        ClassLabel::Background => None,
    };
    let drift = (
        rng.random_range(-opts.max_drift..=opts.max_drift),
        rng.random_range(-opts.max_drift..=opts.max_drift),
    );
    let shape = shape.map(|sh| {
        let (ex, ey) = sh.half_extent();
        let span = (opts.clip_len - 1) as f64;
        // Centre range that keeps the first and last frame inside.
        let pick = |rng: &mut R, e: f64, d: f64| {
            let lo = e - (span * d).min(0.0);
            let hi = s - 1.0 - e - (span * d).max(0.0);
            if lo < hi {
                rng.random_range(lo..hi)
            } else {
                (s - 1.0) / 2.0
            }
        };
        let center = Point::new(pick(rng, ex, drift.0), pick(rng, ey, drift.1));
        match sh {
            Shape::Ellipse { a, b, angle, .. } => Shape::Ellipse { a, b, center, angle },
            Shape::Capsule { length, width, angle, .. } => Shape::Capsule { length, width, center, angle },
        }
    });
    let spec = PhantomSpec {
        label,
        shape,
        size: opts.size,
        spacing_mm: rng.random_range(opts.spacing_mm.0..=opts.spacing_mm.1),
        clip_len: opts.clip_len,
        drift,
        noise_sigma: opts.noise_sigma,
        seed: rng.random(),
    };
    spec.validate()?;
    Ok(spec)
}

/// In-memory suite: one clip per patient, classes allocated by `mix` and
/// shuffled under `seed`.
pub fn generate_clips(n_clips: usize, mix: ClassMix, opts: &SuiteOptions, seed: u64) -> Result<Vec<PhantomClip>> {
    let counts = mix.counts(n_clips)?;
    let mut labels: Vec<ClassLabel> = ClassLabel::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&l, n)| std::iter::repeat_n(l, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let spec = random_spec(&mut rng, label, opts)?;
            generate(&spec, &format!("clip{i:04}"), &format!("patient{i:04}"))
        })
        .collect()
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Write a suite to `dir`: `manifest.json`, 16-bit frames, `{0,255}` masks for
/// foreground frames, and `ground_truth.json` with the analytic measurements.
pub fn generate_suite(
    dir: &Path,
    n_clips: usize,
    mix: ClassMix,
    opts: &SuiteOptions,
    seed: u64,
) -> Result<DatasetManifest> {
    let clips = generate_clips(n_clips, mix, opts, seed)?;
    for sub in ["frames", "masks"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut entries = Vec::new();
    let mut truth = Vec::new();
    for clip in clips {
        let s = &clip.sample;
        let mut frames = Vec::new();
        for t in 0..s.len() {
            let name = format!("{}_{t:02}.png", s.clip_id);
            let fpath = Path::new("frames").join(&name);
            write_frame_u16(&dir.join(&fpath), &s.frames[t])?;
            let mask = if s.labels[t].is_foreground() {
                let mpath = Path::new("masks").join(&name);
                write_mask(&dir.join(&mpath), &s.masks[t])?;
                Some(mpath)
            } else {
                None
            };
            frames.push(FrameRecord {
                index: t as u32,
                path: fpath,
                label: s.labels[t],
                mask,
            });
        }
        entries.push(ManifestEntry {
            patient_id: s.patient_id.clone(),
            clip_id: s.clip_id.clone(),
            pixel_spacing_mm: PixelSpacing::Isotropic(s.spacing_mm[0]),
            frames,
        });
        truth.extend(clip.ground_truth);
    }
    let manifest = DatasetManifest::new(entries, dir);
    manifest.validate()?;
    save_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
    let gt = dir.join(GROUND_TRUTH_FILE);
    let text = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    std::fs::write(&gt, text).map_err(|e| Error::io(&gt, e))?;
    Ok(manifest)
}

/// Read a `ground_truth.json` sidecar keyed by frame id.
pub fn load_ground_truth(path: &Path) -> Result<HashMap<String, BiometryResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let list: Vec<BiometryResult> = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    Ok(list
        .into_iter()
        .filter_map(|r| r.frame_id.clone().map(|id| (id, r)))
        .collect())
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::Sample;
use crate::raster::Interpolation;

/// Ranges the per-clip augmentation draw samples from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_rotation_deg: f64,
    pub max_brightness: f64,
    pub contrast: (f64, f64),
    pub flip_probability: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_rotation_deg: 15.0,
            max_brightness: 0.2,
            contrast: (0.8, 1.2),
            flip_probability: 0.5,
        }
    }
}

/// One augmentation draw. The same draw is applied to every frame of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    /// Additive intensity shift.
    pub brightness: f64,
    /// Multiplicative intensity gain.
    pub contrast: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        brightness: 0.0,
        contrast: 1.0,
        flip_horizontal: false,
        flip_vertical: false,
    };

    pub fn draw<R: Rng + ?Sized>(rng: &mut R, r: &AugmentRanges) -> Self {
        AugmentParams {
            rotation_deg: rng.random_range(-r.max_rotation_deg..=r.max_rotation_deg),
            brightness: rng.random_range(-r.max_brightness..=r.max_brightness),
            contrast: rng.random_range(r.contrast.0..=r.contrast.1),
            flip_horizontal: rng.random_bool(r.flip_probability),
            flip_vertical: rng.random_bool(r.flip_probability),
        }
    }
}

/// Draw once from `seed` and apply to the whole clip. Returns the augmented
/// clip and the parameters used for each frame.
pub fn augment_clip(sample: &Sample, seed: u64) -> (Sample, Vec<AugmentParams>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = AugmentParams::draw(&mut rng, &AugmentRanges::default());
    (apply_augment(sample, &p), vec![p; sample.len()])
}

/// Flips, then rotation about the centre (bilinear for frames, nearest for
/// masks), then contrast and brightness on frames, clamped to `[0, 1]`.
pub fn apply_augment(sample: &Sample, p: &AugmentParams) -> Sample {
    let angle = p.rotation_deg.to_radians();
    let geom = |mut img: crate::raster::Plane, interp| {
        if p.flip_horizontal {
            img = img.flip_horizontal();
        }
        if p.flip_vertical {
            img = img.flip_vertical();
        }
        if angle != 0.0 {
            img = img.rotate(angle, interp);
        }
        img
    };
    let mut out = sample.clone();
    for (f, m) in out.frames.iter_mut().zip(out.masks.iter_mut()) {
        *f = geom(f.clone(), Interpolation::Bilinear)
            .map(|v| (v * p.contrast + p.brightness).clamp(0.0, 1.0));
        *m = geom(m.clone(), Interpolation::Nearest);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::tests::sample;

    #[test]
    fn deterministic_and_coherent() {
        let s = sample(32, 32, 4);
        let (a, pa) = augment_clip(&s, 11);
        let (b, pb) = augment_clip(&s, 11);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(pa.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(a.labels, s.labels);
        for m in &a.masks {
            assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
        for f in &a.frames {
            assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn flips_twice_recover_the_clip() {
        let s = sample(16, 12, 2);
        let p = AugmentParams {
            flip_horizontal: true,
            flip_vertical: true,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(apply_augment(&apply_augment(&s, &p), &p), s);
    }

    #[test]
    fn draws_stay_in_range() {
        let r = AugmentRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let p = AugmentParams::draw(&mut rng, &r);
            assert!(p.rotation_deg.abs() <= 15.0);
            assert!(p.brightness.abs() <= 0.2);
            assert!((0.8..=1.2).contains(&p.contrast));
        }
    }
}

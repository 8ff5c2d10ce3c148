use crate::error::{Error, Result};
use crate::raster::Plane;

pub const DEFAULT_THRESHOLD: f64 = 0.6;

/// Binary image with isotropic pixel spacing in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
    pixel_spacing: f64,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>, pixel_spacing: f64) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("BinaryMask", width * height, data.len()));
        }
        if !(pixel_spacing > 0.0 && pixel_spacing.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pixel spacing must be positive, got {pixel_spacing}"
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
            pixel_spacing,
        })
    }

    pub fn empty(width: usize, height: usize, pixel_spacing: f64) -> Result<Self> {
        Self::new(width, height, vec![false; width * height], pixel_spacing)
    }

    /// Foreground where `plane > threshold`.
    pub fn from_plane(plane: &Plane, threshold: f64, pixel_spacing: f64) -> Result<Self> {
        Self::new(
            plane.width(),
            plane.height(),
            plane.data().iter().map(|&v| v > threshold).collect(),
            pixel_spacing,
        )
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        pixel_spacing: f64,
        f: impl Fn(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data, pixel_spacing)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Bounds-checked read; outside the image is background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn to_plane(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| self.get(x, y) as u8 as f64)
    }

    fn with_data(&self, data: Vec<bool>) -> BinaryMask {
        BinaryMask {
            data,
            ..self.clone()
        }
    }

    /// 5×5 cross erosion; the outside of the image counts as foreground.
    pub fn erode_cross5(&self) -> BinaryMask {
        self.cross5(true, |a, b| a && b, true)
    }

    /// 5×5 cross dilation; the outside of the image counts as background.
    pub fn dilate_cross5(&self) -> BinaryMask {
        self.cross5(false, |a, b| a || b, false)
    }

    fn cross5(&self, init: bool, op: impl Fn(bool, bool) -> bool, outside: bool) -> BinaryMask {
        const ARM: [(i64, i64); 9] = [
            (0, 0),
            (-1, 0),
            (-2, 0),
            (1, 0),
            (2, 0),
            (0, -1),
            (0, -2),
            (0, 1),
            (0, 2),
        ];
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..h {
            for x in 0..w {
                let mut acc = init;
                for (dx, dy) in ARM {
                    let (xx, yy) = (x + dx, y + dy);
                    let v = if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        outside
                    } else {
                        self.data[(yy * w + xx) as usize]
                    };
                    acc = op(acc, v);
                }
                out.push(acc);
            }
        }
        self.with_data(out)
    }

    /// 5×5 median with replicated borders. On a binary image this is a
    /// majority vote over 25 pixels.
    pub fn median5(&self) -> BinaryMask {
        let (w, h) = (self.width as i64, self.height as i64);
        // Column sums over the vertical 5-window, then a horizontal sweep.
        let mut col = vec![0u32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0;
                for dy in -2..=2 {
                    let yy = (y + dy).clamp(0, h - 1);
                    s += self.data[(yy * w + x) as usize] as u32;
                }
                col[(y * w + x) as usize] = s;
            }
        }
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..h {
            for x in 0..w {
                let mut s = 0;
                for dx in -2..=2 {
                    let xx = (x + dx).clamp(0, w - 1);
                    s += col[(y * w + xx) as usize];
                }
                out.push(s >= 13);
            }
        }
        self.with_data(out)
    }
}

/// Probability map → clean binary mask at `out_size = (width, height)`:
/// bilinear resize, threshold, opening with a 5×5 cross, 5×5 median.
pub fn postprocess(
    prob: &Plane,
    out_size: (usize, usize),
    threshold: f64,
    pixel_spacing: f64,
) -> Result<BinaryMask> {
    let (w, h) = out_size;
    if w == 0 || h == 0 || prob.width() == 0 || prob.height() == 0 {
        return Err(Error::InvalidInput("postprocess needs a non-empty grid".into()));
    }
    let resized = prob.resize_bilinear(w, h);
    let bin = BinaryMask::from_plane(&resized, threshold, pixel_spacing)?;
    let smoothed = bin.erode_cross5().dilate_cross5().median5();
    // The median of a {0,1} image is already {0,1}; binarizing at 0.5 is the identity here.
    Ok(smoothed)
}

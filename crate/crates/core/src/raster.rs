//! Single-channel image planes shared by the data pipeline, the network
//! interface, and the measurement geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::resize_plane_bilinear;

/// A row-major `width × height` grid of reals. Pixel `(x, y)` has its centre at
/// integer coordinates `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("Plane::from_vec", width * height, data.len()));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Plane {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        Plane {
            width,
            height,
            data: resize_plane_bilinear(&self.data, self.height, self.width, height, width),
        }
    }

    /// Nearest-neighbour resize with half-pixel-centre sampling.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Plane {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Plane::from_fn(width, height, |x, y| {
            let ix = (((x as f64 + 0.5) * sx) as usize).min(self.width - 1);
            let iy = (((y as f64 + 0.5) * sy) as usize).min(self.height - 1);
            self.get(ix, iy)
        })
    }

    pub fn flip_horizontal(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    /// Rotate about the image centre by `angle` radians (counter-clockwise on
    /// screen), filling uncovered pixels with zero.
    pub fn rotate(&self, angle: f64, interpolation: Interpolation) -> Plane {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let (s, c) = angle.sin_cos();
        Plane::from_fn(self.width, self.height, |x, y| {
            // Inverse map: destination → source.
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            match interpolation {
                Interpolation::Nearest => {
                    let (ix, iy) = (sx.round(), sy.round());
                    if ix < 0.0 || iy < 0.0 || ix > (self.width - 1) as f64 || iy > (self.height - 1) as f64 {
                        0.0
                    } else {
                        self.get(ix as usize, iy as usize)
                    }
                }
                Interpolation::Bilinear => self.sample_bilinear_zero(sx, sy),
            }
        })
    }

    /// Bilinear sample treating everything outside the grid as zero.
    fn sample_bilinear_zero(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let at = |xi: f64, yi: f64| {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                0.0
            } else {
                self.get(xi as usize, yi as usize)
            }
        };
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
        let bot = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Zero-pad to a square, centring the content. Returns the padded plane
    /// and the `(x, y)` offset of the original content.
    pub fn letterbox(&self) -> (Plane, (usize, usize)) {
        let side = self.width.max(self.height);
        let ox = (side - self.width) / 2;
        let oy = (side - self.height) / 2;
        let mut out = Plane::new(side, side, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x + ox, y + oy, self.get(x, y));
            }
        }
        (out, (ox, oy))
    }

    /// Copy a `width × height` window starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Plane {
        Plane::from_fn(width, height, |x, y| self.get(x + x0, y + y0))
    }

    /// Intensity-weighted centroid.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut m = 0.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                m += v;
                sx += v * x as f64;
                sy += v * y as f64;
            }
        }
        (m > 0.0).then(|| (sx / m, sy / m))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

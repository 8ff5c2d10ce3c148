use std::path::Path;

use fetalnet_core::data::write_rgb;
use fetalnet_core::geometry::{EllipseFit, Point, RotatedRect};
use fetalnet_core::Plane;

pub const RED: [u8; 3] = [255, 0, 0];
pub const GREEN: [u8; 3] = [0, 255, 0];

/// An RGB copy of a grey frame to draw on.
pub struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl Canvas {
    pub fn from_plane(p: &Plane) -> Self {
        let pixels = p
            .data()
            .iter()
            .map(|&v| {
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g]
            })
            .collect();
        Canvas {
            width: p.width(),
            height: p.height(),
            pixels,
        }
    }

    fn plot(&mut self, x: f64, y: f64, c: [u8; 3]) {
        let (xi, yi) = (x.round(), y.round());
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < self.width && (yi as usize) < self.height {
            self.pixels[yi as usize * self.width + xi as usize] = c;
        }
    }

    pub fn line(&mut self, a: Point, b: Point, c: [u8; 3]) {
        let steps = (a.dist(b) * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.plot(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), c);
        }
    }

    pub fn polyline(&mut self, pts: &[Point], closed: bool, c: [u8; 3]) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], c);
        }
        if closed && pts.len() > 2 {
            self.line(pts[pts.len() - 1], pts[0], c);
        }
    }

    pub fn ellipse(&mut self, e: &EllipseFit, c: [u8; 3]) {
        let n = (e.perimeter() * 2.0).ceil().max(16.0) as usize;
        let pts: Vec<Point> = (0..n)
            .map(|i| e.point_at(2.0 * std::f64::consts::PI * i as f64 / n as f64))
            .collect();
        self.polyline(&pts, true, c);
    }

    pub fn rect(&mut self, r: &RotatedRect, c: [u8; 3]) {
        self.polyline(&r.corners(), true, c);
    }

    pub fn save(&self, path: &Path) -> fetalnet_core::Result<()> {
        write_rgb(path, self.width, self.height, &self.pixels)
    }
}

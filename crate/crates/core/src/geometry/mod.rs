//! Mask post-processing and the geometric measurement pipeline.

mod contour;
mod ellipse;
mod mask;
mod measure;
mod rect;

use serde::{Deserialize, Serialize};

pub use contour::{find_contours, polyline_distance, rdp, simplify_closed, Contour};
pub use ellipse::{ellipse_perimeter, fit_ellipse, EllipseFit};
pub use mask::{postprocess, BinaryMask, DEFAULT_THRESHOLD};
pub use measure::{measure, measure_detailed, BiometryResult, MeasureFailure, Measurement, RDP_EPSILON_FRACTION};
pub use rect::{convex_hull, min_area_rect, RotatedRect};

/// A position in pixel units; pixel `(i, j)` has its centre at `(i, j)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    /// Rotate about `c` by `angle` radians.
    pub fn rotate_about(self, c: Point, angle: f64) -> Point {
        let (s, co) = angle.sin_cos();
        let (dx, dy) = (self.x - c.x, self.y - c.y);
        Point::new(c.x + co * dx - s * dy, c.y + s * dx + co * dy)
    }
}

/// Wrap an angle into `[0, π)`.
pub(crate) fn wrap_half_turn(angle: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let a = angle.rem_euclid(pi);
    // rem_euclid can round up to exactly π.
    if a >= pi {
        0.0
    } else {
        a
    }
}

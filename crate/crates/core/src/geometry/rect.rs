use serde::{Deserialize, Serialize};

use super::{wrap_half_turn, Point};

/// Oriented rectangle; `angle` is the direction of the long side, in `[0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Point,
    pub long: f64,
    pub short: f64,
    pub angle: f64,
}

impl RotatedRect {
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.angle.sin_cos();
        let (hl, hs) = (self.long / 2.0, self.short / 2.0);
        let at = |u: f64, v: f64| {
            Point::new(
                self.center.x + c * u - s * v,
                self.center.y + s * u + c * v,
            )
        };
        [at(-hl, -hs), at(hl, -hs), at(hl, hs), at(-hl, hs)]
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Monotone-chain convex hull, counter-clockwise in a y-up frame, without
/// collinear points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle by rotating calipers over the hull.
/// Fewer than three non-collinear points give a rectangle with `short = 0`.
pub fn min_area_rect(points: &[Point]) -> RotatedRect {
    let hull = convex_hull(points);
    match hull.len() {
        0 => {
            return RotatedRect {
                center: Point::default(),
                long: 0.0,
                short: 0.0,
                angle: 0.0,
            }
        }
        1 => {
            return RotatedRect {
                center: hull[0],
                long: 0.0,
                short: 0.0,
                angle: 0.0,
            }
        }
        _ => {}
    }
    let mut best: Option<(f64, RotatedRect)> = None;
    let n = hull.len();
    let edges = if n == 2 { 1 } else { n };
    for i in 0..edges {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        let len = a.dist(b);
        if len == 0.0 {
            continue;
        }
        let u = ((b.x - a.x) / len, (b.y - a.y) / len);
        let v = (-u.1, u.0);
        let (mut umin, mut umax, mut vmin, mut vmax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for q in &hull {
            let pu = q.x * u.0 + q.y * u.1;
            let pv = q.x * v.0 + q.y * v.1;
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let (du, dv) = if n == 2 { (len, 0.0) } else { (umax - umin, vmax - vmin) };
        let area = du * dv;
        if best.as_ref().is_some_and(|(ba, _)| *ba <= area) {
            continue;
        }
        let (cu, cv) = ((umax + umin) / 2.0, (vmax + vmin) / 2.0);
        let center = Point::new(cu * u.0 + cv * v.0, cu * u.1 + cv * v.1);
        let (long, short, dir) = if du >= dv { (du, dv, u) } else { (dv, du, v) };
        best = Some((
            area,
            RotatedRect {
                center,
                long,
                short,
                angle: wrap_half_turn(dir.1.atan2(dir.0)),
            },
        ));
    }
    best.map(|(_, r)| r).expect("hull has a non-degenerate edge")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect_points(w: f64, h: f64, angle: f64) -> Vec<Point> {
        let c = Point::new(50.0, 40.0);
        let mut pts = Vec::new();
        for i in 0..=8 {
            for j in 0..=2 {
                let p = Point::new(c.x - w / 2.0 + w * i as f64 / 8.0, c.y - h / 2.0 + h * j as f64 / 2.0);
                pts.push(p.rotate_about(c, angle));
            }
        }
        pts
    }

    #[test]
    fn axis_aligned() {
        let r = min_area_rect(&rect_points(80.0, 20.0, 0.0));
        assert!((r.long - 80.0).abs() < 1e-9 && (r.short - 20.0).abs() < 1e-9);
        assert!(r.angle.abs() < 1e-9 || (r.angle - std::f64::consts::PI).abs() < 1e-9);
        assert!(r.center.dist(Point::new(50.0, 40.0)) < 1e-9);
    }

    #[test]
    fn rotated_fifteen_degrees() {
        let a = 15f64.to_radians();
        let r = min_area_rect(&rect_points(80.0, 20.0, a));
        assert!((r.long - 80.0).abs() < 0.5);
        assert!((r.short - 20.0).abs() < 0.5);
        assert!((r.angle - a).abs() < 1e-9, "{}", r.angle);
    }

    #[test]
    fn point_pair_is_degenerate() {
        let r = min_area_rect(&[Point::new(1.0, 1.0), Point::new(4.0, 5.0)]);
        assert!((r.long - 5.0).abs() < 1e-12);
        assert_eq!(r.short, 0.0);
        let r = min_area_rect(&[Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(3.0, 0.0)]);
        assert_eq!((r.long, r.short), (3.0, 0.0));
    }

    #[test]
    fn hull_drops_interior() {
        let mut pts = rect_points(10.0, 10.0, 0.0);
        pts.push(Point::new(50.0, 40.0));
        assert_eq!(convex_hull(&pts).len(), 4);
    }

    proptest! {
        #[test]
        fn rectangle_encloses_points(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let r = min_area_rect(&pts);
            prop_assert!(r.long >= r.short);
            let (s, c) = r.angle.sin_cos();
            for p in &pts {
                let (dx, dy) = (p.x - r.center.x, p.y - r.center.y);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                prop_assert!(u.abs() <= r.long / 2.0 + 1e-9);
                prop_assert!(v.abs() <= r.short / 2.0 + 1e-9);
            }
        }
    }
}

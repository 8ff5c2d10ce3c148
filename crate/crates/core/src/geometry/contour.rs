use std::collections::VecDeque;

use super::mask::BinaryMask;
use super::Point;

/// Closed outer boundary of one 8-connected component.
///
/// Points are the midpoints of the pixel-edge cracks separating the component
/// from the background, in traversal order.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub points: Vec<Point>,
    /// Pixels enclosed by the boundary, holes included.
    pub enclosed_pixels: usize,
}

impl Contour {
    /// Perimeter of the closed polygon through `points`.
    pub fn arc_length(&self) -> f64 {
        closed_length(&self.points)
    }
}

pub(crate) fn closed_length(points: &[Point]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len();
    (0..n).map(|i| points[i].dist(points[(i + 1) % n])).sum()
}

/// Outer boundaries of all 8-connected foreground components, largest
/// enclosed area first.
pub fn find_contours(mask: &BinaryMask) -> Vec<Contour> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || seen[y * w + x] {
                continue;
            }
            // Raster order makes (x, y) the component's top-left pixel.
            seen[y * w + x] = true;
            queue.push_back((x, y));
            while let Some((px, py)) = queue.pop_front() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                        if mask.get_signed(nx, ny) {
                            let i = ny as usize * w + nx as usize;
                            if !seen[i] {
                                seen[i] = true;
                                queue.push_back((nx as usize, ny as usize));
                            }
                        }
                    }
                }
            }
            out.push(trace(mask, x as i64, y as i64));
        }
    }
    out.sort_by(|a, b| b.enclosed_pixels.cmp(&a.enclosed_pixels));
    out
}

/// Follow the crack boundary clockwise on screen, foreground on the right,
/// starting East along the top edge of pixel `(x0, y0)`.
///
/// Corner `(i, j)` is the top-left corner of pixel `(i, j)`.
fn trace(mask: &BinaryMask, x0: i64, y0: i64) -> Contour {
    let start = (x0, y0);
    let east = (1i64, 0i64);
    let mid = |c: (i64, i64), d: (i64, i64)| {
        Point::new(
            c.0 as f64 + d.0 as f64 / 2.0 - 0.5,
            c.1 as f64 + d.1 as f64 / 2.0 - 0.5,
        )
    };
    let mut points = vec![mid(start, east)];
    let mut corners = vec![start];
    let mut c = (x0 + 1, y0);
    let mut d = east;
    loop {
        let r = (-d.1, d.0);
        let fr = (c.0 + (d.0 + r.0 - 1) / 2, c.1 + (d.1 + r.1 - 1) / 2);
        let fl = (c.0 + (d.0 - r.0 - 1) / 2, c.1 + (d.1 - r.1 - 1) / 2);
        d = if mask.get_signed(fl.0, fl.1) {
            (d.1, -d.0)
        } else if mask.get_signed(fr.0, fr.1) {
            d
        } else {
            r
        };
        if c == start && d == east {
            break;
        }
        corners.push(c);
        points.push(mid(c, d));
        c = (c.0 + d.0, c.1 + d.1);
    }
    let n = corners.len();
    let twice: i64 = (0..n)
        .map(|i| {
            let (a, b) = (corners[i], corners[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    Contour {
        points,
        enclosed_pixels: (twice.unsigned_abs() / 2) as usize,
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Distance from `p` to a polyline, optionally closed.
pub fn polyline_distance(p: Point, poly: &[Point], closed: bool) -> f64 {
    match poly.len() {
        0 => f64::INFINITY,
        1 => p.dist(poly[0]),
        n => {
            let segs = if closed { n } else { n - 1 };
            (0..segs)
                .map(|i| segment_distance(p, poly[i], poly[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Ramer-Douglas-Peucker simplification of an open polyline. Endpoints are
/// kept and every dropped point lies within `epsilon` of the result.
pub fn rdp(points: &[Point], epsilon: f64) -> Vec<Point> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0, points.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (points[lo], points[hi]);
        let (mut best, mut best_d) = (lo, -1.0);
        for (i, &p) in points.iter().enumerate().take(hi).skip(lo + 1) {
            let d = segment_distance(p, a, b);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > epsilon {
            keep[best] = true;
            stack.push((lo, best));
            stack.push((best, hi));
        }
    }
    points
        .iter()
        .zip(keep)
        .filter_map(|(&p, k)| k.then_some(p))
        .collect()
}

/// RDP on a closed polygon: split at the first point and the point farthest
/// from it, simplify both chains, and join them.
pub fn simplify_closed(points: &[Point], epsilon: f64) -> Vec<Point> {
    if points.len() < 4 {
        return points.to_vec();
    }
    let far = (1..points.len())
        .max_by(|&i, &j| points[0].dist(points[i]).total_cmp(&points[0].dist(points[j])))
        .expect("at least four points");
    let first = rdp(&points[..=far], epsilon);
    let mut back: Vec<Point> = points[far..].to_vec();
    back.push(points[0]);
    let second = rdp(&back, epsilon);
    let mut out = first;
    out.extend_from_slice(&second[1..second.len() - 1]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn(w, h, 1.0, f).unwrap()
    }

    #[test]
    fn single_block() {
        let m = mask(10, 10, |x, y| (3..7).contains(&x) && (2..6).contains(&y));
        let cs = find_contours(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].enclosed_pixels, 16);
        assert_eq!(cs[0].points.len(), 16);
        assert!((cs[0].arc_length() - (12.0 + 4.0 * 0.5f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn larger_component_first() {
        let m = mask(20, 10, |x, y| {
            ((1..3).contains(&x) && (1..3).contains(&y)) || ((8..14).contains(&x) && (2..8).contains(&y))
        });
        let cs = find_contours(&m);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].enclosed_pixels, 36);
        assert_eq!(cs[1].enclosed_pixels, 4);
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let m = mask(6, 6, |x, y| (x, y) == (1, 1) || (x, y) == (2, 2) || (x, y) == (3, 1));
        let cs = find_contours(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].enclosed_pixels, 3);
        // No consecutive duplicates even through the pinch corners.
        let p = &cs[0].points;
        for i in 0..p.len() {
            assert_ne!(p[i], p[(i + 1) % p.len()]);
        }
    }

    #[test]
    fn holes_are_enclosed() {
        let m = mask(7, 7, |x, y| (1..6).contains(&x) && (1..6).contains(&y) && (x, y) != (3, 3));
        let cs = find_contours(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].enclosed_pixels, 25);
    }

    #[test]
    fn disk_area() {
        let r = 25.0;
        let m = mask(64, 64, |x, y| (x as f64 - 31.5).hypot(y as f64 - 31.5) <= r);
        let cs = find_contours(&m);
        assert_eq!(cs.len(), 1);
        let area = std::f64::consts::PI * r * r;
        assert!((cs[0].enclosed_pixels as f64 / area - 1.0).abs() < 0.03);
        // Shoelace over the midpoints agrees with the pixel count to within a
        // half-pixel band.
        let p = &cs[0].points;
        let shoelace: f64 = (0..p.len())
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % p.len()]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            .abs()
            / 2.0;
        assert!((shoelace / area - 1.0).abs() < 0.03);
    }

    #[test]
    fn empty_mask_has_no_contours() {
        assert!(find_contours(&mask(5, 5, |_, _| false)).is_empty());
    }

    #[test]
    fn rdp_examples() {
        let p = |x, y| Point::new(x, y);
        let line = [p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0), p(3.0, 0.0)];
        assert_eq!(rdp(&line, 1e-9), vec![p(0.0, 0.0), p(3.0, 0.0)]);
        let tri = [p(0.0, 0.0), p(2.0, 1.0), p(4.0, 0.0)];
        assert_eq!(rdp(&tri, 2.0), vec![p(0.0, 0.0), p(4.0, 0.0)]);
        assert_eq!(rdp(&tri, 0.5), tri.to_vec());
        assert_eq!(rdp(&tri[..2], 0.1), tri[..2].to_vec());
    }

    proptest! {
        #[test]
        fn rdp_small_epsilon_is_identity(pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 3..40)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            // Random reals are never exactly collinear with their neighbours.
            let out = rdp(&pts, 1e-12);
            prop_assert_eq!(out.len(), pts.len());
        }

        #[test]
        fn closed_simplification_contains_points(
            pts in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 4..60),
            eps in 0.01f64..5.0,
        ) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let s = simplify_closed(&pts, eps);
            for &p in &pts {
                prop_assert!(polyline_distance(p, &s, true) <= eps + 1e-12);
            }
        }
    }
}

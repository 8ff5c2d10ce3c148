use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{wrap_half_turn, Point};
use crate::error::{Error, Result};

/// Ellipse in pixel units with `a ≥ b > 0` and the major-axis angle in `[0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseFit {
    pub center: Point,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl EllipseFit {
    pub fn perimeter(&self) -> f64 {
        ellipse_perimeter(self.a, self.b)
    }

    /// Boundary point at parameter `t`.
    pub fn point_at(&self, t: f64) -> Point {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        Point::new(self.center.x + c * u - s * v, self.center.y + s * u + c * v)
    }
}

/// Ramanujan's first approximation.
pub fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    std::f64::consts::PI * (3.0 * (a + b) - ((3.0 * a + b) * (a + 3.0 * b)).sqrt())
}

/// Direct least-squares ellipse fit under the constraint `4AC − B² = 1`.
///
/// Points are centred and scaled to unit RMS radius first, and the scatter
/// matrix is split into quadratic and linear blocks so that only a 3×3
/// eigenproblem remains.
pub fn fit_ellipse(points: &[Point]) -> Result<EllipseFit> {
    if points.len() < 5 {
        return Err(Error::FitFailure(format!(
            "need at least 5 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let s = (points
        .iter()
        .map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::FitFailure("points coincide".into()));
    }

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let (x, y) = ((p.x - mx) / s, (p.y - my) / s);
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("points are collinear".into()))?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint block.
    let m = Matrix3::from_rows(&[
        m.row(2) / 2.0,
        -m.row(1),
        m.row(0) / 2.0,
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for ev in m.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * (1.0 + ev.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(m - Matrix3::identity() * ev.re)) else {
            continue;
        };
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.is_none_or(|(l, _)| ev.re.abs() < l) {
            best = Some((ev.re.abs(), v));
        }
    }
    let (_, a1) = best.ok_or_else(|| Error::FitFailure("no elliptical solution".into()))?;
    let a2 = t * a1;
    let (mut ca, mut cb, mut cc) = (a1[0], a1[1], a1[2]);
    let (mut cd, mut ce, mut cf) = (a2[0], a2[1], a2[2]);

    let det = 4.0 * ca * cc - cb * cb;
    if !(det > 0.0) {
        return Err(Error::FitFailure("conic is not an ellipse".into()));
    }
    let x0 = (cb * ce - 2.0 * cc * cd) / det;
    let y0 = (cb * cd - 2.0 * ca * ce) / det;
    let mut f0 = cf + (cd * x0 + ce * y0) / 2.0;
    if ca + cc < 0.0 {
        // Orient so the quadratic form is positive definite.
        for v in [&mut ca, &mut cb, &mut cc, &mut cd, &mut ce, &mut cf] {
            *v = -*v;
        }
        f0 = -f0;
    }
    let mean = (ca + cc) / 2.0;
    let rad = (((ca - cc) / 2.0).powi(2) + (cb / 2.0).powi(2)).sqrt();
    let (lmin, lmax) = (mean - rad, mean + rad);
    if !(lmin > 0.0 && f0 < 0.0) {
        return Err(Error::FitFailure("imaginary ellipse".into()));
    }
    let a = (-f0 / lmin).sqrt() * s;
    let b = (-f0 / lmax).sqrt() * s;
    // 0.5·atan2(B, A − C) is the direction of the larger eigenvalue, i.e. the minor axis.
    let angle = wrap_half_turn(0.5 * cb.atan2(ca - cc) + std::f64::consts::FRAC_PI_2);
    Ok(EllipseFit {
        center: Point::new(x0 * s + mx, y0 * s + my),
        a,
        b,
        angle,
    })
}

/// Unit vector spanning the null space of a rank-2 matrix.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r: [Vector3<f64>; 3] = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    [r[0].cross(&r[1]), r[0].cross(&r[2]), r[1].cross(&r[2])]
        .into_iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .filter(|v| v.norm() > 0.0)
        .map(|v| v.normalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample(e: &EllipseFit, n: usize) -> Vec<Point> {
        (0..n)
            .map(|i| e.point_at(2.0 * PI * i as f64 / n as f64))
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn circle_recovered() {
        let e = EllipseFit {
            center: Point::new(100.0, 100.0),
            a: 50.0,
            b: 50.0,
            angle: 0.0,
        };
        let f = fit_ellipse(&sample(&e, 12)).unwrap();
        assert!((f.a - 50.0).abs() < 1e-6 && (f.b - 50.0).abs() < 1e-6);
        assert!(f.center.dist(e.center) < 1e-6);
    }

    #[test]
    fn axis_aligned_and_rotated() {
        for angle in [0.0, PI / 6.0, 2.0] {
            let e = EllipseFit {
                center: Point::new(-3.0, 7.5),
                a: 60.0,
                b: 40.0,
                angle,
            };
            let f = fit_ellipse(&sample(&e, 30)).unwrap();
            assert!(rel(f.a, 60.0) < 1e-9, "{f:?}");
            assert!(rel(f.b, 40.0) < 1e-9);
            assert!((f.angle - angle).abs() < 1e-9, "{f:?}");
            assert!(f.center.dist(e.center) < 1e-9);
        }
    }

    #[test]
    fn angle_stays_in_half_turn() {
        let e = EllipseFit {
            center: Point::new(0.0, 0.0),
            a: 30.0,
            b: 10.0,
            angle: PI - 1e-3,
        };
        let f = fit_ellipse(&sample(&e, 40)).unwrap();
        assert!((0.0..PI).contains(&f.angle));
        assert!((f.angle - e.angle).abs() < 1e-8);
    }

    #[test]
    fn degenerate_inputs_fail() {
        let line: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(fit_ellipse(&line), Err(Error::FitFailure(_))));
        assert!(fit_ellipse(&line[..4]).is_err());
        assert!(fit_ellipse(&[Point::new(1.0, 1.0); 8]).is_err());
    }

    /// Arc length by composite Simpson over a quarter turn.
    pub(crate) fn numeric_perimeter(a: f64, b: f64) -> f64 {
        let n = 20_000;
        let h = PI / 2.0 / n as f64;
        let f = |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
        let mut s = f(0.0) + f(PI / 2.0);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        4.0 * s * h / 3.0
    }

    #[test]
    fn ramanujan_vs_quadrature() {
        for ratio in [1.0, 1.5, 2.0, 3.0, 4.0] {
            let p = ellipse_perimeter(10.0 * ratio, 10.0);
            assert!((p / numeric_perimeter(10.0 * ratio, 10.0) - 1.0).abs() < 5e-4);
        }
    }

    #[test]
    fn perimeter_examples() {
        assert!((ellipse_perimeter(50.0, 50.0) - 100.0 * PI).abs() < 1e-9);
        let p = ellipse_perimeter(60.0, 40.0);
        let hand = PI * (300.0 - (220.0f64 * 180.0).sqrt());
        assert!((p - hand).abs() < 1e-12);
        assert!((p / numeric_perimeter(60.0, 40.0) - 1.0).abs() < 2e-4);
        assert_eq!(p, ellipse_perimeter(40.0, 60.0));
    }
}

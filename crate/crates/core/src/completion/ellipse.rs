//! Direct least-squares ellipse fitting with a RANSAC front end.
//!
//! The fit minimizes algebraic distance subject to `4AC − B² = 1`, solved in the
//! numerically stable block form (scatter matrix split into quadratic and linear
//! parts, reduced to a 3x3 eigenproblem).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scalar::Real;

/// `A x² + B xy + C y² + D x + E y + F = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic<T> {
    pub coeffs: [T; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse<T> {
    pub center: Vec2<T>,
    /// Semi-axis along the rotated `u` direction.
    pub a: T,
    /// Semi-axis along the rotated `v` direction.
    pub b: T,
    /// Rotation of the `a` axis from +u, radians.
    pub angle: T,
}

impl<T: Real> Ellipse<T> {
    /// Squared normalized radius: `< 1` inside, `1` on the boundary.
    pub fn radial(&self, p: Vec2<T>) -> T {
        let (s, c) = self.angle.sin_cos();
        let du = p.u - self.center.u;
        let dv = p.v - self.center.v;
        let x = (du * c + dv * s) / self.a;
        let y = (-du * s + dv * c) / self.b;
        x * x + y * y
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        self.radial(p) <= T::one()
    }

    pub fn area(&self) -> T {
        T::PI() * self.a * self.b
    }

    pub fn to_conic(&self) -> Conic<T> {
        let (s, c) = self.angle.sin_cos();
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        let two = T::of(2.0);
        let aa = c * c / a2 + s * s / b2;
        let bb = two * c * s * (T::one() / a2 - T::one() / b2);
        let cc = s * s / a2 + c * c / b2;
        let (u0, v0) = (self.center.u, self.center.v);
        let dd = -two * aa * u0 - bb * v0;
        let ee = -bb * u0 - two * cc * v0;
        let ff = aa * u0 * u0 + bb * u0 * v0 + cc * v0 * v0 - T::one();
        Conic { coeffs: [aa, bb, cc, dd, ee, ff] }
    }
}

impl<T: Real> Conic<T> {
    pub fn eval(&self, p: Vec2<T>) -> T {
        let [a, b, c, d, e, f] = self.coeffs;
        a * p.u * p.u + b * p.u * p.v + c * p.v * p.v + d * p.u + e * p.v + f
    }

    /// First-order geometric distance `|Q(p)| / ‖∇Q(p)‖`.
    pub fn sampson_distance(&self, p: Vec2<T>) -> T {
        let [a, b, c, d, e, _] = self.coeffs;
        let two = T::of(2.0);
        let gu = two * a * p.u + b * p.v + d;
        let gv = b * p.u + two * c * p.v + e;
        let g = gu.hypot(gv);
        if g <= T::norm_epsilon() {
            return T::infinity();
        }
        self.eval(p).abs() / g
    }

    /// Geometric parameters, or `None` unless the conic is a real ellipse.
    pub fn to_ellipse(&self) -> Option<Ellipse<T>> {
        let [a, b, c, d, e, f] = self.coeffs;
        let two = T::of(2.0);
        let four = T::of(4.0);
        let disc = four * a * c - b * b;
        if !(disc.abs() > T::norm_epsilon()) {
            return None;
        }
        let u0 = (b * e - two * c * d) / disc;
        let v0 = (b * d - two * a * e) / disc;
        let f0 = f + (d * u0 + e * v0) / two;
        // Eigen-decomposition of [[a, b/2], [b/2, c]].
        let half_b = b / two;
        let mean = (a + c) / two;
        let r = ((a - c) / two).hypot(half_b);
        let (l1, l2) = (mean + r, mean - r);
        if !(l1 * f0 < T::zero() && l2 * f0 < T::zero()) {
            return None;
        }
        // Eigenvector of l2 (the larger semi-axis) gives the orientation.
        let angle = if half_b.abs() <= T::norm_epsilon() * (a.abs() + c.abs()) {
            if a <= c {
                T::zero()
            } else {
                T::FRAC_PI_2()
            }
        } else {
            (l2 - a).atan2(half_b)
        };
        let semi_a = (-f0 / l2).sqrt();
        let semi_b = (-f0 / l1).sqrt();
        let out = Ellipse { center: Vec2::new(u0, v0), a: semi_a, b: semi_b, angle };
        (out.a.is_finite() && out.b.is_finite() && u0.is_finite() && v0.is_finite()).then_some(out)
    }
}

fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3<T: Real>(m: &[[T; 3]; 3]) -> Option<[[T; 3]; 3]> {
    let det = det3(m);
    let scale = m.iter().flatten().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if !(det.abs() > T::norm_epsilon() * scale * scale * scale) {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    let mut out = adj;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v = *v / det;
        }
    }
    Some(out)
}

/// Real roots of `x³ + p2 x² + p1 x + p0`.
fn cubic_roots<T: Real>(p2: T, p1: T, p0: T) -> Vec<T> {
    let three = T::of(3.0);
    let two = T::of(2.0);
    let shift = p2 / three;
    // Depressed cubic t³ + p t + q with x = t − shift.
    let p = p1 - p2 * p2 / three;
    let q = two * p2 * p2 * p2 / T::of(27.0) - p2 * p1 / three + p0;
    let disc = (q / two).powi(2) + (p / three).powi(3);
    if disc > T::zero() {
        let s = disc.sqrt();
        let t = (-q / two + s).cbrt() + (-q / two - s).cbrt();
        vec![t - shift]
    } else if p.abs() <= T::norm_epsilon() {
        vec![-shift]
    } else {
        let m = two * (-p / three).sqrt();
        let arg = (three * q / (p * m)).clamp(-T::one(), T::one());
        let theta = arg.acos() / three;
        (0..3).map(|k| m * (theta - two * T::PI() * T::of_usize(k) / three).cos() - shift).collect()
    }
}

/// Null vector of a (near) singular 3x3 matrix via the best row cross product.
fn null_vector<T: Real>(m: &[[T; 3]; 3]) -> Option<[T; 3]> {
    let cross =
        |a: &[T; 3], b: &[T; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let cands = [cross(&m[0], &m[1]), cross(&m[0], &m[2]), cross(&m[1], &m[2])];
    let norm = |v: &[T; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let best = cands.iter().max_by(|a, b| norm(a).partial_cmp(&norm(b)).unwrap_or(std::cmp::Ordering::Equal))?;
    let n = norm(best);
    (n > T::zero() && n.is_finite()).then(|| [best[0] / n, best[1] / n, best[2] / n])
}

/// Direct least-squares ellipse through at least five points.
pub fn fit_ellipse<T: Real>(points: &[Vec2<T>]) -> Option<Ellipse<T>> {
    if points.len() < 5 {
        return None;
    }
    // Normalize: centroid to origin, RMS radius to sqrt(2).
    let n = T::of_usize(points.len());
    let (mu, mv) = points.iter().fold((T::zero(), T::zero()), |(a, b), p| (a + p.u, b + p.v));
    let (mu, mv) = (mu / n, mv / n);
    let ms = points.iter().fold(T::zero(), |acc, p| acc + (p.u - mu).powi(2) + (p.v - mv).powi(2)) / n;
    if !(ms > T::norm_epsilon()) {
        return None;
    }
    let scale = (T::of(2.0) / ms).sqrt();

    let mut s1 = [[T::zero(); 3]; 3];
    let mut s2 = [[T::zero(); 3]; 3];
    let mut s3 = [[T::zero(); 3]; 3];
    for p in points {
        let x = (p.u - mu) * scale;
        let y = (p.v - mv) * scale;
        let q = [x * x, x * y, y * y];
        let l = [x, y, T::one()];
        for i in 0..3 {
            for j in 0..3 {
                s1[i][j] = s1[i][j] + q[i] * q[j];
                s2[i][j] = s2[i][j] + q[i] * l[j];
                s3[i][j] = s3[i][j] + l[i] * l[j];
            }
        }
    }
    let s3_inv = inv3(&s3)?;
    // t = −S3⁻¹ S2ᵀ
    let mut t = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = -(0..3).fold(T::zero(), |acc, k| acc + s3_inv[i][k] * s2[j][k]);
        }
    }
    // m = S1 + S2 t, then premultiply by the inverse constraint matrix.
    let mut m = s1;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = m[i][j] + (0..3).fold(T::zero(), |acc, k| acc + s2[i][k] * t[k][j]);
        }
    }
    let half = T::of(0.5);
    let mc = [
        [m[2][0] * half, m[2][1] * half, m[2][2] * half],
        [-m[1][0], -m[1][1], -m[1][2]],
        [m[0][0] * half, m[0][1] * half, m[0][2] * half],
    ];
    let tr = mc[0][0] + mc[1][1] + mc[2][2];
    let minors = mc[0][0] * mc[1][1] - mc[0][1] * mc[1][0] + mc[0][0] * mc[2][2] - mc[0][2] * mc[2][0]
        + mc[1][1] * mc[2][2]
        - mc[1][2] * mc[2][1];
    let det = det3(&mc);
    let four = T::of(4.0);
    let mut best: Option<([T; 3], T)> = None;
    for lambda in cubic_roots(-tr, minors, -det) {
        let mut shifted = mc;
        for (i, row) in shifted.iter_mut().enumerate() {
            row[i] = row[i] - lambda;
        }
        let Some(a1) = null_vector(&shifted) else {
            continue;
        };
        let cond = four * a1[0] * a1[2] - a1[1] * a1[1];
        if cond > T::zero() && best.is_none_or(|(_, c)| cond > c) {
            best = Some((a1, cond));
        }
    }
    let (a1, _) = best?;
    let a2: Vec<T> = (0..3).map(|i| (0..3).fold(T::zero(), |acc, k| acc + t[i][k] * a1[k])).collect();
    // Undo the normalization: x = s (u − mu), y = s (v − mv).
    let (a, b, c, d, e, f) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);
    let s = scale;
    let s2_ = s * s;
    let two = T::of(2.0);
    let aa = a * s2_;
    let bb = b * s2_;
    let cc = c * s2_;
    let dd = -two * a * s2_ * mu - b * s2_ * mv + d * s;
    let ee = -b * s2_ * mu - two * c * s2_ * mv + e * s;
    let ff = a * s2_ * mu * mu + b * s2_ * mu * mv + c * s2_ * mv * mv - d * s * mu - e * s * mv + f;
    Conic { coeffs: [aa, bb, cc, dd, ee, ff] }.to_ellipse()
}
/// Algebraic (Kåsa) circle fit through at least three points.
pub fn fit_circle<T: Real>(points: &[Vec2<T>]) -> Option<Ellipse<T>> {
    if points.len() < 3 {
        return None;
    }
    let n = T::of_usize(points.len());
    let (mu, mv) = points.iter().fold((T::zero(), T::zero()), |(a, b), p| (a + p.u, b + p.v));
    let (mu, mv) = (mu / n, mv / n);
    // Solve for x² + y² + D x + E y + F = 0 in centered coordinates.
    let mut ata = [[T::zero(); 3]; 3];
    let mut atb = [T::zero(); 3];
    for p in points {
        let (x, y) = (p.u - mu, p.v - mv);
        let row = [x, y, T::one()];
        let rhs = -(x * x + y * y);
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] = ata[i][j] + row[i] * row[j];
            }
            atb[i] = atb[i] + row[i] * rhs;
        }
    }
    let inv = inv3(&ata)?;
    let sol: Vec<T> = (0..3).map(|i| (0..3).fold(T::zero(), |acc, k| acc + inv[i][k] * atb[k])).collect();
    let two = T::of(2.0);
    let (cx, cy) = (-sol[0] / two, -sol[1] / two);
    let r2 = cx * cx + cy * cy - sol[2];
    (r2 > T::zero()).then(|| Ellipse {
        center: Vec2::new(cx + mu, cy + mv),
        a: r2.sqrt(),
        b: r2.sqrt(),
        angle: T::zero(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RansacParams<T> {
    pub iterations: usize,
    /// Boundary inlier band, pixels.
    pub inlier_tol: T,
    /// Cost of one support pixel left outside a hypothesis, in inlier units.
    pub outside_penalty: T,
    /// Relative score gain an ellipse needs over the best circle to be chosen.
    pub ellipse_margin: T,
    pub seed: u64,
}

struct Scorer<'a, T> {
    boundary: &'a [Vec2<T>],
    support: &'a [Vec2<T>],
    max_axis: T,
    params: &'a RansacParams<T>,
}

impl<T: Real> Scorer<'_, T> {
    fn plausible(&self, e: &Ellipse<T>) -> bool {
        e.a >= T::one() && e.b >= T::one() && e.a <= self.max_axis && e.b <= self.max_axis
    }

    fn inliers(&self, e: &Ellipse<T>) -> Vec<Vec2<T>> {
        let conic = e.to_conic();
        self.boundary.iter().copied().filter(|p| conic.sampson_distance(*p) <= self.params.inlier_tol).collect()
    }

    /// Truncated-quadratic support minus the penalty for uncovered pixels.
    fn score(&self, e: &Ellipse<T>) -> T {
        let conic = e.to_conic();
        let tol = self.params.inlier_tol;
        let support = self.boundary.iter().fold(T::zero(), |acc, p| {
            let r = conic.sampson_distance(*p) / tol;
            acc + (T::one() - r * r).max(T::zero())
        });
        // Grow the axes by a pixel so silhouette pixels are not counted as outside.
        let grown = Ellipse { a: e.a + T::one(), b: e.b + T::one(), ..*e };
        let outside = self.support.iter().filter(|p| !grown.contains(**p)).count();
        support - self.params.outside_penalty * T::of_usize(outside)
    }

    /// Sample-and-score followed by inlier refits while the score improves.
    fn search(
        &self,
        rng: &mut ChaCha8Rng,
        sample_size: usize,
        fit: impl Fn(&[Vec2<T>]) -> Option<Ellipse<T>>,
    ) -> Option<(Ellipse<T>, T)> {
        let mut best: Option<(Ellipse<T>, T)> = None;
        let mut consider = |e: Ellipse<T>| {
            if self.plausible(&e) {
                let s = self.score(&e);
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((e, s));
                }
            }
        };
        if let Some(all) = fit(self.boundary) {
            consider(all);
        }
        let k = sample_size.min(self.boundary.len());
        let mut subset = Vec::with_capacity(k);
        for _ in 0..self.params.iterations {
            subset.clear();
            subset.extend(sample(rng, self.boundary.len(), k).into_iter().map(|i| self.boundary[i]));
            if let Some(e) = fit(&subset) {
                consider(e);
            }
        }
        let (mut current, mut current_score) = best?;
        for _ in 0..8 {
            let Some(refit) = fit(&self.inliers(&current)) else {
                break;
            };
            if !self.plausible(&refit) {
                break;
            }
            let s = self.score(&refit);
            if s <= current_score {
                break;
            }
            current = refit;
            current_score = s;
        }
        Some((current, current_score))
    }
}

/// Robust silhouette fit from boundary samples. `support` holds pixels that
/// must lie inside the result (the visible region).
///
/// Circles and general ellipses are searched separately; an arc covering only
/// part of the outline leaves a free ellipse poorly constrained, so the ellipse
/// is kept only when it beats the circle by `ellipse_margin`.
pub fn fit_ellipse_ransac<T: Real>(
    boundary: &[Vec2<T>],
    support: &[Vec2<T>],
    max_axis: T,
    params: &RansacParams<T>,
) -> Option<Ellipse<T>> {
    if boundary.len() < 5 {
        return None;
    }
    let scorer = Scorer { boundary, support, max_axis, params };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let circle = scorer.search(&mut rng, 3, fit_circle);
    let ellipse = scorer.search(&mut rng, 6, fit_ellipse);
    match (circle, ellipse) {
        (Some((c, cs)), Some((e, es))) => {
            if es > cs + cs.abs() * params.ellipse_margin {
                Some(e)
            } else {
                Some(c)
            }
        }
        (Some((c, _)), None) => Some(c),
        (None, Some((e, _))) => Some(e),
        (None, None) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_ellipse(e: &Ellipse<f64>, n: usize, arc: f64) -> Vec<Vec2<f64>> {
        let (s, c) = e.angle.sin_cos();
        (0..n)
            .map(|i| {
                let t = arc * i as f64 / n as f64;
                let (x, y) = (e.a * t.cos(), e.b * t.sin());
                Vec2::new(e.center.u + x * c - y * s, e.center.v + x * s + y * c)
            })
            .collect()
    }

    #[test]
    fn exact_points_recover_parameters() {
        let truth = Ellipse { center: Vec2::new(30.0, 22.0), a: 14.0, b: 9.0, angle: 0.4 };
        let pts = sample_ellipse(&truth, 40, std::f64::consts::TAU);
        let fit = fit_ellipse(&pts).unwrap();
        assert!((fit.center - truth.center).norm() < 1e-8);
        assert!((fit.a - 14.0).abs() < 1e-8 && (fit.b - 9.0).abs() < 1e-8);
        assert!((fit.angle - 0.4).rem_euclid(std::f64::consts::PI) < 1e-8);
        for p in &pts {
            assert!((fit.radial(*p) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conic_round_trip() {
        let e = Ellipse { center: Vec2::new(-3.0f64, 5.0), a: 4.0, b: 2.5, angle: 1.1 };
        let back = e.to_conic().to_ellipse().unwrap();
        assert!((back.center - e.center).norm() < 1e-9);
        assert!((back.a - e.a).abs() < 1e-9 && (back.b - e.b).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_do_not_fit() {
        let pts: Vec<_> = (0..10).map(|i| Vec2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(fit_ellipse(&pts).is_none());
    }

    #[test]
    fn ransac_ignores_a_chord() {
        let truth = Ellipse { center: Vec2::new(28.0, 28.0), a: 10.0, b: 10.0, angle: 0.0 };
        // Right half arc plus the vertical chord closing it.
        let mut pts: Vec<_> =
            sample_ellipse(&Ellipse { angle: -std::f64::consts::FRAC_PI_2, ..truth }, 60, std::f64::consts::PI);
        for i in 0..20 {
            pts.push(Vec2::new(28.0, 18.0 + i as f64));
        }
        let params =
            RansacParams { iterations: 200, inlier_tol: 0.5, outside_penalty: 1.0, ellipse_margin: 0.1, seed: 7 };
        let fit = fit_ellipse_ransac(&pts, &[], 100.0, &params).unwrap();
        assert!((fit.center - truth.center).norm() < 0.1, "{fit:?}");
        assert!((fit.a - 10.0).abs() < 0.1 && (fit.b - 10.0).abs() < 0.1);
    }
}

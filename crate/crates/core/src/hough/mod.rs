//! Branch line segments: detection in the image, deduplication, and lifting
//! to the camera frame.
//!
//! Lifting works one image line at a time. The image line and the camera
//! center span a plane; branch points close to that plane are rotated so the
//! plane faces the camera, imaged orthographically, and searched for lines
//! again. Lines found there have no foreshortening, so their endpoints map
//! straight back into the camera frame.

mod accumulator;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{align_to_axis, project, CameraIntrinsics, PixelDepth, Point3, RotationMatrix, Vec2};
use crate::imaging::{BitMask, DepthImage, ImagingError};
use crate::scalar::Real;

pub use accumulator::hough_segments_2d;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HoughError {
    #[error("segment endpoints define no plane through the camera center")]
    DegenerateSegment,
    #[error("invalid hough parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams<T> {
    /// Accumulator ρ bin, pixels.
    pub rho_res: T,
    /// Accumulator θ bin, radians.
    pub theta_res: T,
    pub vote_threshold: usize,
    /// Pixels.
    pub min_length: T,
    /// Largest tolerated hole along a segment, pixels.
    pub max_gap: T,
    /// Similar-line thresholds.
    pub rho_th: T,
    pub theta_th: T,
    /// Half-thickness of the slab kept around each line plane, meters.
    pub d_plane: T,
    /// Shorter 3D segments are dropped, meters.
    pub min_segment_3d: T,
}

impl<T: Real> Default for HoughParams<T> {
    fn default() -> Self {
        Self {
            rho_res: T::one(),
            theta_res: T::of(1f64.to_radians()),
            vote_threshold: 30,
            min_length: T::of(30.0),
            max_gap: T::of(5.0),
            rho_th: T::of(25.0),
            theta_th: T::PI() / T::of(6.0),
            d_plane: T::of(0.02),
            min_segment_3d: T::of(0.03),
        }
    }
}

impl<T: Real> HoughParams<T> {
    pub fn validate(&self) -> Result<(), HoughError> {
        let positive = [
            ("rho_res", self.rho_res),
            ("theta_res", self.theta_res),
            ("min_length", self.min_length),
            ("max_gap", self.max_gap),
            ("rho_th", self.rho_th),
            ("theta_th", self.theta_th),
            ("d_plane", self.d_plane),
            ("min_segment_3d", self.min_segment_3d),
        ];
        for (name, v) in positive {
            if !(v > T::zero() && v.is_finite()) {
                return Err(HoughError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if self.vote_threshold == 0 {
            return Err(HoughError::InvalidParams("vote_threshold must be positive".into()));
        }
        if self.theta_th >= T::FRAC_PI_2() {
            return Err(HoughError::InvalidParams("theta_th must be below pi/2".into()));
        }
        Ok(())
    }
}

/// Image segment with its line in `ρ = u·cosθ + v·sinθ` form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment2D<T> {
    pub p1: Vec2<T>,
    pub p2: Vec2<T>,
    pub rho: T,
    /// In `[0, π)`.
    pub theta: T,
    /// Supporting pixels.
    pub votes: usize,
    /// Half the stroke thickness, pixels.
    pub half_width: T,
}

impl<T: Real> Segment2D<T> {
    /// Segment through two points, with its normalized line parameters.
    pub fn from_endpoints(p1: Vec2<T>, p2: Vec2<T>, votes: usize) -> Option<Self> {
        let dir = (p2 - p1).normalized()?;
        let (rho, theta) = accumulator::hough_params_of(p1, dir);
        Some(Self { p1, p2, rho, theta, votes, half_width: T::zero() })
    }

    pub fn length(&self) -> T {
        (self.p2 - self.p1).norm()
    }

    pub fn direction(&self) -> Option<Vec2<T>> {
        (self.p2 - self.p1).normalized()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment3D<T> {
    pub p1: Point3<T>,
    pub p2: Point3<T>,
    /// Support in the face-on image that produced the segment.
    pub votes: usize,
}

impl<T: Real> Segment3D<T> {
    pub fn new(p1: Point3<T>, p2: Point3<T>) -> Self {
        Self { p1, p2, votes: 0 }
    }

    pub fn length(&self) -> T {
        self.p1.distance(&self.p2)
    }

    pub fn direction(&self) -> Option<Point3<T>> {
        (self.p2 - self.p1).normalized()
    }

    pub fn midpoint(&self) -> Point3<T> {
        self.p1.lerp(&self.p2, T::of(0.5))
    }

    pub fn point_at(&self, t: T) -> Point3<T> {
        self.p1.lerp(&self.p2, t)
    }

    pub fn min_z(&self) -> T {
        self.p1.z.min(self.p2.z)
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to(&self, p: &Point3<T>) -> T {
        let d = self.p2 - self.p1;
        let len2 = d.norm_squared();
        if len2 <= T::zero() {
            return p.distance(&self.p1);
        }
        let t = ((*p - self.p1).dot(&d) / len2).max(T::zero()).min(T::one());
        p.distance(&self.point_at(t))
    }
}

/// Distance between undirected line angles, in `[0, π/2]`.
pub fn angular_distance<T: Real>(a: T, b: T) -> T {
    let d = (a - b).abs() % T::PI();
    d.min(T::PI() - d)
}

pub fn is_similar<T: Real>(a: &Segment2D<T>, b: &Segment2D<T>, rho_th: T, theta_th: T) -> bool {
    (a.rho - b.rho).abs() < rho_th && angular_distance(a.theta, b.theta) < theta_th
}

/// Greedy suppression of near-duplicate lines; the best-supported line of
/// each similar group survives.
pub fn remove_similar<T: Real>(lines: &[Segment2D<T>], rho_th: T, theta_th: T) -> Vec<Segment2D<T>> {
    let mut order: Vec<&Segment2D<T>> = lines.iter().collect();
    order.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.rho.partial_cmp(&b.rho).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.theta.partial_cmp(&b.theta).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut kept: Vec<Segment2D<T>> = Vec::new();
    for line in order {
        if !kept.iter().any(|k| is_similar(k, line, rho_th, theta_th)) {
            kept.push(*line);
        }
    }
    kept
}

/// Viewing ray of a pixel with `z = f`, in pixel units.
pub fn lift_pixel<T: Real>(p: Vec2<T>, k: &CameraIntrinsics<T>) -> Point3<T> {
    Point3::new(p.u - k.u0, p.v - k.v0, k.f)
}

/// Unit normal of the plane through the camera center and an image segment.
///
/// The sign is fixed so the largest component is positive.
pub fn plane_from_segment<T: Real>(seg: &Segment2D<T>, k: &CameraIntrinsics<T>) -> Result<Point3<T>, HoughError> {
    let a = lift_pixel(seg.p1, k);
    let b = lift_pixel(seg.p2, k);
    let cross = a.cross(&b);
    if cross.norm() <= T::norm_epsilon() * a.norm() * b.norm() {
        return Err(HoughError::DegenerateSegment);
    }
    let n = cross.normalized().ok_or(HoughError::DegenerateSegment)?;
    let largest = [n.x, n.y, n.z].into_iter().fold(T::zero(), |m, c| if c.abs() > m.abs() { c } else { m });
    Ok(if largest < T::zero() { -n } else { n })
}

/// Points within `d_plane` of the plane through the origin with unit normal `n`.
pub fn filter_points_by_plane<T: Real>(points: &[Point3<T>], n: &Point3<T>, d_plane: T) -> Vec<Point3<T>> {
    points.iter().copied().filter(|p| n.dot(p).abs() <= d_plane).collect()
}

/// Rotation taking the plane normal onto the optical axis, and the rotated points.
pub fn face_on<T: Real>(points: &[Point3<T>], n: &Point3<T>) -> (RotationMatrix<T>, Vec<Point3<T>>) {
    let r = align_to_axis(*n, Point3::unit_z());
    let rotated = points.iter().map(|p| r.apply(p)).collect();
    (r, rotated)
}

/// Orthographic raster of face-on points: in-plane meters to virtual pixels.
#[derive(Debug, Clone)]
pub struct VirtualImage<T> {
    pub mask: BitMask,
    /// Pixels per meter.
    pub scale: T,
    /// In-plane point imaged at the raster center.
    pub center: Vec2<T>,
}

impl<T: Real> VirtualImage<T> {
    /// Scale follows the real camera at the median point range, so pixel
    /// thresholds keep their meaning.
    pub fn render(points: &[Point3<T>], k: &CameraIntrinsics<T>) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut ranges: Vec<T> = points.iter().map(|p| p.norm()).collect();
        ranges.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let range = ranges[ranges.len() / 2];
        if range <= T::zero() {
            return None;
        }
        let n = T::of_usize(points.len());
        let (sx, sy) = points.iter().fold((T::zero(), T::zero()), |(a, b), p| (a + p.x, b + p.y));
        let mut img = Self {
            mask: BitMask::zeros(k.width as usize, k.height as usize),
            scale: k.f / range,
            center: Vec2::new(sx / n, sy / n),
        };
        for p in points {
            let px = img.to_pixel(Vec2::new(p.x, p.y));
            if let (Some(u), Some(v)) = (px.u.round().to_i64(), px.v.round().to_i64()) {
                if u >= 0 && v >= 0 && (u as usize) < img.mask.width() && (v as usize) < img.mask.height() {
                    img.mask.set(u as usize, v as usize, true);
                }
            }
        }
        Some(img)
    }

    pub fn to_pixel(&self, q: Vec2<T>) -> Vec2<T> {
        let half_w = T::of_usize(self.mask.width()) / T::of(2.0);
        let half_h = T::of_usize(self.mask.height()) / T::of(2.0);
        Vec2::new((q.u - self.center.u) * self.scale + half_w, (q.v - self.center.v) * self.scale + half_h)
    }

    pub fn to_plane(&self, px: Vec2<T>) -> Vec2<T> {
        let half_w = T::of_usize(self.mask.width()) / T::of(2.0);
        let half_h = T::of_usize(self.mask.height()) / T::of(2.0);
        Vec2::new((px.u - half_w) / self.scale + self.center.u, (px.v - half_h) / self.scale + self.center.v)
    }
}

/// Everything produced while lifting one image line.
#[derive(Debug, Clone)]
pub struct LineLift<T> {
    pub source: Segment2D<T>,
    pub normal: Point3<T>,
    /// Branch points inside the plane slab.
    pub support: usize,
    pub virtual_image: Option<VirtualImage<T>>,
    pub segments: Vec<Segment3D<T>>,
}

/// Camera-frame points of all masked pixels with a depth return.
pub fn masked_cloud<T: Real>(
    mask: &BitMask,
    depth: &DepthImage<T>,
    k: &CameraIntrinsics<T>,
) -> Result<Vec<Point3<T>>, ImagingError> {
    if mask.dims() != depth.dims() {
        return Err(ImagingError::DimensionMismatch { expected: mask.dims(), got: depth.dims() });
    }
    Ok(mask
        .ones_iter()
        .filter_map(|(u, v)| {
            let z = depth.get(u, v);
            (z > T::zero()).then(|| project(PixelDepth::new(T::of_usize(u), T::of_usize(v), z), k))
        })
        .collect())
}

fn lift_line<T: Real>(
    source: Segment2D<T>,
    cloud: &[Point3<T>],
    k: &CameraIntrinsics<T>,
    params: &HoughParams<T>,
) -> LineLift<T> {
    let mut lift = LineLift { source, normal: Point3::unit_z(), support: 0, virtual_image: None, segments: Vec::new() };
    let Ok(n) = plane_from_segment(&source, k) else {
        return lift;
    };
    lift.normal = n;
    let slab = filter_points_by_plane(cloud, &n, params.d_plane);
    lift.support = slab.len();
    let (r, rotated) = face_on(&slab, &n);
    let Some(image) = VirtualImage::render(&rotated, k) else {
        return lift;
    };
    let inverse = r.transpose();
    let found = remove_similar(&hough_segments_2d(&image.mask, params), params.rho_th, params.theta_th);
    for seg in found {
        let ends = [seg.p1, seg.p2].map(|px| {
            let q = image.to_plane(px);
            // Out-of-plane offset from the closest supporting point.
            let z = rotated
                .iter()
                .min_by(|a, b| {
                    let da = (a.x - q.u).powi(2) + (a.y - q.v).powi(2);
                    let db = (b.x - q.u).powi(2) + (b.y - q.v).powi(2);
                    da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
                })
                .map_or(T::zero(), |p| p.z);
            let mut p = Point3::new(q.u, q.v, z);
            // Depth returns lie on the near side of the branch. Move back
            // toward the axis by the mean depth of a cylinder's visible
            // half (π/4 of the radius), staying in the plane.
            let radius = source.half_width * inverse.apply(&p).z / k.f;
            if let Some(away) = Vec2::new(q.u, q.v).normalized() {
                let shift = radius * T::FRAC_PI_4();
                p.x = p.x + away.u * shift;
                p.y = p.y + away.v * shift;
            }
            inverse.apply(&p)
        });
        let seg3 = Segment3D { p1: ends[0], p2: ends[1], votes: seg.votes };
        if seg3.length() >= params.min_segment_3d && seg3.p1.z > T::zero() && seg3.p2.z > T::zero() {
            lift.segments.push(seg3);
        }
    }
    lift.virtual_image = Some(image);
    lift
}

/// Two 3D segments describe the same branch when nearly parallel and each
/// endpoint of the shorter one lies near the longer one's line.
fn same_branch<T: Real>(a: &Segment3D<T>, b: &Segment3D<T>, tol: T, max_angle: T) -> bool {
    let (Some(da), Some(db)) = (a.direction(), b.direction()) else {
        return false;
    };
    if da.dot(&db).abs() < max_angle.cos() {
        return false;
    }
    let (short, long) = if a.length() < b.length() { (a, b) } else { (b, a) };
    let dir = long.direction().unwrap_or(da);
    let off_line = |p: &Point3<T>| {
        let d = *p - long.p1;
        (d - dir * d.dot(&dir)).norm()
    };
    off_line(&short.p1) <= tol && off_line(&short.p2) <= tol
}

/// Full lifting with per-line intermediates, for inspection.
pub fn detect_lines_3d_detailed<T: Real>(
    branch_mask: &BitMask,
    depth: &DepthImage<T>,
    k: &CameraIntrinsics<T>,
    params: &HoughParams<T>,
) -> Result<Vec<LineLift<T>>, HoughError> {
    let cloud = masked_cloud(branch_mask, depth, k)?;
    let lines = remove_similar(&hough_segments_2d(branch_mask, params), params.rho_th, params.theta_th);
    Ok(lines.into_par_iter().map(|line| lift_line(line, &cloud, k, params)).collect())
}

/// Camera-frame branch segments from a branch mask and registered depth.
pub fn detect_lines_3d<T: Real>(
    branch_mask: &BitMask,
    depth: &DepthImage<T>,
    k: &CameraIntrinsics<T>,
    params: &HoughParams<T>,
) -> Result<Vec<Segment3D<T>>, HoughError> {
    let lifts = detect_lines_3d_detailed(branch_mask, depth, k, params)?;
    Ok(merge_lifts(&lifts, params))
}

/// Flatten per-line results, dropping repeats of an already kept branch.
pub fn merge_lifts<T: Real>(lifts: &[LineLift<T>], params: &HoughParams<T>) -> Vec<Segment3D<T>> {
    let mut all: Vec<Segment3D<T>> = lifts.iter().flat_map(|l| l.segments.iter().copied()).collect();
    // Stable: equal votes keep the order of the image lines.
    all.sort_by_key(|s| std::cmp::Reverse(s.votes));
    let mut kept: Vec<Segment3D<T>> = Vec::new();
    for s in all {
        if !kept.iter().any(|k| same_branch(k, &s, params.d_plane, params.theta_th / T::of(3.0))) {
            kept.push(s);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn seg(rho: f64, theta: f64, votes: usize) -> Segment2D<f64> {
        Segment2D { p1: Vec2::new(0.0, 0.0), p2: Vec2::new(1.0, 0.0), rho, theta, votes, half_width: 1.0 }
    }

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::centered(300.0, 640, 480).unwrap()
    }

    #[test]
    fn axis_aligned_lines() {
        let p = HoughParams::<f64> { vote_threshold: 15, min_length: 15.0, ..Default::default() };
        let col = BitMask::from_fn(40, 40, |u, v| u == 10 && v <= 20);
        let s = hough_segments_2d(&col, &p);
        assert_eq!(s.len(), 1);
        assert_abs_diff_eq!(s[0].rho, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s[0].theta, 0.0, epsilon = 1e-9);
        let row = BitMask::from_fn(40, 40, |u, v| v == 5 && (3..35).contains(&u));
        let s = hough_segments_2d(&row, &p);
        assert_eq!(s.len(), 1);
        assert_abs_diff_eq!(s[0].rho, 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s[0].theta, FRAC_PI_2, epsilon = 1e-9);
        assert!(hough_segments_2d(&BitMask::zeros(40, 40), &p).is_empty());
    }

    #[test]
    fn similar_lines() {
        let a = seg(10.0, 0.0, 5);
        assert_eq!(remove_similar(&[a, a], 25.0, PI / 6.0).len(), 1);
        let b = seg(40.0, 0.0, 3);
        assert_eq!(remove_similar(&[a, b], 25.0, PI / 6.0).len(), 2);
        // θ near π is close to θ = 0.
        let c = seg(12.0, PI - 0.01, 9);
        let out = remove_similar(&[a, c], 25.0, PI / 6.0);
        assert_eq!(out, vec![c]);
    }

    #[test]
    fn plane_normals() {
        let k = k();
        let vertical = Segment2D::from_endpoints(Vec2::new(320.0, 100.0), Vec2::new(320.0, 300.0), 1).unwrap();
        let n = plane_from_segment(&vertical, &k).unwrap();
        assert_abs_diff_eq!(n.x, 1.0, epsilon = 1e-12);
        let horizontal = Segment2D::from_endpoints(Vec2::new(100.0, 240.0), Vec2::new(500.0, 240.0), 1).unwrap();
        let n = plane_from_segment(&horizontal, &k).unwrap();
        assert_abs_diff_eq!(n.y, 1.0, epsilon = 1e-12);
        let skew = Segment2D::from_endpoints(Vec2::new(13.0, 400.0), Vec2::new(600.0, 20.0), 1).unwrap();
        let n = plane_from_segment(&skew, &k).unwrap();
        assert!(n.dot(&lift_pixel(skew.p1, &k)).abs() < 1e-9);
        assert!(n.dot(&lift_pixel(skew.p2, &k)).abs() < 1e-9);
        let mut point = skew;
        point.p2 = point.p1;
        assert_eq!(plane_from_segment(&point, &k), Err(HoughError::DegenerateSegment));
    }

    #[test]
    fn slab_filter() {
        let n = Point3::new(0.0, 1.0, 0.0);
        let pts = [Point3::new(0.3, 0.0, 1.0), Point3::new(0.0, 0.04, 1.0)];
        assert_eq!(filter_points_by_plane(&pts, &n, 0.02), vec![pts[0]]);
    }

    #[test]
    fn face_on_flattens_the_slab() {
        let n = Point3::new(0.3, -0.5, 0.2).normalized().unwrap();
        let pts: Vec<_> = (0..50)
            .map(|i| {
                let t = i as f64 / 10.0;
                Point3::new(t, 0.5 * t + 0.1, 1.0 + 0.2 * t)
            })
            .collect();
        let slab = filter_points_by_plane(&pts, &n, 0.05);
        let (r, rotated) = face_on(&slab, &n);
        assert_abs_diff_eq!(r.apply(&n).z, 1.0, epsilon = 1e-12);
        for p in rotated {
            assert!(p.z.abs() <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn virtual_image_round_trip() {
        let pts = vec![Point3::new(0.1, 0.2, 0.0), Point3::new(-0.1, 0.0, 0.0)];
        let img = VirtualImage::render(&pts, &k()).unwrap();
        let q = Vec2::new(0.05, -0.02);
        let back = img.to_plane(img.to_pixel(q));
        assert_abs_diff_eq!(back.u, q.u, epsilon = 1e-12);
        assert_abs_diff_eq!(back.v, q.v, epsilon = 1e-12);
        assert_eq!(img.mask.count(), 2);
    }

    #[test]
    fn segment_distance() {
        let s = Segment3D::new(Point3::new(0.0, 0.0, 1.0), Point3::new(1.0, 0.0, 1.0));
        assert_abs_diff_eq!(s.distance_to(&Point3::new(0.5, 0.3, 1.0)), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.distance_to(&Point3::new(2.0, 0.0, 1.0)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_mask_yields_nothing() {
        let k = k();
        let mask = BitMask::zeros(640, 480);
        let depth = DepthImage::zeros(640, 480);
        assert!(detect_lines_3d(&mask, &depth, &k, &HoughParams::default()).unwrap().is_empty());
        assert!(detect_lines_3d(&BitMask::zeros(3, 3), &depth, &k, &HoughParams::default()).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(HoughParams::<f64>::default().validate().is_ok());
        let bad = HoughParams::<f64> { theta_th: 2.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}

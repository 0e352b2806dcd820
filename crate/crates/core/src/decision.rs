//! Which branch to push, where, which way and how far.
//!
//! The viewing cone runs from the camera center to the estimated fruit. In the
//! fruit frame (z toward the fruit) it is
//! `x²/a² + y²/b² ≤ z²/L²` for `0 ≤ z ≤ L`, with `L = ‖p_c‖` and `a`, `b` the
//! fruit width and height in meters. Branches in front of the fruit that come
//! within `d_v` of the cone are candidates; the one whose image direction is
//! closest to perpendicular to the view gradient is pushed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::CompletedFruit;
use crate::geometry::{
    align_to_axis, project, unproject, CameraIntrinsics, PixelDepth, Point3, Quaternion, RotationMatrix, Vec2,
};
use crate::hough::{Segment2D, Segment3D};
use crate::imaging::{BitMask, DepthImage, RoiBox};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error("no branch segment lies in front of the fruit within d_v of the viewing cone")]
    NoCandidate,
    #[error("visible fruit mask is empty")]
    EmptyMask,
    #[error("viewing cone is degenerate: {0}")]
    DegenerateFrustum(String),
    #[error("push direction must be a nonzero image vector")]
    InvalidDirection,
    #[error("push magnitude is zero")]
    ZeroMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionParams<T> {
    /// Proximity to the viewing cone that makes a branch a candidate, meters.
    pub d_v: T,
}

impl<T: Real> Default for DecisionParams<T> {
    fn default() -> Self {
        Self { d_v: T::of(0.05) }
    }
}

/// Angular samples of the cone surface before local refinement.
const GENERATORS: usize = 90;
/// Samples along a segment when minimizing or root-finding over it.
const SEGMENT_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewFrustum<T> {
    /// Unit vector from the camera toward the fruit.
    pub axis: Point3<T>,
    pub axis_length: T,
    /// Cross-section semi-axes at the fruit, meters (fruit-frame x and y).
    pub semi_axes: (T, T),
    /// Camera frame to fruit frame.
    pub rotation: RotationMatrix<T>,
}

impl<T: Real> ViewFrustum<T> {
    pub fn new(p_c: Point3<T>, semi_axes: (T, T)) -> Result<Self, DecisionError> {
        let axis_length = p_c.norm();
        let axis =
            p_c.normalized().ok_or_else(|| DecisionError::DegenerateFrustum("fruit at the camera center".into()))?;
        if !(semi_axes.0 > T::zero() && semi_axes.1 > T::zero()) {
            return Err(DecisionError::DegenerateFrustum(format!("semi-axes must be positive, got {semi_axes:?}")));
        }
        Ok(Self { axis, axis_length, semi_axes, rotation: align_to_axis(axis, Point3::unit_z()) })
    }

    /// Cone toward the completed fruit; pixel extents become meters at the
    /// centroid depth and are used as the semi-axes.
    pub fn from_fruit(fruit: &CompletedFruit<T>, k: &CameraIntrinsics<T>) -> Result<Self, DecisionError> {
        let z = fruit.centroid_3d.z;
        let m = |px: usize| T::of_usize(px.max(1)) * z / k.f;
        Self::new(fruit.centroid_3d, (m(fruit.width_px), m(fruit.height_px)))
    }

    pub fn to_fruit_frame(&self, p: &Point3<T>) -> Point3<T> {
        self.rotation.apply(p)
    }

    pub fn from_fruit_frame(&self, q: &Point3<T>) -> Point3<T> {
        self.rotation.transpose().apply(q)
    }

    /// Membership by the cone inequality and the truncation, in the fruit frame.
    pub fn contains(&self, p: &Point3<T>) -> bool {
        let q = self.to_fruit_frame(p);
        let (a, b) = self.semi_axes;
        q.z >= T::zero()
            && q.z <= self.axis_length
            && (q.x / a).powi(2) + (q.y / b).powi(2) <= (q.z / self.axis_length).powi(2)
    }

    /// Far end of the surface line at angle `phi`, fruit frame.
    fn generator(&self, phi: T) -> Point3<T> {
        let (s, c) = phi.sin_cos();
        Point3::new(self.semi_axes.0 * c, self.semi_axes.1 * s, self.axis_length)
    }

    /// Distance from a fruit-frame point to the surface line at angle `phi`.
    fn generator_distance(&self, q: &Point3<T>, phi: T) -> T {
        Segment3D::new(Point3::zero(), self.generator(phi)).distance_to(q)
    }

    /// Unsigned distance to the boundary (lateral surface and far cap).
    fn boundary_distance(&self, q: &Point3<T>) -> T {
        let step = T::TAU() / T::of_usize(GENERATORS);
        let (best_i, best) = (0..GENERATORS)
            .map(|i| (i, self.generator_distance(q, step * T::of_usize(i))))
            .fold((0, T::infinity()), |a, b| if b.1 < a.1 { b } else { a });
        let phi = step * T::of_usize(best_i);
        let (_, lateral) = golden_min(|x| self.generator_distance(q, x), phi - step, phi + step, 40);
        let lateral = lateral.min(best);
        let (a, b) = self.semi_axes;
        let over_cap = (q.x / a).powi(2) + (q.y / b).powi(2) <= T::one();
        if over_cap {
            lateral.min((q.z - self.axis_length).abs())
        } else {
            lateral
        }
    }

    /// Signed distance: negative inside, positive outside, meters.
    pub fn distance(&self, p: &Point3<T>) -> T {
        let d = self.boundary_distance(&self.to_fruit_frame(p));
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// Smallest signed distance over a segment and the parameter attaining it.
    pub fn segment_distance(&self, seg: &Segment3D<T>) -> (T, T) {
        let n = SEGMENT_SAMPLES;
        let samples: Vec<T> = (0..=n).map(|i| self.distance(&seg.point_at(T::of_usize(i) / T::of_usize(n)))).collect();
        let (i, _) =
            samples.iter().enumerate().fold((0, T::infinity()), |a, (i, d)| if *d < a.1 { (i, *d) } else { a });
        let h = T::one() / T::of_usize(n);
        let lo = (T::of_usize(i) - T::one()) * h;
        let hi = (T::of_usize(i) + T::one()) * h;
        let (t, d) = golden_min(|t| self.distance(&seg.point_at(t)), lo.max(T::zero()), hi.min(T::one()), 40);
        if d < samples[i] {
            (t, d)
        } else {
            (T::of_usize(i) * h, samples[i])
        }
    }
}

/// Signed distance to the viewing cone; `≤ 0` inside.
pub fn frustum_distance<T: Real>(p: &Point3<T>, frustum: &ViewFrustum<T>) -> T {
    frustum.distance(p)
}

pub fn to_fruit_frame<T: Real>(p: &Point3<T>, frustum: &ViewFrustum<T>) -> Point3<T> {
    frustum.to_fruit_frame(p)
}

/// Golden-section search for a minimum on `[a, b]`.
fn golden_min<T: Real>(f: impl Fn(T) -> T, mut a: T, mut b: T, iterations: usize) -> (T, T) {
    let g = T::of((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// A branch segment that passed the proximity and depth filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateLine<T> {
    /// Position in the input line list.
    pub index: usize,
    pub segment: Segment3D<T>,
    pub projected: Segment2D<T>,
    /// Angle between the image direction and the view gradient, `[0, π/2]`.
    pub alpha: T,
    /// `α − π/2`; zero for a line perpendicular to the gradient.
    pub gamma: T,
    /// Smallest signed distance to the viewing cone.
    pub frustum_distance: T,
}

/// Image segment of a camera-frame segment.
pub fn project_segment<T: Real>(seg: &Segment3D<T>, k: &CameraIntrinsics<T>) -> Option<Segment2D<T>> {
    let a = unproject(seg.p1, k).ok()?.pixel();
    let b = unproject(seg.p2, k).ok()?.pixel();
    Segment2D::from_endpoints(a, b, seg.votes)
}

/// All candidates, best first: smallest `|γ|`, then nearest to the cone,
/// then longest.
pub fn rank_candidates<T: Real>(
    lines: &[Segment3D<T>],
    frustum: &ViewFrustum<T>,
    o_f: Vec2<T>,
    z_c: T,
    k: &CameraIntrinsics<T>,
    params: &DecisionParams<T>,
) -> Result<Vec<CandidateLine<T>>, DecisionError> {
    let o_f = o_f.normalized().ok_or(DecisionError::InvalidDirection)?;
    let mut out: Vec<CandidateLine<T>> = lines
        .iter()
        .enumerate()
        .filter(|(_, s)| s.min_z() < z_c)
        .filter_map(|(index, s)| {
            let (_, dist) = frustum.segment_distance(s);
            if dist >= params.d_v {
                return None;
            }
            let projected = project_segment(s, k)?;
            let dir = projected.direction()?;
            let alpha = dir.dot(&o_f).abs().min(T::one()).acos();
            Some(CandidateLine {
                index,
                segment: *s,
                projected,
                alpha,
                gamma: alpha - T::FRAC_PI_2(),
                frustum_distance: dist,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        let key = |c: &CandidateLine<T>| (c.gamma.abs(), c.frustum_distance, -c.segment.length());
        let (ka, kb) = (key(a), key(b));
        ka.0.partial_cmp(&kb.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ka.1.partial_cmp(&kb.1).unwrap_or(std::cmp::Ordering::Equal))
            .then(ka.2.partial_cmp(&kb.2).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.index.cmp(&b.index))
    });
    Ok(out)
}

/// The line to push.
pub fn select_push_line<T: Real>(
    lines: &[Segment3D<T>],
    frustum: &ViewFrustum<T>,
    o_f: Vec2<T>,
    z_c: T,
    k: &CameraIntrinsics<T>,
    params: &DecisionParams<T>,
) -> Result<CandidateLine<T>, DecisionError> {
    rank_candidates(lines, frustum, o_f, z_c, k, params)?.into_iter().next().ok_or(DecisionError::NoCandidate)
}

/// Contact point on the pushing line.
///
/// Where the line crosses the cone surface, the crossing imaged farthest along
/// `robot_side` is used. A line that stays outside is touched at its point
/// nearest the cone; one that stays inside, at its endpoint farthest along
/// `robot_side`.
pub fn push_point<T: Real>(
    line: &CandidateLine<T>,
    frustum: &ViewFrustum<T>,
    robot_side: Vec2<T>,
    k: &CameraIntrinsics<T>,
) -> Point3<T> {
    let seg = &line.segment;
    let n = SEGMENT_SAMPLES;
    let ts: Vec<T> = (0..=n).map(|i| T::of_usize(i) / T::of_usize(n)).collect();
    let ds: Vec<T> = ts.iter().map(|t| frustum.distance(&seg.point_at(*t))).collect();
    let along = |p: &Point3<T>| unproject(*p, k).map(|q| q.pixel().dot(&robot_side)).unwrap_or(T::neg_infinity());
    let inside = |d: T| d <= T::zero();
    let mut crossings = Vec::new();
    for i in 0..n {
        if inside(ds[i]) != inside(ds[i + 1]) {
            let (mut lo, mut hi) = (ts[i], ts[i + 1]);
            let lo_inside = inside(ds[i]);
            for _ in 0..60 {
                let mid = (lo + hi) / T::of(2.0);
                if inside(frustum.distance(&seg.point_at(mid))) == lo_inside {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push(seg.point_at((lo + hi) / T::of(2.0)));
        }
    }
    let farthest = |pts: &[Point3<T>]| {
        pts.iter().copied().fold(None, |best: Option<Point3<T>>, p| match best {
            Some(b) if along(&b) >= along(&p) => Some(b),
            _ => Some(p),
        })
    };
    if let Some(p) = farthest(&crossings) {
        return p;
    }
    if ds.iter().all(|d| inside(*d)) {
        return farthest(&[seg.p1, seg.p2]).unwrap_or(seg.p1);
    }
    let (t, _) = frustum.segment_distance(seg);
    seg.point_at(t)
}

/// Camera-frame points of the visible fruit pixels (ROI mask plus box offset).
pub fn visible_points<T: Real>(
    visible_mask: &BitMask,
    roi: &RoiBox,
    depth: &DepthImage<T>,
    k: &CameraIntrinsics<T>,
) -> Vec<Point3<T>> {
    visible_mask
        .ones_iter()
        .filter_map(|(u, v)| {
            let (iu, iv) = (u + roi.u_tl, v + roi.v_tl);
            if iu >= depth.width() || iv >= depth.height() {
                return None;
            }
            let z = depth.get(iu, iv);
            (z > T::zero()).then(|| project(PixelDepth::new(T::of_usize(iu), T::of_usize(iv), z), k))
        })
        .collect()
}

/// Largest pairwise distance in a point set.
///
/// Points are visited by decreasing distance from their centroid; a pair is
/// skipped once the sum of those distances cannot beat the best pair, so the
/// result is exactly the pairwise maximum.
pub fn diameter<T: Real>(points: &[Point3<T>]) -> T {
    if points.len() < 2 {
        return T::zero();
    }
    let n = T::of_usize(points.len());
    let c = points.iter().fold(Point3::zero(), |acc, p| acc + *p) / n;
    let mut by_radius: Vec<(T, Point3<T>)> = points.iter().map(|p| (p.distance(&c), *p)).collect();
    by_radius.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    // Guard the triangle-inequality bound against rounding.
    let slack = T::one() + T::of(1e-6);
    let mut best = T::zero();
    for i in 0..by_radius.len() {
        let (ri, pi) = by_radius[i];
        if (ri + ri) * slack < best {
            break;
        }
        for &(rj, pj) in &by_radius[i + 1..] {
            if (ri + rj) * slack < best {
                break;
            }
            let d = pi.distance(&pj);
            if d > best {
                best = d;
            }
        }
    }
    best
}

/// Push length: the largest 3D extent of the visible fruit.
pub fn push_magnitude<T: Real>(
    visible_mask: &BitMask,
    roi: &RoiBox,
    depth: &DepthImage<T>,
    k: &CameraIntrinsics<T>,
) -> Result<T, DecisionError> {
    let pts = visible_points(visible_mask, roi, depth, k);
    if pts.is_empty() {
        return Err(DecisionError::EmptyMask);
    }
    Ok(diameter(&pts))
}

/// End-effector tilt away from the optical axis.
pub const TOOL_TILT: f64 = std::f64::consts::FRAC_PI_4;

/// Tool orientation: the tool axis leans from the optical axis by
/// [`TOOL_TILT`], approaching from the robot's side of the image.
pub fn ee_orientation<T: Real>(robot_side: Vec2<T>) -> RotationMatrix<T> {
    let side = robot_side.normalized().unwrap_or(Vec2::new(-T::one(), T::zero()));
    let (s, c) = T::of(TOOL_TILT).sin_cos();
    let tool = Point3::new(-side.u * s, -side.v * s, c);
    align_to_axis(Point3::unit_z(), tool)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushPlan<T> {
    /// Index of the pushed segment in the detected line list.
    pub line_index: usize,
    pub line: Segment3D<T>,
    pub push_point: Point3<T>,
    pub direction_img: Vec2<T>,
    pub direction_3d: Point3<T>,
    /// Meters.
    pub magnitude: T,
    pub gamma: T,
    pub ee_rotation: RotationMatrix<T>,
    pub ee_quaternion: Quaternion<T>,
}

impl<T: Real> PushPlan<T> {
    /// Displacement the plan applies to the branch.
    pub fn displacement(&self) -> Point3<T> {
        self.direction_3d * self.magnitude
    }
}

/// Assemble a plan for a selected line. The image gradient becomes a lateral
/// camera-frame motion.
pub fn build_push_plan<T: Real>(
    line: &CandidateLine<T>,
    frustum: &ViewFrustum<T>,
    o_f: Vec2<T>,
    robot_side: Vec2<T>,
    magnitude: T,
    k: &CameraIntrinsics<T>,
) -> Result<PushPlan<T>, DecisionError> {
    let dir = o_f.normalized().ok_or(DecisionError::InvalidDirection)?;
    if !(magnitude > T::zero()) {
        return Err(DecisionError::ZeroMagnitude);
    }
    let rot = ee_orientation(robot_side);
    Ok(PushPlan {
        line_index: line.index,
        line: line.segment,
        push_point: push_point(line, frustum, robot_side, k),
        direction_img: dir,
        direction_3d: Point3::new(dir.u, dir.v, T::zero()),
        magnitude,
        gamma: line.gamma,
        ee_rotation: rot,
        ee_quaternion: rot.to_quaternion(),
    })
}

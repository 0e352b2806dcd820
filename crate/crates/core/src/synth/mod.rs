//! Synthetic RGB-D scenes with exact ground truth.
//!
//! Scenes hold one ellipsoidal fruit, cylindrical branches with flat end caps
//! and optional spherical leaves in front of a flat background. Rendering casts
//! one ray through each pixel center and keeps the nearest hit; colors are flat
//! so HSV segmentation recovers footprints exactly. Everything here is `f64`.

mod scene;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{unproject, CameraIntrinsics, Point3, Vec2};
use crate::hough::Segment3D;
use crate::imaging::{hsv_to_rgb, BitMask, DepthImage, HsvRange, RgbImage};

pub use scene::{random_scene, random_scene_with, Difficulty};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{0} is not entirely in front of the camera")]
    PrimitiveBehindCamera(String),
    #[error("no branch with id {id} (scene has {count})")]
    UnknownBranch { id: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl Hsv {
    pub fn rgb(&self) -> [u8; 3] {
        hsv_to_rgb(self.h, self.s, self.v)
    }
}

/// Color box the generator draws fruit colors from, widened for 8-bit rounding.
pub const FRUIT_HSV: HsvRange = HsvRange { h_min: 10.0, h_max: 50.0, s_min: 0.68, s_max: 1.0, v_min: 0.45, v_max: 1.0 };

/// Color box for bark; disjoint from [`FRUIT_HSV`] in saturation.
pub const BRANCH_HSV: HsvRange =
    HsvRange { h_min: 15.0, h_max: 45.0, s_min: 0.25, s_max: 0.66, v_min: 0.08, v_max: 0.5 };

/// 640x480 camera with a 300 px focal length, principal point centered.
pub fn default_intrinsics() -> CameraIntrinsics<f64> {
    CameraIntrinsics { f: 300.0, u0: 320.0, v0: 240.0, width: 640, height: 480 }
}

/// Ellipsoid with axes along the camera axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Point3<f64>,
    pub semi_axes: [f64; 3],
    pub color: Hsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub p1: Point3<f64>,
    pub p2: Point3<f64>,
    pub radius: f64,
    pub color: Hsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Point3<f64>,
    pub radius: f64,
    pub color: Hsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub fruit: Ellipsoid,
    pub branches: Vec<Cylinder>,
    #[serde(default)]
    pub leaves: Vec<Sphere>,
    pub background_depth: f64,
    pub background_color: Hsv,
}

/// Analytic facts about a rendered scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Pixels whose ray meets the fruit, hidden or not.
    #[serde(skip)]
    pub fruit_footprint: BitMask,
    /// Pixels where the fruit is the nearest surface.
    #[serde(skip)]
    pub fruit_visible: BitMask,
    /// Pixels where some branch is the nearest surface.
    #[serde(skip)]
    pub branch_visible: BitMask,
    pub fruit_center: Point3<f64>,
    pub fruit_center_px: Vec2<f64>,
    /// First fruit surface point along the ray through the center pixel.
    pub fruit_center_surface: Option<Point3<f64>>,
    pub branch_axes: Vec<Segment3D<f64>>,
    /// Branch in front of the fruit on the most footprint rays.
    pub occluder: Option<usize>,
    /// Per branch, footprint rays on which it lies in front of the fruit.
    pub occluder_pixels: Vec<usize>,
    /// `1 − visible / footprint`.
    pub occlusion_ratio: f64,
}

/// Unit-speed ray from the camera center through a pixel center.
fn pixel_ray(u: usize, v: usize, k: &CameraIntrinsics<f64>) -> Point3<f64> {
    Point3::new((u as f64 - k.u0) / k.f, (v as f64 - k.v0) / k.f, 1.0).normalized().expect("pixel ray is never zero")
}

/// Distance along a unit ray from the origin to the first ellipsoid hit.
pub fn hit_ellipsoid(dir: &Point3<f64>, e: &Ellipsoid) -> Option<f64> {
    let [a, b, c] = e.semi_axes;
    let q = Point3::new(dir.x / a, dir.y / b, dir.z / c);
    let o = Point3::new(-e.center.x / a, -e.center.y / b, -e.center.z / c);
    let qa = q.dot(&q);
    let qb = 2.0 * q.dot(&o);
    let qc = o.dot(&o) - 1.0;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)].into_iter().find(|t| *t > 0.0)
}

pub fn hit_sphere(dir: &Point3<f64>, s: &Sphere) -> Option<f64> {
    hit_ellipsoid(dir, &Ellipsoid { center: s.center, semi_axes: [s.radius; 3], color: s.color })
}

/// Distance along a unit ray from the origin to a capped cylinder.
pub fn hit_cylinder(dir: &Point3<f64>, c: &Cylinder) -> Option<f64> {
    let ba = c.p2 - c.p1;
    let oc = -c.p1;
    let baba = ba.dot(&ba);
    let bard = ba.dot(dir);
    let baoc = ba.dot(&oc);
    let k2 = baba - bard * bard;
    let k1 = baba * oc.dot(dir) - baoc * bard;
    let k0 = baba * oc.dot(&oc) - baoc * baoc - c.radius * c.radius * baba;
    if k2.abs() < 1e-14 * baba {
        // Ray parallel to the axis: only the near cap can be hit.
        if k0 >= 0.0 {
            return None;
        }
        let t = (-baoc / bard).min((baba - baoc) / bard);
        return (t > 0.0).then_some(t);
    }
    let h = k1 * k1 - k2 * k0;
    if h < 0.0 {
        return None;
    }
    let h = h.sqrt();
    let t = (-k1 - h) / k2;
    let y = baoc + t * bard;
    if y > 0.0 && y < baba {
        return (t > 0.0).then_some(t);
    }
    if bard == 0.0 {
        return None;
    }
    let t = (if y < 0.0 { 0.0 } else { baba } - baoc) / bard;
    ((k1 + k2 * t).abs() < h && t > 0.0).then_some(t)
}

#[derive(Clone, Copy, PartialEq)]
enum Surface {
    Background,
    Fruit,
    Branch(usize),
    Leaf(usize),
}

struct PixelSample {
    depth: f64,
    surface: Surface,
    fruit_hit: bool,
    in_front: Vec<usize>,
}

fn check_in_front(spec: &SceneSpec) -> Result<(), SynthError> {
    let f = &spec.fruit;
    if f.center.z - f.semi_axes[2] <= 0.0 {
        return Err(SynthError::PrimitiveBehindCamera("fruit".into()));
    }
    for (i, b) in spec.branches.iter().enumerate() {
        if b.p1.z - b.radius <= 0.0 || b.p2.z - b.radius <= 0.0 {
            return Err(SynthError::PrimitiveBehindCamera(format!("branch {i}")));
        }
    }
    for (i, l) in spec.leaves.iter().enumerate() {
        if l.center.z - l.radius <= 0.0 {
            return Err(SynthError::PrimitiveBehindCamera(format!("leaf {i}")));
        }
    }
    if !(spec.background_depth > 0.0) {
        return Err(SynthError::PrimitiveBehindCamera("background".into()));
    }
    Ok(())
}

fn sample(dir: &Point3<f64>, spec: &SceneSpec) -> PixelSample {
    // Background is the plane z = background_depth.
    let mut best = (spec.background_depth / dir.z, Surface::Background);
    let fruit_t = hit_ellipsoid(dir, &spec.fruit);
    if let Some(t) = fruit_t {
        if t < best.0 {
            best = (t, Surface::Fruit);
        }
    }
    let mut in_front = Vec::new();
    for (i, b) in spec.branches.iter().enumerate() {
        if let Some(t) = hit_cylinder(dir, b) {
            if fruit_t.is_some_and(|tf| t < tf) {
                in_front.push(i);
            }
            if t < best.0 {
                best = (t, Surface::Branch(i));
            }
        }
    }
    for (i, l) in spec.leaves.iter().enumerate() {
        if let Some(t) = hit_sphere(dir, l) {
            if t < best.0 {
                best = (t, Surface::Leaf(i));
            }
        }
    }
    PixelSample { depth: best.0 * dir.z, surface: best.1, fruit_hit: fruit_t.is_some(), in_front }
}

/// Ray-cast a scene at pixel centers.
pub fn render(
    spec: &SceneSpec,
    k: &CameraIntrinsics<f64>,
) -> Result<(RgbImage, DepthImage<f64>, GroundTruth), SynthError> {
    check_in_front(spec)?;
    let (w, h) = (k.width as usize, k.height as usize);
    let samples: Vec<PixelSample> =
        (0..w * h).into_par_iter().map(|i| sample(&pixel_ray(i % w, i / w, k), spec)).collect();

    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut occluder_pixels = vec![0usize; spec.branches.len()];
    let mut footprint = BitMask::zeros(w, h);
    let mut visible = BitMask::zeros(w, h);
    let mut branch_visible = BitMask::zeros(w, h);
    for (i, s) in samples.iter().enumerate() {
        let (u, v) = (i % w, i / w);
        let color = match s.surface {
            Surface::Background => spec.background_color,
            Surface::Fruit => {
                visible.set(u, v, true);
                spec.fruit.color
            }
            Surface::Branch(b) => {
                branch_visible.set(u, v, true);
                spec.branches[b].color
            }
            Surface::Leaf(l) => spec.leaves[l].color,
        };
        rgb.extend_from_slice(&color.rgb());
        if s.fruit_hit {
            footprint.set(u, v, true);
            for &b in &s.in_front {
                occluder_pixels[b] += 1;
            }
        }
    }
    let depth =
        DepthImage::new(w, h, samples.iter().map(|s| s.depth).collect()).expect("ray depths are finite and positive");
    let rgb = RgbImage::new(w, h, rgb).expect("three bytes per pixel");

    let occluder = occluder_pixels
        .iter()
        .enumerate()
        .filter(|(_, n)| **n > 0)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);
    let total = footprint.count();
    let occlusion_ratio = if total == 0 { 0.0 } else { 1.0 - visible.count() as f64 / total as f64 };
    let center = spec.fruit.center;
    let center_px = unproject(center, k).map(|p| p.pixel()).expect("fruit center is in front of the camera");
    let center_dir = center.normalized().expect("fruit center is not the origin");
    let center_surface = hit_ellipsoid(&center_dir, &spec.fruit).map(|t| center_dir * t);
    let truth = GroundTruth {
        fruit_footprint: footprint,
        fruit_visible: visible,
        branch_visible,
        fruit_center: center,
        fruit_center_px: center_px,
        fruit_center_surface: center_surface,
        branch_axes: spec.branches.iter().map(|b| Segment3D::new(b.p1, b.p2)).collect(),
        occluder,
        occluder_pixels,
        occlusion_ratio,
    };
    Ok((rgb, depth, truth))
}

/// Translate both axis endpoints of one branch.
pub fn displace_branch(spec: &SceneSpec, branch_id: usize, delta: Point3<f64>) -> Result<SceneSpec, SynthError> {
    let count = spec.branches.len();
    let mut out = spec.clone();
    let b = out.branches.get_mut(branch_id).ok_or(SynthError::UnknownBranch { id: branch_id, count })?;
    b.p1 += delta;
    b.p2 += delta;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::segment_hsv;

    const ORANGE: Hsv = Hsv { h: 30.0, s: 0.9, v: 0.8 };
    const BARK: Hsv = Hsv { h: 30.0, s: 0.5, v: 0.3 };
    const SKY: Hsv = Hsv { h: 210.0, s: 0.1, v: 0.6 };

    fn fruit_only() -> SceneSpec {
        SceneSpec {
            seed: 0,
            fruit: Ellipsoid { center: Point3::new(0.0, 0.0, 1.0), semi_axes: [0.03, 0.03, 0.03], color: ORANGE },
            branches: vec![],
            leaves: vec![],
            background_depth: 2.5,
            background_color: SKY,
        }
    }

    #[test]
    fn fruit_without_branches_is_unoccluded() {
        let k = default_intrinsics();
        let (rgb, depth, gt) = render(&fruit_only(), &k).unwrap();
        assert_eq!(gt.occluder, None);
        assert_eq!(gt.occlusion_ratio, 0.0);
        assert_eq!(gt.fruit_visible, gt.fruit_footprint);
        // Radius 9 px at 1 m.
        let n = gt.fruit_footprint.count() as f64;
        assert!((n - std::f64::consts::PI * 81.0).abs() < 25.0, "{n}");
        assert!((depth.get(320, 240) - 0.97).abs() < 1e-12);
        assert_eq!(depth.get(0, 0), 2.5);
        assert_eq!(segment_hsv(&rgb, &FRUIT_HSV), gt.fruit_visible);
        let surface = gt.fruit_center_surface.unwrap();
        assert!((surface.z - 0.97).abs() < 1e-12);
    }

    #[test]
    fn branch_across_the_center_occludes() {
        let k = default_intrinsics();
        let mut spec = fruit_only();
        spec.branches.push(Cylinder {
            p1: Point3::new(-0.2, 0.0, 0.8),
            p2: Point3::new(0.2, 0.0, 0.8),
            radius: 0.01,
            color: BARK,
        });
        let (rgb, _, gt) = render(&spec, &k).unwrap();
        assert_eq!(gt.occluder, Some(0));
        assert!(gt.occlusion_ratio > 0.0 && gt.occlusion_ratio < 1.0);
        let exact = 1.0 - gt.fruit_visible.count() as f64 / gt.fruit_footprint.count() as f64;
        assert_eq!(gt.occlusion_ratio, exact);
        assert_eq!(segment_hsv(&rgb, &BRANCH_HSV), gt.branch_visible);
        assert_eq!(segment_hsv(&rgb, &FRUIT_HSV), gt.fruit_visible);
    }

    #[test]
    fn cylinder_caps_and_body() {
        let c = Cylinder { p1: Point3::new(0.0, 0.0, 1.0), p2: Point3::new(0.0, 0.0, 2.0), radius: 0.1, color: BARK };
        // Looking down the axis hits the near cap.
        assert!((hit_cylinder(&Point3::unit_z(), &c).unwrap() - 1.0).abs() < 1e-12);
        let side = Cylinder { p1: Point3::new(-1.0, 0.0, 1.0), p2: Point3::new(1.0, 0.0, 1.0), ..c };
        assert!((hit_cylinder(&Point3::unit_z(), &side).unwrap() - 0.9).abs() < 1e-12);
        let miss = Point3::new(0.2, 0.0, 1.0).normalized().unwrap();
        assert!(hit_cylinder(
            &miss,
            &Cylinder { p1: Point3::new(0.0, -1.0, 1.0), p2: Point3::new(0.0, 1.0, 1.0), ..c }
        )
        .is_none());
    }

    #[test]
    fn rendering_is_deterministic() {
        let k = default_intrinsics();
        let spec = random_scene(7, Difficulty::Cluttered);
        let a = render(&spec, &k).unwrap();
        let b = render(&spec, &k).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn displacement() {
        let spec = random_scene(3, Difficulty::SingleBranch);
        assert_eq!(displace_branch(&spec, 0, Point3::zero()).unwrap(), spec);
        let moved = displace_branch(&spec, 0, Point3::new(0.1, 0.0, 0.0)).unwrap();
        assert!((moved.branches[0].p1.x - spec.branches[0].p1.x - 0.1).abs() < 1e-12);
        assert_eq!(displace_branch(&spec, 5, Point3::zero()), Err(SynthError::UnknownBranch { id: 5, count: 1 }));
    }

    #[test]
    fn rejects_primitives_behind_the_camera() {
        let mut spec = fruit_only();
        spec.fruit.center.z = -1.0;
        assert!(matches!(render(&spec, &default_intrinsics()), Err(SynthError::PrimitiveBehindCamera(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = random_scene(11, Difficulty::MultiBranch);
        let json = serde_json::to_string(&spec).unwrap();
        let back: SceneSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}

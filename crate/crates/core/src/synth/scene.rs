//! Seeded random scenes.
//!
//! The first branch is always the occluder: it crosses the line of sight to the
//! fruit somewhere between camera and fruit. Distractor branches and leaves are
//! kept well away from the fruit's viewing cone, or sit behind the fruit, and
//! are never confusable with the occluder in the image. Candidates are rendered
//! and redrawn until the occlusion ratio lands in `[0.1, 0.5]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{project, unproject, CameraIntrinsics, PixelDepth, Point3, Vec2};
use crate::hough::{is_similar, Segment2D};

use super::{default_intrinsics, render, Cylinder, Ellipsoid, Hsv, SceneSpec, Sphere};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    SingleBranch,
    MultiBranch,
    Cluttered,
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_branch" => Ok(Self::SingleBranch),
            "multi_branch" => Ok(Self::MultiBranch),
            "cluttered" => Ok(Self::Cluttered),
            other => Err(format!("unknown difficulty {other:?} (expected single_branch, multi_branch or cluttered)")),
        }
    }
}

const RATIO_RANGE: (f64, f64) = (0.1, 0.5);
/// Endpoints and fruit stay this many pixels inside the image.
const MARGIN_PX: f64 = 30.0;
const BACKGROUND: Hsv = Hsv { h: 210.0, s: 0.1, v: 0.6 };

fn in_image(p: &Point3<f64>, k: &CameraIntrinsics<f64>) -> bool {
    unproject(*p, k).is_ok_and(|q| {
        q.u >= MARGIN_PX
            && q.v >= MARGIN_PX
            && q.u <= f64::from(k.width) - 1.0 - MARGIN_PX
            && q.v <= f64::from(k.height) - 1.0 - MARGIN_PX
    })
}

fn fruit(rng: &mut ChaCha8Rng, k: &CameraIntrinsics<f64>) -> Ellipsoid {
    let z = rng.gen_range(0.6..1.2);
    let u = k.u0 + rng.gen_range(-150.0..150.0);
    let v = k.v0 + rng.gen_range(-100.0..100.0);
    let a = rng.gen_range(0.025..0.035);
    let b = rng.gen_range(0.025..0.035);
    Ellipsoid {
        center: project(PixelDepth::new(u, v, z), k),
        semi_axes: [a, b, 0.5 * (a + b)],
        color: Hsv {
            h: rng.gen_range(15.0..45.0),
            s: rng.gen_range(0.75..0.95),
            // Lighting changes only scale the value channel.
            v: rng.gen_range(0.55..0.95),
        },
    }
}

fn bark(rng: &mut ChaCha8Rng) -> Hsv {
    Hsv { h: rng.gen_range(22.0..38.0), s: rng.gen_range(0.35..0.6), v: rng.gen_range(0.15..0.4) }
}

/// Straight branch through `q` with in-image direction `phi` and depth slope.
fn branch_through(rng: &mut ChaCha8Rng, q: Point3<f64>, phi: f64, radius: f64) -> Cylinder {
    let slope = rng.gen_range(-0.3..0.3);
    let dir = Point3::new(phi.cos(), phi.sin(), slope).normalized().expect("nonzero direction");
    let l1 = rng.gen_range(0.12..0.3);
    let l2 = rng.gen_range(0.12..0.3);
    Cylinder { p1: q - dir * l1, p2: q + dir * l2, radius, color: bark(rng) }
}

fn occluder(rng: &mut ChaCha8Rng, fruit: &Ellipsoid, k: &CameraIntrinsics<f64>) -> Option<Cylinder> {
    let zf = fruit.center.z;
    let zb = rng.gen_range((zf - 0.4).max(0.35)..zf - 0.12);
    let scale = zb / zf;
    let phi = rng.gen_range(0.0..std::f64::consts::PI);
    let across = Point3::new(-phi.sin(), phi.cos(), 0.0);
    let r_fruit = fruit.semi_axes[0].max(fruit.semi_axes[1]);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let offset = side * rng.gen_range(0.3..1.0) * r_fruit * scale;
    let q = fruit.center * scale + across * offset;
    let radius = rng.gen_range(0.006..0.012);
    let c = branch_through(rng, q, phi, radius);
    (in_image(&c.p1, k) && in_image(&c.p2, k)).then_some(c)
}

/// Smallest clearance between sampled points of a segment and the fruit's
/// viewing cone, widened to twice the fruit radius.
fn cone_clearance(p1: &Point3<f64>, p2: &Point3<f64>, fruit: &Ellipsoid) -> f64 {
    let axis = fruit.center.normalized().expect("fruit is in front of the camera");
    let len = fruit.center.norm();
    let r_fruit = fruit.semi_axes[0].max(fruit.semi_axes[1]);
    (0..=50)
        .map(|i| {
            let p = p1.lerp(p2, i as f64 / 50.0);
            let t = p.dot(&axis);
            let radial = (p - axis * t).norm();
            radial - 2.0 * r_fruit * (t / len).max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

fn image_line(c: &Cylinder, k: &CameraIntrinsics<f64>) -> Option<Segment2D<f64>> {
    let a = unproject(c.p1, k).ok()?.pixel();
    let b = unproject(c.p2, k).ok()?.pixel();
    Segment2D::from_endpoints(a, b, 0)
}

fn random_point_at(rng: &mut ChaCha8Rng, z: f64, k: &CameraIntrinsics<f64>) -> Point3<f64> {
    let u = rng.gen_range(MARGIN_PX..f64::from(k.width) - MARGIN_PX);
    let v = rng.gen_range(MARGIN_PX..f64::from(k.height) - MARGIN_PX);
    project(PixelDepth::new(u, v, z), k)
}

fn distractor(
    rng: &mut ChaCha8Rng,
    fruit: &Ellipsoid,
    occluder: &Cylinder,
    k: &CameraIntrinsics<f64>,
) -> Option<Cylinder> {
    let zf = fruit.center.z;
    let behind = rng.gen_bool(0.5);
    let z = if behind { rng.gen_range(zf + 0.2..zf + 0.5) } else { rng.gen_range(0.4..zf - 0.05) };
    let q = random_point_at(rng, z, k);
    let radius = rng.gen_range(0.006..0.015);
    let phi = rng.gen_range(0.0..std::f64::consts::PI);
    let c = branch_through(rng, q, phi, radius);
    if !(in_image(&c.p1, k) && in_image(&c.p2, k)) {
        return None;
    }
    let clear = if behind {
        c.p1.z.min(c.p2.z) > zf + fruit.semi_axes[2] + 0.1
    } else {
        cone_clearance(&c.p1, &c.p2, fruit) > 0.12 + radius
    };
    let (a, b) = (image_line(&c, k)?, image_line(occluder, k)?);
    let distinct = !is_similar(&a, &b, 40.0, 40f64.to_radians());
    (clear && distinct).then_some(c)
}

fn leaf(rng: &mut ChaCha8Rng, fruit: &Ellipsoid, k: &CameraIntrinsics<f64>) -> Option<Sphere> {
    let z = rng.gen_range(0.4..fruit.center.z + 0.4);
    let center = random_point_at(rng, z, k);
    let radius = rng.gen_range(0.02..0.04);
    let clear = center.z > fruit.center.z + fruit.semi_axes[2] + radius + 0.05
        || cone_clearance(&center, &center, fruit) > radius + 0.1;
    clear.then_some(Sphere {
        center,
        radius,
        color: Hsv { h: rng.gen_range(90.0..150.0), s: rng.gen_range(0.5..0.9), v: rng.gen_range(0.3..0.8) },
    })
}

fn draw(rng: &mut ChaCha8Rng, seed: u64, difficulty: Difficulty, k: &CameraIntrinsics<f64>) -> Option<SceneSpec> {
    let fruit = fruit(rng, k);
    let occ = occluder(rng, &fruit, k)?;
    let mut branches = vec![occ];
    let mut leaves = Vec::new();
    if difficulty != Difficulty::SingleBranch {
        let n = rng.gen_range(1..=4);
        while branches.len() <= n {
            if let Some(d) = distractor(rng, &fruit, &occ, k) {
                branches.push(d);
            }
        }
    }
    if difficulty == Difficulty::Cluttered {
        let n = rng.gen_range(2..=6);
        while leaves.len() < n {
            if let Some(l) = leaf(rng, &fruit, k) {
                leaves.push(l);
            }
        }
    }
    Some(SceneSpec { seed, fruit, branches, leaves, background_depth: 2.5, background_color: BACKGROUND })
}

/// Reproducible scene for [`default_intrinsics`].
pub fn random_scene(seed: u64, difficulty: Difficulty) -> SceneSpec {
    random_scene_with(seed, difficulty, &default_intrinsics())
}

/// Reproducible scene whose ground-truth occlusion ratio, measured by
/// rendering with `k`, lies in `[0.1, 0.5]` with branch 0 as the occluder.
pub fn random_scene_with(seed: u64, difficulty: Difficulty, k: &CameraIntrinsics<f64>) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let Some(spec) = draw(&mut rng, seed, difficulty, k) else {
            continue;
        };
        let Ok((_, _, truth)) = render(&spec, k) else {
            continue;
        };
        let fruit_px: Vec2<f64> = truth.fruit_center_px;
        let fruit_inside = fruit_px.u >= MARGIN_PX * 2.0
            && fruit_px.v >= MARGIN_PX * 2.0
            && fruit_px.u <= f64::from(k.width) - MARGIN_PX * 2.0
            && fruit_px.v <= f64::from(k.height) - MARGIN_PX * 2.0;
        if fruit_inside && truth.occluder == Some(0) && (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&truth.occlusion_ratio)
        {
            return spec;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        for d in [Difficulty::SingleBranch, Difficulty::MultiBranch, Difficulty::Cluttered] {
            assert_eq!(random_scene(42, d), random_scene(42, d));
        }
        assert_ne!(random_scene(1, Difficulty::SingleBranch), random_scene(2, Difficulty::SingleBranch));
    }

    #[test]
    fn branch_counts() {
        for seed in 0..20 {
            assert_eq!(random_scene(seed, Difficulty::SingleBranch).branches.len(), 1);
            let n = random_scene(seed, Difficulty::MultiBranch).branches.len();
            assert!((2..=5).contains(&n));
            let c = random_scene(seed, Difficulty::Cluttered);
            assert!(!c.leaves.is_empty());
        }
    }

    #[test]
    fn difficulty_names() {
        assert_eq!("cluttered".parse::<Difficulty>(), Ok(Difficulty::Cluttered));
        assert!("hard".parse::<Difficulty>().is_err());
    }
}

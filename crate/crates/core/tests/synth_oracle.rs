use fruitpush::geometry::Point3;
use fruitpush::imaging::segment_hsv;
use fruitpush::pipeline::{run_pipeline, PipelineConfig, Status};
use fruitpush::synth::{
    default_intrinsics, displace_branch, random_scene, render, Difficulty, Ellipsoid, BRANCH_HSV, FRUIT_HSV,
};
use fruitpush::Segment3Dd;

/// Depth of the first hit of the ray through pixel (u, v), solved directly.
fn ellipsoid_depth(u: usize, v: usize, e: &Ellipsoid) -> Option<f64> {
    let k = default_intrinsics();
    let d = [(u as f64 - k.u0) / k.f, (v as f64 - k.v0) / k.f, 1.0];
    let c = [e.center.x, e.center.y, e.center.z];
    let (mut qa, mut qb, mut qc) = (0.0, 0.0, -1.0);
    for i in 0..3 {
        let s = e.semi_axes[i] * e.semi_axes[i];
        qa += d[i] * d[i] / s;
        qb += -2.0 * d[i] * c[i] / s;
        qc += c[i] * c[i] / s;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    // With d.z = 1 the ray parameter is the depth.
    (disc >= 0.0).then(|| (-qb - disc.sqrt()) / (2.0 * qa))
}

fn axis_error(a: &Segment3Dd, b: &Segment3Dd) -> (f64, f64) {
    let straight = a.p1.distance(&b.p1).max(a.p2.distance(&b.p2));
    let crossed = a.p1.distance(&b.p2).max(a.p2.distance(&b.p1));
    let cos = a.direction().unwrap().dot(&b.direction().unwrap()).abs().min(1.0);
    (straight.min(crossed), cos.acos().to_degrees())
}

#[test]
fn rendered_fruit_depth_is_analytic() {
    let k = default_intrinsics();
    for seed in 0..4 {
        let spec = random_scene(seed, Difficulty::Cluttered);
        let (_, depth, gt) = render(&spec, &k).unwrap();
        for (u, v) in gt.fruit_visible.ones_iter() {
            let z = ellipsoid_depth(u, v, &spec.fruit).expect("visible fruit pixel hits the fruit");
            assert!((depth.get(u, v) - z).abs() < 1e-6, "seed {seed} at ({u}, {v})");
        }
        let ratio = 1.0 - gt.fruit_visible.count() as f64 / gt.fruit_footprint.count() as f64;
        assert_eq!(gt.occlusion_ratio, ratio);
    }
}

#[test]
fn own_color_ranges_recover_footprints() {
    let k = default_intrinsics();
    for (seed, d) in [(0, Difficulty::SingleBranch), (1, Difficulty::MultiBranch), (2, Difficulty::Cluttered)] {
        let (rgb, _, gt) = render(&random_scene(seed, d), &k).unwrap();
        assert!(segment_hsv(&rgb, &FRUIT_HSV).iou(&gt.fruit_visible).unwrap() > 0.99);
        assert!(segment_hsv(&rgb, &BRANCH_HSV).iou(&gt.branch_visible).unwrap() > 0.99);
    }
}

#[test]
fn generated_occlusion_stays_partial() {
    let k = default_intrinsics();
    for seed in 0..100 {
        let spec = random_scene(seed, Difficulty::MultiBranch);
        let (_, _, gt) = render(&spec, &k).unwrap();
        assert!((0.1..=0.5).contains(&gt.occlusion_ratio), "seed {seed}: {}", gt.occlusion_ratio);
        assert!(gt.occluder.is_some_and(|o| o < spec.branches.len()));
        assert!((0.6..=1.2).contains(&spec.fruit.center.z));
    }
}

#[test]
fn planned_push_does_not_increase_occlusion() {
    let cfg = PipelineConfig::default();
    for seed in 20..26 {
        let spec = random_scene(seed, Difficulty::SingleBranch);
        let (rgb, depth, gt) = render(&spec, &cfg.intrinsics).unwrap();
        let plan = run_pipeline(&cfg, &rgb, &depth).unwrap().plan.expect("occluded scene has a plan");
        let moved = displace_branch(&spec, gt.occluder.unwrap(), plan.displacement()).unwrap();
        let (_, _, after) = render(&moved, &cfg.intrinsics).unwrap();
        assert!(after.occlusion_ratio <= gt.occlusion_ratio, "seed {seed}");
        assert_eq!(displace_branch(&spec, 0, Point3::zero()).unwrap(), spec);
    }
}

#[test]
fn selected_line_lies_on_the_occluder() {
    let cfg = PipelineConfig::default();
    for seed in 40..46 {
        let spec = random_scene(seed, Difficulty::SingleBranch);
        let (rgb, depth, gt) = render(&spec, &cfg.intrinsics).unwrap();
        let (rgb0, depth0) = (rgb.clone(), depth.clone());
        let report = run_pipeline(&cfg, &rgb, &depth).unwrap();
        assert_eq!(rgb, rgb0);
        assert_eq!(depth, depth0);
        assert_eq!(report.status, Status::Plan);
        let (dist, angle) = axis_error(&report.plan.unwrap().line, &gt.branch_axes[gt.occluder.unwrap()]);
        assert!(dist < 0.02 && angle < 5.0, "seed {seed}: {dist:.4} m, {angle:.2} deg");
    }
}

#[test]
fn unoccluded_fruit_is_clear() {
    let cfg = PipelineConfig::default();
    let mut spec = random_scene(3, Difficulty::SingleBranch);
    spec.branches.clear();
    let (rgb, depth, gt) = render(&spec, &cfg.intrinsics).unwrap();
    assert_eq!(gt.occluder, None);
    assert_eq!(gt.occlusion_ratio, 0.0);
    let report = run_pipeline(&cfg, &rgb, &depth).unwrap();
    assert_eq!(report.status, Status::Clear);
    assert!(report.plan.is_none());
}

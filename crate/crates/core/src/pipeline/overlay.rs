//! Annotated copy of the input image.

use crate::decision::project_segment;
use crate::geometry::{unproject, Vec2};
use crate::hough::Segment2D;
use crate::imaging::{segment_hsv, RgbImage};

use super::PipelineReport;

pub struct OverlayColors;

impl OverlayColors {
    pub const FILTERED: [u8; 3] = [255, 255, 0];
    pub const CANDIDATE: [u8; 3] = [0, 0, 255];
    pub const SELECTED: [u8; 3] = [0, 255, 0];
    pub const PUSH: [u8; 3] = [255, 0, 0];
    pub const FRUIT_TINT: [u8; 3] = [255, 0, 255];
}

fn put(img: &mut RgbImage, u: i64, v: i64, c: [u8; 3]) {
    if u >= 0 && v >= 0 && (u as usize) < img.width() && (v as usize) < img.height() {
        img.set(u as usize, v as usize, c);
    }
}

fn draw_line(img: &mut RgbImage, a: Vec2<f64>, b: Vec2<f64>, c: [u8; 3]) {
    let steps = (b - a).norm().ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (u, v) = (a.u + (b.u - a.u) * t, a.v + (b.v - a.v) * t);
        // Two pixels thick.
        for (du, dv) in [(0.0, 0.0), (0.5, 0.5)] {
            put(img, (u + du).round() as i64, (v + dv).round() as i64, c);
        }
    }
}

fn draw_disk(img: &mut RgbImage, p: Vec2<f64>, r: i64, c: [u8; 3]) {
    let (cu, cv) = (p.u.round() as i64, p.v.round() as i64);
    for dv in -r..=r {
        for du in -r..=r {
            if du * du + dv * dv <= r * r {
                put(img, cu + du, cv + dv, c);
            }
        }
    }
}

fn draw_segment(img: &mut RgbImage, s: Option<Segment2D<f64>>, c: [u8; 3]) {
    if let Some(s) = s {
        draw_line(img, s.p1, s.p2, c);
    }
}

/// Fruit pixels tinted, detected lines yellow, candidates blue, the selected
/// line green, the push point and view-gradient arrow red.
pub fn render_overlay(rgb: &RgbImage, report: &PipelineReport) -> RgbImage {
    let mut out = rgb.clone();
    let k = &report.intrinsics;
    let fruit = segment_hsv(rgb, &report.fruit_hsv);
    for (u, v) in fruit.ones_iter() {
        let p = out.get(u, v);
        let t = OverlayColors::FRUIT_TINT;
        let mix = |a: u8, b: u8| ((u16::from(a) + u16::from(b)) / 2) as u8;
        out.set(u, v, [mix(p[0], t[0]), mix(p[1], t[1]), mix(p[2], t[2])]);
    }
    for line in &report.lines {
        draw_segment(&mut out, project_segment(line, k), OverlayColors::FILTERED);
    }
    for c in &report.candidates {
        draw_segment(&mut out, Some(c.projected), OverlayColors::CANDIDATE);
    }
    if let Some(plan) = &report.plan {
        draw_segment(&mut out, project_segment(&plan.line, k), OverlayColors::SELECTED);
        if let Ok(p) = unproject(plan.push_point, k) {
            draw_disk(&mut out, p.pixel(), 4, OverlayColors::PUSH);
        }
    }
    let gradient = report.occlusion.as_ref().and_then(|o| o.view_gradient);
    if let (Some(g), Some(f)) = (gradient, &report.fruit) {
        let from = f.centroid_img;
        let to = Vec2::new(from.u + g.u * 40.0, from.v + g.v * 40.0);
        draw_line(&mut out, from, to, OverlayColors::PUSH);
        // Arrow head: two strokes at ±150° from the shaft.
        for s in [1.0f64, -1.0] {
            let (sin, cos) = (s * 150f64.to_radians()).sin_cos();
            let back = Vec2::new(g.u * cos - g.v * sin, g.u * sin + g.v * cos);
            draw_line(&mut out, to, Vec2::new(to.u + back.u * 10.0, to.v + back.v * 10.0), OverlayColors::PUSH);
        }
    }
    out
}

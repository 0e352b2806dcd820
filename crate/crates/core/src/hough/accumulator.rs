//! Deterministic (ρ, θ) Hough transform with segment extraction.
//!
//! Lines follow `ρ = u·cosθ + v·sinθ` with `θ ∈ [0, π)` and signed `ρ`. The
//! strongest accumulator cell is taken first; the mask is walked along its
//! line to find the longest run with gaps no wider than `max_gap`, the run is
//! refined by a total-least-squares fit over the pixels of the stroke, and
//! those pixels are withdrawn from the accumulator before the next peak.

use std::collections::BinaryHeap;

use crate::geometry::Vec2;
use crate::imaging::BitMask;
use crate::scalar::Real;

use super::{HoughParams, Segment2D};

/// Upper bound on segments per image; keeps cluttered masks bounded.
const MAX_SEGMENTS: usize = 64;

struct Accumulator<T> {
    cos: Vec<T>,
    sin: Vec<T>,
    rho_res: T,
    rho_offset: i64,
    n_rho: usize,
    votes: Vec<u32>,
}

impl<T: Real> Accumulator<T> {
    fn new(width: usize, height: usize, rho_res: T, theta_res: T) -> Self {
        let n_theta = (T::PI() / theta_res).round().to_usize().unwrap_or(180).max(1);
        let step = T::PI() / T::of_usize(n_theta);
        let (cos, sin) = (0..n_theta)
            .map(|i| {
                let (s, c) = (step * T::of_usize(i)).sin_cos();
                (c, s)
            })
            .unzip();
        let diag = T::of_usize(width).hypot(T::of_usize(height));
        let rho_offset = (diag / rho_res).ceil().to_i64().unwrap_or(0) + 1;
        let n_rho = 2 * rho_offset as usize + 1;
        Self { cos, sin, rho_res, rho_offset, n_rho, votes: vec![0; n_theta * n_rho] }
    }

    fn n_theta(&self) -> usize {
        self.cos.len()
    }

    fn rho_index(&self, rho: T) -> usize {
        ((rho / self.rho_res).round().to_i64().unwrap_or(0) + self.rho_offset) as usize
    }

    fn vote(&mut self, u: usize, v: usize, delta: i32) {
        let (uf, vf) = (T::of_usize(u), T::of_usize(v));
        for t in 0..self.n_theta() {
            let r = self.rho_index(uf * self.cos[t] + vf * self.sin[t]);
            let cell = &mut self.votes[t * self.n_rho + r];
            *cell = cell.saturating_add_signed(delta);
        }
    }

    fn line(&self, cell: usize) -> (T, T) {
        let t = cell / self.n_rho;
        let r = (cell % self.n_rho) as i64 - self.rho_offset;
        let theta = T::PI() / T::of_usize(self.n_theta()) * T::of_usize(t);
        (T::of(r as f64) * self.rho_res, theta)
    }
}

/// Parameter interval of `p0 + t·dir` inside `[0, w) × [0, h)` (pixel-center box).
fn clip_to_image<T: Real>(p0: Vec2<T>, dir: Vec2<T>, w: usize, h: usize) -> Option<(T, T)> {
    let mut lo = T::neg_infinity();
    let mut hi = T::infinity();
    let half = T::of(0.5);
    for (p, d, size) in [(p0.u, dir.u, w), (p0.v, dir.v, h)] {
        let (min, max) = (-half, T::of_usize(size) - half);
        if d.abs() <= T::norm_epsilon() {
            if p < min || p > max {
                return None;
            }
        } else {
            let (a, b) = ((min - p) / d, (max - p) / d);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    (lo <= hi).then_some((lo, hi))
}

fn at<T: Real>(mask: &BitMask, p: Vec2<T>) -> bool {
    match (p.u.round().to_i64(), p.v.round().to_i64()) {
        (Some(u), Some(v)) => mask.get_checked(u, v),
        _ => false,
    }
}

/// Longest run of hits along the line, tolerating gaps up to `max_gap` steps.
fn longest_run<T: Real>(
    mask: &BitMask,
    p0: Vec2<T>,
    dir: Vec2<T>,
    normal: Vec2<T>,
    t_range: (T, T),
    max_gap: usize,
) -> Option<(T, T)> {
    let steps = (t_range.1 - t_range.0).floor().to_usize()?;
    let mut best: Option<(T, T)> = None;
    let mut current: Option<(T, T)> = None;
    let mut gap = 0usize;
    for i in 0..=steps {
        let t = t_range.0 + T::of_usize(i);
        let c = Vec2::new(p0.u + dir.u * t, p0.v + dir.v * t);
        let hit = [-1.0, 0.0, 1.0].iter().any(|s| {
            let s = T::of(*s);
            at(mask, Vec2::new(c.u + normal.u * s, c.v + normal.v * s))
        });
        if hit {
            current = Some(match current {
                None => (t, t),
                Some((a, _)) => (a, t),
            });
            gap = 0;
        } else if let Some(run) = current {
            gap += 1;
            if gap > max_gap {
                if best.is_none_or(|b| run.1 - run.0 > b.1 - b.0) {
                    best = Some(run);
                }
                current = None;
                gap = 0;
            }
        }
    }
    if let Some(run) = current {
        if best.is_none_or(|b| run.1 - run.0 > b.1 - b.0) {
            best = Some(run);
        }
    }
    best
}

/// Half-width of the stroke around the line, from the median perpendicular extent.
fn stroke_half_width<T: Real>(mask: &BitMask, p0: Vec2<T>, dir: Vec2<T>, normal: Vec2<T>, run: (T, T)) -> T {
    let mut widths = Vec::new();
    let len = (run.1 - run.0).to_usize().unwrap_or(0);
    let n_samples = (len / 3).clamp(1, 64);
    for i in 0..n_samples {
        let t = run.0 + (run.1 - run.0) * T::of_usize(2 * i + 1) / T::of_usize(2 * n_samples);
        let c = Vec2::new(p0.u + dir.u * t, p0.v + dir.v * t);
        let reach = |sign: T| {
            let mut s = 0usize;
            let mut misses = 0usize;
            let mut last = 0usize;
            while s < 64 && misses <= 1 {
                s += 1;
                let o = T::of_usize(s) * sign;
                if at(mask, Vec2::new(c.u + normal.u * o, c.v + normal.v * o)) {
                    last = s;
                    misses = 0;
                } else {
                    misses += 1;
                }
            }
            last
        };
        widths.push(reach(T::one()) + reach(-T::one()));
    }
    widths.sort_unstable();
    T::of_usize(widths[widths.len() / 2]) / T::of(2.0)
}

/// Normalize a line given by a point and a direction to `θ ∈ [0, π)`.
pub(crate) fn hough_params_of<T: Real>(point: Vec2<T>, dir: Vec2<T>) -> (T, T) {
    let normal = Vec2::new(-dir.v, dir.u);
    let mut theta = normal.v.atan2(normal.u);
    let mut rho = point.dot(&normal);
    while theta < T::zero() {
        theta = theta + T::PI();
        rho = -rho;
    }
    while theta >= T::PI() {
        theta = theta - T::PI();
        rho = -rho;
    }
    (rho, theta)
}

/// Principal direction and centroid of a pixel set.
fn fit_line<T: Real>(pixels: &[(usize, usize)]) -> Option<(Vec2<T>, Vec2<T>)> {
    if pixels.len() < 2 {
        return None;
    }
    let n = T::of_usize(pixels.len());
    let (su, sv) =
        pixels.iter().fold((T::zero(), T::zero()), |(a, b), &(u, v)| (a + T::of_usize(u), b + T::of_usize(v)));
    let c = Vec2::new(su / n, sv / n);
    let (mut suu, mut suv, mut svv) = (T::zero(), T::zero(), T::zero());
    for &(u, v) in pixels {
        let (du, dv) = (T::of_usize(u) - c.u, T::of_usize(v) - c.v);
        suu = suu + du * du;
        suv = suv + du * dv;
        svv = svv + dv * dv;
    }
    let angle = (T::of(2.0) * suv).atan2(suu - svv) / T::of(2.0);
    let (s, co) = angle.sin_cos();
    Some((c, Vec2::new(co, s)))
}

struct Stroke<T> {
    pixels: Vec<(usize, usize)>,
    half_width: T,
}

/// Pixels of the longest gap-bounded run along a line, widened to the stroke.
fn trace_stroke<T: Real>(
    mask: &BitMask,
    p0: Vec2<T>,
    dir: Vec2<T>,
    max_gap: usize,
    min_length: T,
) -> Option<Stroke<T>> {
    let (w, h) = mask.dims();
    let normal = Vec2::new(-dir.v, dir.u);
    let t_range = clip_to_image(p0, dir, w, h)?;
    let run = longest_run(mask, p0, dir, normal, t_range, max_gap)?;
    if run.1 - run.0 < min_length {
        return None;
    }
    let measured = stroke_half_width(mask, p0, dir, normal, run);
    let band = measured + T::one();
    let pixels = mask
        .ones_iter()
        .filter(|&(u, v)| {
            let d = Vec2::new(T::of_usize(u), T::of_usize(v)) - p0;
            let t = d.dot(&dir);
            d.dot(&normal).abs() <= band && t >= run.0 - band && t <= run.1 + band
        })
        .collect();
    Some(Stroke { pixels, half_width: measured })
}

/// Detect line segments in a binary mask.
pub fn hough_segments_2d<T: Real>(mask: &BitMask, params: &HoughParams<T>) -> Vec<Segment2D<T>> {
    let (w, h) = mask.dims();
    let mut remaining = mask.clone();
    let mut acc = Accumulator::new(w, h, params.rho_res, params.theta_res);
    for (u, v) in mask.ones_iter() {
        acc.vote(u, v, 1);
    }
    let threshold = params.vote_threshold.max(1) as u32;
    // Max-heap on (votes, reversed cell index) so ties resolve to the lowest cell.
    let mut heap: BinaryHeap<(u32, std::cmp::Reverse<usize>)> = acc
        .votes
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= threshold)
        .map(|(i, v)| (*v, std::cmp::Reverse(i)))
        .collect();
    let mut dead = vec![false; acc.votes.len()];
    let max_gap = params.max_gap.to_usize().unwrap_or(0);
    let mut out = Vec::new();

    while let Some((votes, std::cmp::Reverse(cell))) = heap.pop() {
        if out.len() >= MAX_SEGMENTS {
            break;
        }
        if dead[cell] {
            continue;
        }
        let current = acc.votes[cell];
        if current != votes {
            if current >= threshold {
                heap.push((current, std::cmp::Reverse(cell)));
            }
            continue;
        }
        dead[cell] = true;
        let (rho, theta) = acc.line(cell);
        let (sin, cos) = theta.sin_cos();
        let normal = Vec2::new(cos, sin);
        let dir = Vec2::new(-sin, cos);
        let p0 = Vec2::new(normal.u * rho, normal.v * rho);
        let Some(mut found) = trace_stroke(&remaining, p0, dir, max_gap, params.min_length) else {
            continue;
        };
        // Tied peaks can sit at a slight tilt across a thick stroke; trace
        // again along the pixel fit so the stroke leaves in one piece.
        if let Some(refined) =
            fit_line::<T>(&found.pixels).and_then(|(c, d)| trace_stroke(&remaining, c, d, max_gap, params.min_length))
        {
            if refined.pixels.len() >= found.pixels.len() {
                found = refined;
            }
        }
        let Stroke { pixels: stroke, half_width: measured } = found;
        for &(u, v) in &stroke {
            remaining.set(u, v, false);
            acc.vote(u, v, -1);
        }
        let Some((center, fdir)) = fit_line::<T>(&stroke) else {
            continue;
        };
        // Endpoints: extreme projections of the stroke onto the fitted line.
        let (mut tmin, mut tmax) = (T::infinity(), T::neg_infinity());
        for &(u, v) in &stroke {
            let t = (Vec2::new(T::of_usize(u), T::of_usize(v)) - center).dot(&fdir);
            tmin = tmin.min(t);
            tmax = tmax.max(t);
        }
        if tmax - tmin < params.min_length {
            continue;
        }
        let p1 = Vec2::new(center.u + fdir.u * tmin, center.v + fdir.v * tmin);
        let p2 = Vec2::new(center.u + fdir.u * tmax, center.v + fdir.v * tmax);
        let (rho, theta) = hough_params_of(center, fdir);
        out.push(Segment2D { p1, p2, rho, theta, votes: stroke.len(), half_width: measured + T::of(0.5) });
    }
    out
}

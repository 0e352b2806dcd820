//! Raster containers, color segmentation and mask algebra.

mod hsv;
pub mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::scalar::Real;

pub use hsv::{hsv_to_rgb, rgb_to_hsv, HsvRange};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImagingError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("mask has no foreground pixel")]
    EmptyMask,
    #[error("image has no nonzero-depth pixel")]
    EmptyImage,
    #[error("pixel ({u}, {v}) outside ROI of side {d_roi}")]
    OutOfRoi { u: f64, v: f64, d_roi: usize },
    #[error("ROI side {d_roi} does not fit a {width}x{height} image")]
    RoiTooLarge { d_roi: usize, width: usize, height: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        if pixels.len() != width * height * 3 {
            return Err(ImagingError::InvalidImage(format!("{} bytes for a {width}x{height} RGB image", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self { width, height, pixels: rgb.repeat(width * height) }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width + u);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, u: usize, v: usize, rgb: [u8; 3]) {
        let i = 3 * (v * self.width + u);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Row-major depth raster in meters; `0` means no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage<T> {
    width: usize,
    height: usize,
    depths: Vec<T>,
}

impl<T: Real> DepthImage<T> {
    pub fn new(width: usize, height: usize, depths: Vec<T>) -> Result<Self, ImagingError> {
        if depths.len() != width * height {
            return Err(ImagingError::InvalidImage(format!("{} depths for a {width}x{height} image", depths.len())));
        }
        if let Some(bad) = depths.iter().find(|z| !(z.is_finite() && **z >= T::zero())) {
            return Err(ImagingError::InvalidImage(format!("depth must be finite and non-negative, found {bad:?}")));
        }
        Ok(Self { width, height, depths })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, depths: vec![T::zero(); width * height] }
    }

    pub fn filled(width: usize, height: usize, z: T) -> Self {
        Self { width, height, depths: vec![z; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.depths
    }

    pub fn get(&self, u: usize, v: usize) -> T {
        self.depths[v * self.width + u]
    }

    /// Depth at a possibly out-of-range integer pixel; zero outside the raster.
    pub fn get_checked(&self, u: i64, v: i64) -> T {
        if u < 0 || v < 0 || u as usize >= self.width || v as usize >= self.height {
            T::zero()
        } else {
            self.get(u as usize, v as usize)
        }
    }

    /// Panics on negative or non-finite depth.
    pub fn set(&mut self, u: usize, v: usize, z: T) {
        assert!(z.is_finite() && z >= T::zero(), "invalid depth {z:?}");
        self.depths[v * self.width + u] = z;
    }

    /// `(u, v, z)` for every pixel with nonzero depth, row-major.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let w = self.width;
        self.depths.iter().enumerate().filter(|(_, z)| **z > T::zero()).map(move |(i, z)| (i % w, i / w, *z))
    }

    pub fn count_nonzero(&self) -> usize {
        self.depths.iter().filter(|z| **z > T::zero()).count()
    }
}

/// Row-major binary mask.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImagingError> {
        if bits.len() != width * height {
            return Err(ImagingError::InvalidImage(format!("{} bits for a {width}x{height} mask", bits.len())));
        }
        Ok(Self { width, height, bits })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn get_checked(&self, u: i64, v: i64) -> bool {
        u >= 0 && v >= 0 && (u as usize) < self.width && (v as usize) < self.height && self.get(u as usize, v as usize)
    }

    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.bits[v * self.width + u] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Foreground pixels, row-major.
    pub fn ones_iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(move |(i, _)| (i % w, i / w))
    }

    fn zip_with(&self, o: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self, ImagingError> {
        check_dims(self.dims(), o.dims())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&o.bits).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn and(&self, o: &Self) -> Result<Self, ImagingError> {
        self.zip_with(o, |a, b| a && b)
    }

    pub fn or(&self, o: &Self) -> Result<Self, ImagingError> {
        self.zip_with(o, |a, b| a || b)
    }

    /// Elementwise `|a − b|`.
    pub fn abs_diff(&self, o: &Self) -> Result<Self, ImagingError> {
        self.zip_with(o, |a, b| a != b)
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, o: &Self) -> Result<f64, ImagingError> {
        check_dims(self.dims(), o.dims())?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&o.bits) {
            inter += usize::from(*a && *b);
            union += usize::from(*a || *b);
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    /// Inclusive bounding box `(u_min, v_min, u_max, v_max)`.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        self.ones_iter().fold(None, |acc, (u, v)| {
            Some(match acc {
                None => (u, v, u, v),
                Some((a, b, c, d)) => (a.min(u), b.min(v), c.max(u), d.max(v)),
            })
        })
    }

    /// 8-connected components, largest first (ties by first pixel in row-major order).
    pub fn connected_components(&self) -> Vec<Vec<(usize, usize)>> {
        let (w, h) = self.dims();
        let mut seen = vec![false; w * h];
        let mut comps = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !self.bits[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut comp = Vec::new();
            while let Some(i) = stack.pop() {
                let (u, v) = (i % w, i / w);
                comp.push((u, v));
                for dv in -1i64..=1 {
                    for du in -1i64..=1 {
                        let (nu, nv) = (u as i64 + du, v as i64 + dv);
                        if self.get_checked(nu, nv) {
                            let j = nv as usize * w + nu as usize;
                            if !seen[j] {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
            comp.sort_unstable_by_key(|&(u, v)| (v, u));
            comps.push(comp);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].1.cmp(&b[0].1)).then(a[0].0.cmp(&b[0].0)));
        comps
    }

    /// Largest 8-connected component together with every other component that
    /// comes within `merge_gap` pixels (Chebyshev) of it. Occluders split a
    /// single fruit into pieces; the gap keeps those pieces together.
    pub fn largest_component(&self, merge_gap: usize) -> Self {
        let comps = self.connected_components();
        let mut out = Self::zeros(self.width, self.height);
        let Some(main) = comps.first() else {
            return out;
        };
        let bbox = |c: &[(usize, usize)]| {
            c.iter().fold((usize::MAX, usize::MAX, 0, 0), |(a, b, cc, d), &(u, v)| {
                (a.min(u), b.min(v), cc.max(u), d.max(v))
            })
        };
        let (mu0, mv0, mu1, mv1) = bbox(main);
        // Border pixels of the main component are enough for the gap test.
        let border: Vec<(usize, usize)> = main
            .iter()
            .copied()
            .filter(|&(u, v)| {
                [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(du, dv)| !self.get_checked(u as i64 + du, v as i64 + dv))
            })
            .collect();
        let g = merge_gap as i64;
        for (idx, comp) in comps.iter().enumerate() {
            let keep = idx == 0 || {
                let (a, b, c, d) = bbox(comp);
                let near_box = (a as i64) <= mu1 as i64 + g
                    && (c as i64) >= mu0 as i64 - g
                    && (b as i64) <= mv1 as i64 + g
                    && (d as i64) >= mv0 as i64 - g;
                near_box
                    && comp.iter().any(|&(u, v)| {
                        border
                            .iter()
                            .any(|&(bu, bv)| (u as i64 - bu as i64).abs() <= g && (v as i64 - bv as i64).abs() <= g)
                    })
            };
            if keep {
                for &(u, v) in comp {
                    out.set(u, v, true);
                }
            }
        }
        out
    }
}

fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<(), ImagingError> {
    if expected == got {
        Ok(())
    } else {
        Err(ImagingError::DimensionMismatch { expected, got })
    }
}

/// Square region of interest. Corners are inclusive-exclusive:
/// `u_br − u_tl = v_br − v_tl = d_roi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub u_tl: usize,
    pub v_tl: usize,
    pub u_br: usize,
    pub v_br: usize,
    pub d_roi: usize,
}

impl RoiBox {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.u_tl && u < self.u_br && v >= self.v_tl && v < self.v_br
    }

    /// Image coordinates to ROI coordinates; inverse of [`reinsert`] on integer pixels.
    pub fn to_local(&self, u: usize, v: usize) -> Option<(usize, usize)> {
        self.contains(u, v).then(|| (u - self.u_tl, v - self.v_tl))
    }
}

/// Mark every pixel whose HSV value falls inside `range`.
pub fn segment_hsv(img: &RgbImage, range: &HsvRange) -> BitMask {
    let bits: Vec<bool> =
        img.as_bytes().par_chunks_exact(3).map(|px| range.contains_rgb([px[0], px[1], px[2]])).collect();
    BitMask { width: img.width(), height: img.height(), bits }
}

/// Hadamard product of depth and mask.
pub fn apply_mask<T: Real>(depth: &DepthImage<T>, mask: &BitMask) -> Result<DepthImage<T>, ImagingError> {
    check_dims(depth.dims(), mask.dims())?;
    let depths = depth.as_slice().iter().zip(mask.as_slice()).map(|(z, m)| if *m { *z } else { T::zero() }).collect();
    Ok(DepthImage { width: depth.width, height: depth.height, depths })
}

/// Crop a `d_roi`-sided square around the bounding-box center of the masked
/// pixels that carry depth, shifted inward so it stays inside the image.
/// The crop is masked: pixels outside `mask` are zero.
pub fn crop_roi<T: Real>(
    d: &DepthImage<T>,
    mask: &BitMask,
    d_roi: usize,
) -> Result<(DepthImage<T>, RoiBox), ImagingError> {
    let masked = apply_mask(d, mask)?;
    let (w, h) = d.dims();
    if d_roi == 0 || d_roi > w || d_roi > h {
        return Err(ImagingError::RoiTooLarge { d_roi, width: w, height: h });
    }
    let (mut u0, mut v0, mut u1, mut v1) = (usize::MAX, usize::MAX, 0, 0);
    let mut any = false;
    for (u, v, _) in masked.nonzero() {
        any = true;
        u0 = u0.min(u);
        v0 = v0.min(v);
        u1 = u1.max(u);
        v1 = v1.max(v);
    }
    if !any {
        return Err(ImagingError::EmptyMask);
    }
    let corner = |lo: usize, hi: usize, size: usize| -> usize {
        // Center of the inclusive pixel range, then the box start.
        let start = (lo + hi + 1) as i64 / 2 - (d_roi / 2) as i64;
        start.clamp(0, (size - d_roi) as i64) as usize
    };
    let u_tl = corner(u0, u1, w);
    let v_tl = corner(v0, v1, h);
    let mut out = DepthImage::zeros(d_roi, d_roi);
    for y in 0..d_roi {
        for x in 0..d_roi {
            out.depths[y * d_roi + x] = masked.get(u_tl + x, v_tl + y);
        }
    }
    Ok((out, RoiBox { u_tl, v_tl, u_br: u_tl + d_roi, v_br: v_tl + d_roi, d_roi }))
}

/// Map an ROI-local (possibly sub-pixel) coordinate back into the image.
pub fn reinsert<T: Real>(p_roi: Vec2<T>, roi: &RoiBox) -> Result<Vec2<T>, ImagingError> {
    let d = T::of_usize(roi.d_roi);
    let inside = |c: T| c >= T::zero() && c < d;
    if !inside(p_roi.u) || !inside(p_roi.v) {
        return Err(ImagingError::OutOfRoi { u: p_roi.u.to_f64_lossy(), v: p_roi.v.to_f64_lossy(), d_roi: roi.d_roi });
    }
    Ok(Vec2::new(p_roi.u + T::of_usize(roi.u_tl), p_roi.v + T::of_usize(roi.v_tl)))
}

/// Mean pixel coordinate of the nonzero-depth pixels.
pub fn centroid<T: Real>(d: &DepthImage<T>) -> Result<Vec2<T>, ImagingError> {
    let (mut su, mut sv, mut n) = (0usize, 0usize, 0usize);
    for (u, v, _) in d.nonzero() {
        su += u;
        sv += v;
        n += 1;
    }
    if n == 0 {
        return Err(ImagingError::EmptyImage);
    }
    let n = T::of_usize(n);
    Ok(Vec2::new(T::of_usize(su) / n, T::of_usize(sv) / n))
}

/// Mean coordinate of the set pixels of a mask.
pub fn mask_centroid<T: Real>(m: &BitMask) -> Result<Vec2<T>, ImagingError> {
    let (mut su, mut sv, mut n) = (0usize, 0usize, 0usize);
    for (u, v) in m.ones_iter() {
        su += u;
        sv += v;
        n += 1;
    }
    if n == 0 {
        return Err(ImagingError::EmptyMask);
    }
    let n = T::of_usize(n);
    Ok(Vec2::new(T::of_usize(su) / n, T::of_usize(sv) / n))
}

/// `(max_u − min_u, max_v − min_v)` over nonzero-depth pixels.
pub fn extent<T: Real>(d: &DepthImage<T>) -> Result<(usize, usize), ImagingError> {
    binarize(d).bounding_box().map(|(a, b, c, e)| (c - a, e - b)).ok_or(ImagingError::EmptyImage)
}

/// Foreground wherever depth is positive.
pub fn binarize<T: Real>(d: &DepthImage<T>) -> BitMask {
    BitMask { width: d.width, height: d.height, bits: d.as_slice().iter().map(|z| *z > T::zero()).collect() }
}

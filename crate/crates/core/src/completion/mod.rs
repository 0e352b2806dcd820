//! Completing a partially visible fruit and deciding whether it is occluded.
//!
//! A [`FruitCompleter`] turns the visible ROI depth of a fruit into an
//! estimate of the complete fruit. [`AnalyticCompleter`] fits an ellipse to
//! the visible silhouette; [`ExternalCompleter`] reads an estimate produced
//! offline (for instance by a generative network).

pub mod ellipse;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, PixelDepth, Point3, Vec2};
use crate::imaging::{self, binarize, BitMask, DepthImage, ImagingError, RoiBox};
use crate::scalar::Real;

use ellipse::{fit_ellipse_ransac, Ellipse, RansacParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompletionError {
    #[error("{got} visible pixels, at least {needed} required")]
    InsufficientSupport { needed: usize, got: usize },
    #[error("no ellipse fits the visible pixels")]
    FitDegenerate,
    #[error("visible mask is empty")]
    EmptyVisibleMask,
    #[error("no valid depth near centroid pixel ({u:.1}, {v:.1})")]
    NoDepthAtCentroid { u: f64, v: f64 },
    #[error("occluded, but the missing region is centered on the fruit")]
    DegenerateGradient,
    #[error("completer returned {got:?}, expected {expected:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Estimates the complete fruit from its visible ROI depth.
///
/// Implementations return an image with the input's dimensions and must be
/// safe to call concurrently on distinct inputs.
pub trait FruitCompleter<T: Real>: Send + Sync {
    fn complete(&self, visible_roi: &DepthImage<T>) -> Result<DepthImage<T>, CompletionError>;
}

/// Ellipse-based completer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticCompleter {
    pub min_support: usize,
    pub ransac_iterations: usize,
    pub inlier_tol_px: f64,
    pub seed: u64,
}

impl Default for AnalyticCompleter {
    fn default() -> Self {
        Self { min_support: 20, ransac_iterations: 300, inlier_tol_px: 0.6, seed: 0x00c1_ea4e }
    }
}

impl AnalyticCompleter {
    /// Fitted ellipse of the visible silhouette, in ROI pixel coordinates.
    pub fn fit<T: Real>(&self, d_roi: &DepthImage<T>) -> Result<Ellipse<T>, CompletionError> {
        let mask = binarize(d_roi);
        let n = mask.count();
        if n < self.min_support {
            return Err(CompletionError::InsufficientSupport { needed: self.min_support, got: n });
        }
        let support: Vec<Vec2<T>> = mask.ones_iter().map(|(u, v)| Vec2::new(T::of_usize(u), T::of_usize(v))).collect();
        if is_collinear(&support) {
            return Err(CompletionError::FitDegenerate);
        }
        let boundary = silhouette_edges(&mask);
        let params = RansacParams {
            iterations: self.ransac_iterations,
            inlier_tol: T::of(self.inlier_tol_px),
            outside_penalty: T::of(2.0),
            ellipse_margin: T::of(0.1),
            seed: self.seed,
        };
        let max_axis = T::of_usize(d_roi.width().max(d_roi.height()));
        fit_ellipse_ransac(&boundary, &support, max_axis, &params).ok_or(CompletionError::FitDegenerate)
    }
}

impl<T: Real> FruitCompleter<T> for AnalyticCompleter {
    /// Rasterizes the fitted ellipse (pixel centers) united with the visible
    /// pixels, filled with the median visible depth.
    fn complete(&self, d_roi: &DepthImage<T>) -> Result<DepthImage<T>, CompletionError> {
        let e = self.fit(d_roi)?;
        let mut depths: Vec<T> = d_roi.nonzero().map(|(_, _, z)| z).collect();
        let fill = median(&mut depths);
        let (w, h) = d_roi.dims();
        let mut out = DepthImage::zeros(w, h);
        for v in 0..h {
            for u in 0..w {
                let inside = e.contains(Vec2::new(T::of_usize(u), T::of_usize(v)));
                if inside || d_roi.get(u, v) > T::zero() {
                    out.set(u, v, fill);
                }
            }
        }
        Ok(out)
    }
}

/// Reads the completed ROI depth from a 16-bit millimeter PNG written by an
/// external model. The visible input is only used for the shape check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalCompleter {
    pub path: PathBuf,
}

impl FruitCompleter<f64> for ExternalCompleter {
    fn complete(&self, visible_roi: &DepthImage<f64>) -> Result<DepthImage<f64>, CompletionError> {
        let d = imaging::io::load_depth_png(&self.path)?;
        if d.dims() != visible_roi.dims() {
            return Err(CompletionError::ShapeMismatch { expected: visible_roi.dims(), got: d.dims() });
        }
        Ok(d)
    }
}

fn median<T: Real>(xs: &mut [T]) -> T {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / T::of(2.0)
    }
}

fn is_collinear<T: Real>(pts: &[Vec2<T>]) -> bool {
    let n = T::of_usize(pts.len());
    let (mu, mv) = pts.iter().fold((T::zero(), T::zero()), |(a, b), p| (a + p.u, b + p.v));
    let (mu, mv) = (mu / n, mv / n);
    let (mut suu, mut suv, mut svv) = (T::zero(), T::zero(), T::zero());
    for p in pts {
        let (du, dv) = (p.u - mu, p.v - mv);
        suu = suu + du * du;
        suv = suv + du * dv;
        svv = svv + dv * dv;
    }
    let (suu, suv, svv) = (suu / n, suv / n, svv / n);
    let half_tr = (suu + svv) / T::of(2.0);
    let r = ((suu - svv) / T::of(2.0)).hypot(suv);
    // Smallest principal variance of a one-pixel-thick line is ~0.
    half_tr - r < T::of(0.05)
}

/// Sub-pixel silhouette samples: midpoints between each foreground pixel and
/// its 4-neighbours in the background. Edges against the raster border are
/// skipped since the fruit may continue beyond it.
fn silhouette_edges<T: Real>(mask: &BitMask) -> Vec<Vec2<T>> {
    let (w, h) = mask.dims();
    let half = T::of(0.5);
    let mut out = Vec::new();
    for (u, v) in mask.ones_iter() {
        for (du, dv) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nu, nv) = (u as i64 + du, v as i64 + dv);
            if nu < 0 || nv < 0 || nu as usize >= w || nv as usize >= h {
                continue;
            }
            if !mask.get(nu as usize, nv as usize) {
                out.push(Vec2::new(T::of_usize(u) + half * T::of(du as f64), T::of_usize(v) + half * T::of(dv as f64)));
            }
        }
    }
    out
}

/// Output of [`assess_occlusion`], in ROI pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionAssessment<T> {
    pub occluded: bool,
    /// `area(|M′ − M̂′|) / area(M′)`.
    pub ratio: T,
    #[serde(skip)]
    pub diff_mask: Option<BitMask>,
    pub estimated_centroid: Vec2<T>,
    pub diff_centroid: Option<Vec2<T>>,
    /// Unit vector from the estimated centroid toward the missing region.
    pub view_gradient: Option<Vec2<T>>,
}

/// Compare visible and estimated fruit masks against the threshold `r_o`.
pub fn assess_occlusion<T: Real>(
    visible_roi: &DepthImage<T>,
    estimated_roi: &DepthImage<T>,
    r_o: T,
) -> Result<OcclusionAssessment<T>, CompletionError> {
    let seen = binarize(visible_roi);
    let est = binarize(estimated_roi);
    let diff = seen.abs_diff(&est)?;
    let visible_area = seen.count();
    if visible_area == 0 {
        return Err(CompletionError::EmptyVisibleMask);
    }
    let ratio = T::of_usize(diff.count()) / T::of_usize(visible_area);
    let estimated_centroid = imaging::centroid(estimated_roi).map_err(|_| CompletionError::EmptyVisibleMask)?;
    let diff_centroid = imaging::mask_centroid(&diff).ok();
    let occluded = ratio > r_o;
    let view_gradient = if occluded {
        let dc = diff_centroid.ok_or(CompletionError::DegenerateGradient)?;
        Some((dc - estimated_centroid).normalized().ok_or(CompletionError::DegenerateGradient)?)
    } else {
        None
    };
    Ok(OcclusionAssessment { occluded, ratio, diff_mask: Some(diff), estimated_centroid, diff_centroid, view_gradient })
}

/// Estimated complete fruit, located in the image and the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedFruit<T> {
    pub estimated_depth: DepthImage<T>,
    pub centroid_roi: Vec2<T>,
    pub centroid_img: Vec2<T>,
    pub centroid_3d: Point3<T>,
    pub width_px: usize,
    pub height_px: usize,
}

/// Radius of the square window searched when the centroid pixel has no depth.
pub const CENTROID_DEPTH_WINDOW: i64 = 3;

/// Depth at the pixel nearest to `p`, or the closest nonzero depth within
/// [`CENTROID_DEPTH_WINDOW`] pixels (ties resolved row-major).
pub fn sample_depth_near<T: Real>(depth: &DepthImage<T>, p: Vec2<T>) -> Option<T> {
    let cu = p.u.round().to_i64()?;
    let cv = p.v.round().to_i64()?;
    let mut best: Option<(i64, T)> = None;
    for dv in -CENTROID_DEPTH_WINDOW..=CENTROID_DEPTH_WINDOW {
        for du in -CENTROID_DEPTH_WINDOW..=CENTROID_DEPTH_WINDOW {
            let z = depth.get_checked(cu + du, cv + dv);
            let d2 = du * du + dv * dv;
            if z > T::zero() && best.is_none_or(|(b, _)| d2 < b) {
                best = Some((d2, z));
            }
        }
    }
    best.map(|(_, z)| z)
}

/// Complete the fruit and place its centroid in the image and camera frame.
///
/// `depth_full` is sampled at the reinserted centroid for the 3D position.
pub fn build_completed_fruit<T: Real, C: FruitCompleter<T> + ?Sized>(
    visible_roi: &DepthImage<T>,
    roi: &RoiBox,
    depth_full: &DepthImage<T>,
    k: &CameraIntrinsics<T>,
    completer: &C,
) -> Result<CompletedFruit<T>, CompletionError> {
    if visible_roi.count_nonzero() == 0 {
        return Err(CompletionError::EmptyVisibleMask);
    }
    let estimated = completer.complete(visible_roi)?;
    if estimated.dims() != visible_roi.dims() {
        return Err(CompletionError::ShapeMismatch { expected: visible_roi.dims(), got: estimated.dims() });
    }
    let centroid_roi = imaging::centroid(&estimated)?;
    let (width_px, height_px) = imaging::extent(&estimated)?;
    let centroid_img = imaging::reinsert(centroid_roi, roi)?;
    let z = sample_depth_near(depth_full, centroid_img).ok_or(CompletionError::NoDepthAtCentroid {
        u: centroid_img.u.to_f64_lossy(),
        v: centroid_img.v.to_f64_lossy(),
    })?;
    let centroid_3d = project(PixelDepth::new(centroid_img.u, centroid_img.v, z), k);
    Ok(CompletedFruit { estimated_depth: estimated, centroid_roi, centroid_img, centroid_3d, width_px, height_px })
}

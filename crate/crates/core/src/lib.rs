//! Perception for clearing occluded fruit by pushing branches.
//!
//! Given a registered RGB-D view, the crate segments the visible part of a
//! fruit, completes its silhouette, decides whether it is occluded and in which
//! image direction the occluder lies, detects 3D branch segments with a
//! plane-rotation extension of the Hough transform, and plans a push.
//!
//! Numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod completion;
pub mod decision;
pub mod geometry;
pub mod hough;
pub mod imaging;
pub mod pipeline;
pub mod scalar;
pub mod synth;

pub use scalar::Real;

pub type Point3d = geometry::Point3<f64>;
pub type Vec2d = geometry::Vec2<f64>;
pub type CameraIntrinsicsD = geometry::CameraIntrinsics<f64>;
pub type DepthImageD = imaging::DepthImage<f64>;
pub type Segment2Dd = hough::Segment2D<f64>;
pub type Segment3Dd = hough::Segment3D<f64>;
pub type HoughParamsD = hough::HoughParams<f64>;
pub type ViewFrustumD = decision::ViewFrustum<f64>;
pub type PushPlanD = decision::PushPlan<f64>;

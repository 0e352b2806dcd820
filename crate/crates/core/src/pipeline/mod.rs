//! End-to-end run: segment, complete, assess, detect lines, decide.

mod eval;
mod overlay;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::{
    assess_occlusion, build_completed_fruit, AnalyticCompleter, CompletedFruit, CompletionError, ExternalCompleter,
    FruitCompleter, OcclusionAssessment,
};
use crate::decision::{
    build_push_plan, push_magnitude, rank_candidates, CandidateLine, DecisionParams, PushPlan, ViewFrustum,
};
use crate::geometry::{CameraIntrinsics, Point3, Vec2};
use crate::hough::{detect_lines_3d_detailed, merge_lifts, HoughParams, LineLift, Segment3D};
use crate::imaging::{apply_mask, binarize, crop_roi, segment_hsv, BitMask, DepthImage, HsvRange, RgbImage, RoiBox};
use crate::synth;

pub use eval::{batch_eval, match_branch, EvalSummary, EvalTimings, SceneRecord};
pub use overlay::{render_overlay, OverlayColors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Load,
    Segment,
    Crop,
    Complete,
    Assess,
    Lines,
    Decide,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl std::fmt::Display) -> Self {
        Self { stage, message: message.to_string() }
    }

    /// Bad configuration or unusable input files, as opposed to a stage that
    /// could not produce its result.
    pub fn is_input_error(&self) -> bool {
        matches!(self.stage, Stage::Config | Stage::Load)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompleterConfig {
    Analytic {
        #[serde(default = "default_min_support")]
        min_support: usize,
        #[serde(default = "default_ransac_iterations")]
        ransac_iterations: usize,
        #[serde(default = "default_inlier_tol")]
        inlier_tol_px: f64,
    },
    External {
        path: PathBuf,
    },
}

fn default_min_support() -> usize {
    AnalyticCompleter::default().min_support
}

fn default_ransac_iterations() -> usize {
    AnalyticCompleter::default().ransac_iterations
}

fn default_inlier_tol() -> f64 {
    AnalyticCompleter::default().inlier_tol_px
}

impl Default for CompleterConfig {
    fn default() -> Self {
        Self::Analytic {
            min_support: default_min_support(),
            ransac_iterations: default_ransac_iterations(),
            inlier_tol_px: default_inlier_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub plan: String,
    pub report: String,
    pub overlay: String,
    /// When set, face-on line images and masks are written here.
    pub debug_dir: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { plan: "plan.json".into(), report: "report.json".into(), overlay: "overlay.png".into(), debug_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics<f64>,
    pub fruit_hsv: HsvRange,
    pub branch_hsv: HsvRange,
    pub d_roi: usize,
    pub r_o: f64,
    /// Fruit mask pieces closer than this (pixels) to the largest one are kept.
    pub merge_gap: usize,
    pub hough: HoughParams<f64>,
    pub decision: DecisionParams<f64>,
    /// Image direction in which the robot stands.
    pub robot_side: Vec2<f64>,
    pub completer: CompleterConfig,
    pub seed: u64,
    pub outputs: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: synth::default_intrinsics(),
            fruit_hsv: synth::FRUIT_HSV,
            branch_hsv: synth::BRANCH_HSV,
            d_roi: 56,
            r_o: 0.1,
            merge_gap: 12,
            hough: HoughParams::default(),
            decision: DecisionParams::default(),
            robot_side: Vec2::new(-1.0, 0.0),
            completer: CompleterConfig::default(),
            seed: AnalyticCompleter::default().seed,
            outputs: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::new(Stage::Config, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::new(Stage::Config, m));
        if let Err(e) = self.intrinsics.validate() {
            return err(e.to_string());
        }
        if let Err(e) = self.fruit_hsv.validate() {
            return err(format!("fruit_hsv: {e}"));
        }
        if let Err(e) = self.branch_hsv.validate() {
            return err(format!("branch_hsv: {e}"));
        }
        if self.d_roi == 0 || self.d_roi > self.intrinsics.width.min(self.intrinsics.height) as usize {
            return err(format!("d_roi {} does not fit the image", self.d_roi));
        }
        if !(self.r_o >= 0.0 && self.r_o.is_finite()) {
            return err(format!("r_o must be non-negative, got {}", self.r_o));
        }
        if let Err(e) = self.hough.validate() {
            return err(e.to_string());
        }
        if !(self.decision.d_v > 0.0 && self.decision.d_v.is_finite()) {
            return err(format!("d_v must be positive, got {}", self.decision.d_v));
        }
        if self.robot_side.normalized().is_none() {
            return err("robot_side must be a nonzero vector".into());
        }
        Ok(())
    }

    pub fn completer(&self) -> Box<dyn FruitCompleter<f64>> {
        match &self.completer {
            CompleterConfig::Analytic { min_support, ransac_iterations, inlier_tol_px } => {
                Box::new(AnalyticCompleter {
                    min_support: *min_support,
                    ransac_iterations: *ransac_iterations,
                    inlier_tol_px: *inlier_tol_px,
                    seed: self.seed,
                })
            }
            CompleterConfig::External { path } => Box::new(ExternalCompleter { path: path.clone() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// A push plan was produced.
    Plan,
    /// The fruit is not occluded.
    Clear,
    /// Occluded, but no branch qualifies for pushing.
    NoCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FruitSummary {
    pub pixels: usize,
    pub roi: RoiBox,
    pub centroid_img: Vec2<f64>,
    pub centroid_3d: Point3<f64>,
    pub width_px: usize,
    pub height_px: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub status: Status,
    pub timings: Vec<StageTiming>,
    pub fruit: Option<FruitSummary>,
    pub occlusion: Option<OcclusionAssessment<f64>>,
    /// Detected branch segments, camera frame.
    pub lines: Vec<Segment3D<f64>>,
    /// Candidates, best first.
    pub candidates: Vec<CandidateLine<f64>>,
    pub plan: Option<PushPlan<f64>>,
    pub reason: Option<String>,
    /// Kept so an overlay can be redrawn from the report alone.
    pub intrinsics: CameraIntrinsics<f64>,
    pub fruit_hsv: HsvRange,
    pub artifacts: Vec<String>,
}

/// What `plan.json` holds: everything deterministic about the decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub status: Status,
    pub plan: Option<PushPlan<f64>>,
}

impl PipelineReport {
    pub fn plan_file(&self) -> PlanFile {
        PlanFile { status: self.status, plan: self.plan }
    }
}

/// Intermediate rasters and per-line lifting results, for debugging output.
#[derive(Debug, Clone, Default)]
pub struct PipelineArtifacts {
    pub fruit_mask: Option<BitMask>,
    pub branch_mask: Option<BitMask>,
    pub lifts: Vec<LineLift<f64>>,
}

/// Returns a fixed estimate; lets the pipeline complete once and reuse it.
struct Precomputed(DepthImage<f64>);

impl FruitCompleter<f64> for Precomputed {
    fn complete(&self, _: &DepthImage<f64>) -> Result<DepthImage<f64>, CompletionError> {
        Ok(self.0.clone())
    }
}

struct Clock {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Self { timings: Vec::new(), last: Instant::now() }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.timings.push(StageTiming { stage, ms: (now - self.last).as_secs_f64() * 1e3 });
        self.last = now;
    }
}

/// Pixels matching `range` that also have a depth return.
fn color_mask(rgb: &RgbImage, depth: &DepthImage<f64>, range: &HsvRange) -> BitMask {
    let mask = segment_hsv(rgb, range);
    mask.and(&binarize(depth)).unwrap_or(mask)
}

/// Full-image depth where the fruit is visible, with the completed estimate
/// filling the hidden part of the ROI. The centroid depth is read from here.
fn fruit_depth_with_estimate(masked: &DepthImage<f64>, estimate: &DepthImage<f64>, roi: &RoiBox) -> DepthImage<f64> {
    let mut out = masked.clone();
    for (u, v, z) in estimate.nonzero() {
        let (iu, iv) = (u + roi.u_tl, v + roi.v_tl);
        if iu < out.width() && iv < out.height() && out.get(iu, iv) == 0.0 {
            out.set(iu, iv, z);
        }
    }
    out
}

pub fn run_pipeline(
    config: &PipelineConfig,
    rgb: &RgbImage,
    depth: &DepthImage<f64>,
) -> Result<PipelineReport, PipelineError> {
    run_pipeline_detailed(config, rgb, depth).map(|(r, _)| r)
}

struct FruitStages {
    fruit: CompletedFruit<f64>,
    summary: FruitSummary,
    visible_roi: DepthImage<f64>,
    assessment: OcclusionAssessment<f64>,
    mask: BitMask,
}

fn check_inputs(config: &PipelineConfig, rgb: &RgbImage, depth: &DepthImage<f64>) -> Result<(), PipelineError> {
    config.validate()?;
    let k = &config.intrinsics;
    let expected = (k.width as usize, k.height as usize);
    if rgb.dims() != expected || depth.dims() != expected {
        return Err(PipelineError::new(
            Stage::Load,
            format!(
                "image sizes {:?} (rgb) and {:?} (depth) do not match intrinsics {:?}",
                rgb.dims(),
                depth.dims(),
                expected
            ),
        ));
    }
    Ok(())
}

fn fruit_stages(
    config: &PipelineConfig,
    rgb: &RgbImage,
    depth: &DepthImage<f64>,
    clock: &mut Clock,
) -> Result<FruitStages, PipelineError> {
    let k = &config.intrinsics;
    let mask = color_mask(rgb, depth, &config.fruit_hsv).largest_component(config.merge_gap);
    if mask.is_empty() {
        return Err(PipelineError::new(Stage::Segment, "no fruit pixels in the image"));
    }
    clock.lap(Stage::Segment);

    let masked = apply_mask(depth, &mask).map_err(|e| PipelineError::new(Stage::Crop, e))?;
    let (visible_roi, roi) = crop_roi(depth, &mask, config.d_roi).map_err(|e| PipelineError::new(Stage::Crop, e))?;
    clock.lap(Stage::Crop);

    let estimate = config.completer().complete(&visible_roi).map_err(|e| PipelineError::new(Stage::Complete, e))?;
    let filled = fruit_depth_with_estimate(&masked, &estimate, &roi);
    let fruit = build_completed_fruit(&visible_roi, &roi, &filled, k, &Precomputed(estimate))
        .map_err(|e| PipelineError::new(Stage::Complete, e))?;
    let summary = FruitSummary {
        pixels: mask.count(),
        roi,
        centroid_img: fruit.centroid_img,
        centroid_3d: fruit.centroid_3d,
        width_px: fruit.width_px,
        height_px: fruit.height_px,
    };
    clock.lap(Stage::Complete);

    let assessment = assess_occlusion(&visible_roi, &fruit.estimated_depth, config.r_o)
        .map_err(|e| PipelineError::new(Stage::Assess, e))?;
    clock.lap(Stage::Assess);
    Ok(FruitStages { fruit, summary, visible_roi, assessment, mask })
}

/// Segment, complete and assess only; no line detection or planning.
pub fn assess_fruit(
    config: &PipelineConfig,
    rgb: &RgbImage,
    depth: &DepthImage<f64>,
) -> Result<OcclusionAssessment<f64>, PipelineError> {
    check_inputs(config, rgb, depth)?;
    fruit_stages(config, rgb, depth, &mut Clock::new()).map(|s| s.assessment)
}

pub fn run_pipeline_detailed(
    config: &PipelineConfig,
    rgb: &RgbImage,
    depth: &DepthImage<f64>,
) -> Result<(PipelineReport, PipelineArtifacts), PipelineError> {
    check_inputs(config, rgb, depth)?;
    let k = &config.intrinsics;
    let mut clock = Clock::new();
    let mut artifacts = PipelineArtifacts::default();
    let mut report = PipelineReport {
        status: Status::Clear,
        timings: Vec::new(),
        fruit: None,
        occlusion: None,
        lines: Vec::new(),
        candidates: Vec::new(),
        plan: None,
        reason: None,
        intrinsics: *k,
        fruit_hsv: config.fruit_hsv,
        artifacts: Vec::new(),
    };

    let FruitStages { fruit, summary, visible_roi, assessment, mask } = fruit_stages(config, rgb, depth, &mut clock)?;
    let roi = summary.roi;
    report.fruit = Some(summary);
    artifacts.fruit_mask = Some(mask);
    let gradient = assessment.view_gradient;
    report.occlusion = Some(assessment);
    let Some(o_f) = gradient else {
        report.timings = clock.timings;
        return Ok((report, artifacts));
    };

    let branch_mask = color_mask(rgb, depth, &config.branch_hsv);
    let lifts = detect_lines_3d_detailed(&branch_mask, depth, k, &config.hough)
        .map_err(|e| PipelineError::new(Stage::Lines, e))?;
    report.lines = merge_lifts(&lifts, &config.hough);
    artifacts.branch_mask = Some(branch_mask);
    artifacts.lifts = lifts;
    clock.lap(Stage::Lines);

    let frustum = ViewFrustum::from_fruit(&fruit, k).map_err(|e| PipelineError::new(Stage::Decide, e))?;
    report.candidates = rank_candidates(&report.lines, &frustum, o_f, fruit.centroid_3d.z, k, &config.decision)
        .map_err(|e| PipelineError::new(Stage::Decide, e))?;
    match report.candidates.first() {
        None => {
            report.status = Status::NoCandidate;
            report.reason = Some(format!(
                "none of {} branch segments is in front of the fruit and within {} m of its viewing cone",
                report.lines.len(),
                config.decision.d_v
            ));
        }
        Some(best) => {
            let magnitude = push_magnitude(&binarize(&visible_roi), &roi, depth, k)
                .map_err(|e| PipelineError::new(Stage::Decide, e))?;
            let plan = build_push_plan(best, &frustum, o_f, config.robot_side, magnitude, k)
                .map_err(|e| PipelineError::new(Stage::Decide, e))?;
            report.plan = Some(plan);
            report.status = Status::Plan;
        }
    }
    clock.lap(Stage::Decide);
    report.timings = clock.timings;
    Ok((report, artifacts))
}

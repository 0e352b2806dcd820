//! Batch evaluation on generated scenes with known ground truth.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hough::Segment3D;
use crate::synth::{displace_branch, random_scene_with, render, Difficulty};

use super::{assess_fruit, run_pipeline, PipelineConfig, PipelineError, Stage, Status};

/// Mean distance (m) from a detected segment to a ground-truth axis below which
/// they are the same branch.
const MATCH_DISTANCE: f64 = 0.04;
/// Largest angle between matched segment and axis, degrees.
const MATCH_ANGLE_DEG: f64 = 15.0;

/// Index of the ground-truth branch axis that `seg` lies on, if any.
pub fn match_branch(seg: &Segment3D<f64>, axes: &[Segment3D<f64>]) -> Option<usize> {
    let probes = [seg.p1, seg.midpoint(), seg.p2];
    let dir = seg.direction()?;
    axes.iter()
        .enumerate()
        .filter_map(|(i, axis)| {
            let a = axis.direction()?;
            let angle = dir.dot(&a).abs().min(1.0).acos().to_degrees();
            let d = probes.iter().map(|p| axis.distance_to(p)).sum::<f64>() / 3.0;
            (angle <= MATCH_ANGLE_DEG && d <= MATCH_DISTANCE).then_some((i, d))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub seed: u64,
    pub gt_occluder: Option<usize>,
    pub gt_ratio: f64,
    pub status: Option<Status>,
    pub error: Option<String>,
    /// Ground-truth branch the selected line lies on.
    pub pushed_branch: Option<usize>,
    pub occluder_correct: bool,
    /// Whether the re-rendered scene assesses as unoccluded after the push.
    pub cleared: bool,
    pub gt_ratio_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub difficulty: Difficulty,
    pub seed: u64,
    pub n: usize,
    pub plans: usize,
    pub clear: usize,
    pub no_candidate: usize,
    pub errors: usize,
    pub occluder_correct: usize,
    pub cleared: usize,
    pub occluder_accuracy: f64,
    pub clearance_rate: f64,
    pub scenes: Vec<SceneRecord>,
}

/// Wall-clock numbers, kept apart from the summary so that stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTimings {
    pub mean_stage_ms: Vec<(Stage, f64)>,
    pub mean_scene_ms: f64,
    pub total_ms: f64,
}

struct SceneOutcome {
    record: SceneRecord,
    stage_ms: Vec<(Stage, f64)>,
    scene_ms: f64,
}

fn eval_scene(config: &PipelineConfig, seed: u64, difficulty: Difficulty) -> SceneOutcome {
    let k = &config.intrinsics;
    let spec = random_scene_with(seed, difficulty, k);
    let mut record = SceneRecord {
        seed,
        gt_occluder: None,
        gt_ratio: 0.0,
        status: None,
        error: None,
        pushed_branch: None,
        occluder_correct: false,
        cleared: false,
        gt_ratio_after: None,
    };
    let (rgb, depth, gt) = match render(&spec, k) {
        Ok(r) => r,
        Err(e) => {
            record.error = Some(e.to_string());
            return SceneOutcome { record, stage_ms: Vec::new(), scene_ms: 0.0 };
        }
    };
    record.gt_occluder = gt.occluder;
    record.gt_ratio = gt.occlusion_ratio;
    let start = Instant::now();
    let report = run_pipeline(config, &rgb, &depth);
    let scene_ms = start.elapsed().as_secs_f64() * 1e3;
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            record.error = Some(e.to_string());
            return SceneOutcome { record, stage_ms: Vec::new(), scene_ms };
        }
    };
    record.status = Some(report.status);
    let stage_ms = report.timings.iter().map(|t| (t.stage, t.ms)).collect();
    match (report.status, &report.plan) {
        (Status::Clear, _) => {
            // Nothing to push; the fruit is already visible.
            record.occluder_correct = gt.occluder.is_none();
            record.cleared = true;
        }
        (Status::Plan, Some(plan)) => {
            record.pushed_branch = match_branch(&plan.line, &gt.branch_axes);
            record.occluder_correct = record.pushed_branch.is_some() && record.pushed_branch == gt.occluder;
            if let Some(b) = record.pushed_branch {
                let after = displace_branch(&spec, b, plan.displacement())
                    .map_err(|e| PipelineError::new(Stage::Output, e))
                    .and_then(|s| render(&s, k).map_err(|e| PipelineError::new(Stage::Output, e)));
                if let Ok((rgb2, depth2, gt2)) = after {
                    record.gt_ratio_after = Some(gt2.occlusion_ratio);
                    record.cleared = assess_fruit(config, &rgb2, &depth2).is_ok_and(|a| !a.occluded);
                }
            }
        }
        _ => {}
    }
    SceneOutcome { record, stage_ms, scene_ms }
}

/// Run `n` generated scenes with seeds `seed..seed + n`, in parallel.
pub fn batch_eval(
    config: &PipelineConfig,
    n: usize,
    difficulty: Difficulty,
    seed: u64,
) -> Result<(EvalSummary, EvalTimings), PipelineError> {
    if n == 0 {
        return Err(PipelineError::new(Stage::Config, "n must be positive"));
    }
    config.validate()?;
    let start = Instant::now();
    let mut outcomes: Vec<SceneOutcome> =
        (0..n as u64).into_par_iter().map(|i| eval_scene(config, seed.wrapping_add(i), difficulty)).collect();
    outcomes.sort_by_key(|o| o.record.seed);
    let total_ms = start.elapsed().as_secs_f64() * 1e3;

    let count = |f: &dyn Fn(&SceneRecord) -> bool| outcomes.iter().filter(|o| f(&o.record)).count();
    let plans = count(&|r| r.status == Some(Status::Plan));
    let clear = count(&|r| r.status == Some(Status::Clear));
    let no_candidate = count(&|r| r.status == Some(Status::NoCandidate));
    let errors = count(&|r| r.error.is_some());
    let occluder_correct = count(&|r| r.occluder_correct);
    let cleared = count(&|r| r.cleared);

    let mut stages: Vec<(Stage, f64, usize)> = Vec::new();
    for (stage, ms) in outcomes.iter().flat_map(|o| o.stage_ms.iter()) {
        match stages.iter_mut().find(|s| s.0 == *stage) {
            Some(s) => {
                s.1 += ms;
                s.2 += 1;
            }
            None => stages.push((*stage, *ms, 1)),
        }
    }
    let timings = EvalTimings {
        mean_stage_ms: stages.into_iter().map(|(s, t, c)| (s, t / c as f64)).collect(),
        mean_scene_ms: outcomes.iter().map(|o| o.scene_ms).sum::<f64>() / n as f64,
        total_ms,
    };
    let summary = EvalSummary {
        difficulty,
        seed,
        n,
        plans,
        clear,
        no_candidate,
        errors,
        occluder_correct,
        cleared,
        occluder_accuracy: occluder_correct as f64 / n as f64,
        clearance_rate: cleared as f64 / n as f64,
        scenes: outcomes.into_iter().map(|o| o.record).collect(),
    };
    Ok((summary, timings))
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fruitpush::imaging::io::{load_depth_png, load_rgb_png, save_depth_png, save_mask_png, save_rgb_png};
use fruitpush::pipeline::{
    batch_eval, render_overlay, run_pipeline_detailed, PipelineConfig, PipelineError, PipelineReport, Stage, Status,
};
use fruitpush::synth::{random_scene_with, render, Difficulty};

const EXIT_STAGE: u8 = 1;
const EXIT_NO_CANDIDATE: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "fruitpush", version, about = "Find the branch hiding a fruit and plan a push to clear it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process one registered RGB-D pair.
    Run {
        /// JSON configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        rgb: PathBuf,
        /// 16-bit PNG, millimeters.
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic scene with ground truth.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "single_branch")]
        difficulty: Difficulty,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the pipeline on generated scenes and score it against ground truth.
    Eval {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value = "single_branch")]
        difficulty: Difficulty,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for summary.json and timings.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Redraw the overlay from a saved report.
    Overlay {
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error plus the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_INPUT, error: error.into() }
    }

    fn stage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_STAGE, error: error.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_input_error() {
            Self::input(e)
        } else {
            Self::stage(e)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(Failure::input)?;
            PipelineConfig::from_json(&text).with_context(|| format!("in {}", p.display())).map_err(Failure::input)
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::input)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::stage)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())).map_err(Failure::stage)
}

fn load_error(e: impl Into<anyhow::Error>, path: &Path) -> Failure {
    Failure::input(PipelineError::new(Stage::Load, format!("{}: {}", path.display(), e.into())))
}

fn cmd_run(
    config: Option<&Path>,
    rgb_path: &Path,
    depth_path: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<u8, Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let rgb = load_rgb_png(rgb_path).map_err(|e| load_error(e, rgb_path))?;
    let depth = load_depth_png(depth_path).map_err(|e| load_error(e, depth_path))?;
    if depth.count_nonzero() == 0 {
        return Err(load_error(anyhow::anyhow!("depth image has no valid pixels"), depth_path));
    }
    create_dir(out)?;
    let (mut report, artifacts) = run_pipeline_detailed(&cfg, &rgb, &depth)?;

    let plan_path = out.join(&cfg.outputs.plan);
    let overlay_path = out.join(&cfg.outputs.overlay);
    let report_path = out.join(&cfg.outputs.report);
    write_json(&plan_path, &report.plan_file())?;
    save_rgb_png(&render_overlay(&rgb, &report), &overlay_path).map_err(Failure::stage)?;
    report.artifacts = vec![plan_path.display().to_string(), overlay_path.display().to_string()];
    if let Some(dir) = &cfg.outputs.debug_dir {
        let dir = out.join(dir);
        create_dir(&dir)?;
        let mut masks = Vec::new();
        if let Some(m) = &artifacts.fruit_mask {
            masks.push((dir.join("fruit_mask.png"), m));
        }
        if let Some(m) = &artifacts.branch_mask {
            masks.push((dir.join("branch_mask.png"), m));
        }
        for (i, lift) in artifacts.lifts.iter().enumerate() {
            if let Some(v) = &lift.virtual_image {
                masks.push((dir.join(format!("face_on_{i:02}.png")), &v.mask));
            }
        }
        for (path, m) in masks {
            save_mask_png(m, &path).map_err(Failure::stage)?;
            report.artifacts.push(path.display().to_string());
        }
    }
    report.artifacts.push(report_path.display().to_string());
    write_json(&report_path, &report)?;
    print_run_summary(&report);
    Ok(match report.status {
        Status::NoCandidate => EXIT_NO_CANDIDATE,
        Status::Plan | Status::Clear => 0,
    })
}

fn print_run_summary(report: &PipelineReport) {
    let ratio = report.occlusion.as_ref().map(|o| o.ratio).unwrap_or(0.0);
    match (&report.status, &report.plan) {
        (Status::Plan, Some(p)) => println!(
            "plan: line {} of {} ({} candidates), occlusion {:.2}, push at ({:.3}, {:.3}, {:.3}) m along ({:.3}, {:.3}, {:.3}) by {:.3} m",
            p.line_index,
            report.lines.len(),
            report.candidates.len(),
            ratio,
            p.push_point.x,
            p.push_point.y,
            p.push_point.z,
            p.direction_3d.x,
            p.direction_3d.y,
            p.direction_3d.z,
            p.magnitude
        ),
        (Status::Clear, _) => println!("clear: occlusion {ratio:.2} is below threshold"),
        _ => println!(
            "no candidate: {}",
            report.reason.as_deref().unwrap_or("no branch qualifies")
        ),
    }
}

fn cmd_synth(seed: u64, difficulty: Difficulty, out: &Path, config: Option<&Path>) -> Result<u8, Failure> {
    let cfg = load_config(config)?;
    let spec = random_scene_with(seed, difficulty, &cfg.intrinsics);
    let (rgb, depth, truth) = render(&spec, &cfg.intrinsics).map_err(Failure::stage)?;
    create_dir(out)?;
    save_rgb_png(&rgb, &out.join("rgb.png")).map_err(Failure::stage)?;
    save_depth_png(&depth, &out.join("depth.png")).map_err(Failure::stage)?;
    write_json(&out.join("truth.json"), &truth)?;
    write_json(&out.join("scene.json"), &spec)?;
    println!(
        "scene {seed} ({} branches): occlusion {:.2}, occluder {:?}",
        spec.branches.len(),
        truth.occlusion_ratio,
        truth.occluder
    );
    Ok(0)
}

fn cmd_eval(
    n: usize,
    difficulty: Difficulty,
    seed: u64,
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    if n == 0 {
        return Err(Failure::input(anyhow::anyhow!("--n must be at least 1")));
    }
    let cfg = load_config(config)?;
    let (summary, timings) = batch_eval(&cfg, n, difficulty, seed)?;
    println!("scenes              {}", summary.n);
    println!("plans               {}", summary.plans);
    println!("already clear       {}", summary.clear);
    println!("no candidate        {}", summary.no_candidate);
    println!("errors              {}", summary.errors);
    println!(
        "occluder accuracy   {:.1}% ({}/{})",
        summary.occluder_accuracy * 100.0,
        summary.occluder_correct,
        summary.n
    );
    println!("clearance rate      {:.1}% ({}/{})", summary.clearance_rate * 100.0, summary.cleared, summary.n);
    println!("mean scene time     {:.1} ms", timings.mean_scene_ms);
    for (stage, ms) in &timings.mean_stage_ms {
        println!("  {:<17} {:.2} ms", stage.to_string(), ms);
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("summary.json"), &summary)?;
        write_json(&dir.join("timings.json"), &timings)?;
    }
    Ok(0)
}

fn cmd_overlay(rgb_path: &Path, report_path: &Path, out: &Path) -> Result<u8, Failure> {
    let rgb = load_rgb_png(rgb_path).map_err(|e| load_error(e, rgb_path))?;
    let text = fs::read_to_string(report_path).map_err(|e| load_error(e, report_path))?;
    let report: PipelineReport = serde_json::from_str(&text).map_err(|e| load_error(e, report_path))?;
    let (w, h) = (report.intrinsics.width as usize, report.intrinsics.height as usize);
    if rgb.dims() != (w, h) {
        return Err(load_error(anyhow::anyhow!("image is {:?}, report expects {:?}", rgb.dims(), (w, h)), rgb_path));
    }
    save_rgb_png(&render_overlay(&rgb, &report), out).map_err(Failure::stage)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run { config, rgb, depth, out, seed } => cmd_run(config.as_deref(), rgb, depth, out, *seed),
        Command::Synth { seed, difficulty, out, config } => cmd_synth(*seed, *difficulty, out, config.as_deref()),
        Command::Eval { n, difficulty, seed, config, out } => {
            cmd_eval(*n, *difficulty, *seed, config.as_deref(), out.as_deref())
        }
        Command::Overlay { rgb, report, out } => cmd_overlay(rgb, report, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

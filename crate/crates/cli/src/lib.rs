//! Command implementations behind the `evsplat` binary: simulate a sweep,
//! train from a dataset manifest, render views from a checkpoint, and
//! evaluate renders against ground-truth frames. Each command is an ordinary
//! function over a clap-derived argument struct so tests can drive them
//! in-process.

use clap::{Args, Subcommand, ValueEnum};
use evsplat_core::camera::{CameraView, Intrinsics, SweepTrajectory, TrajectoryKind};
use evsplat_core::error::{Error, Result};
use evsplat_core::grid::Grid;
use evsplat_core::io;
use evsplat_core::loss::LossConfig;
use evsplat_core::metrics::{psnr, ssim_metric, EvalReport};
use evsplat_core::render::render;
use evsplat_core::scene::{random_test_scene, Bounds, GaussianScene};
use evsplat_core::sim::{frames_to_events, roundtrip_check, SimConfig};
use evsplat_core::train::{train, LossKind, TrainConfig, TrainDataset};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a sweep of a Gaussian scene and synthesize its event stream.
    Simulate(SimulateArgs),
    /// Optimize a fresh Gaussian scene against a recorded sweep dataset.
    Train(TrainArgs),
    /// Render views from a checkpoint along poses or a trajectory.
    Render(RenderArgs),
    /// Score rendered views against ground-truth frames.
    Eval(EvalArgs),
}

fn parse_vec3(s: &str) -> std::result::Result<Vector3<f64>, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut v = Vector3::zeros();
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse().map_err(|e| format!("{e}"))?;
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrajectoryChoice {
    Turntable,
    Linear,
}

/// Sweep trajectory and camera flags shared by simulate/render/eval.
#[derive(Debug, Args, Clone)]
pub struct TrajectoryArgs {
    #[arg(long, value_enum, default_value = "turntable")]
    pub trajectory: TrajectoryChoice,
    /// Number of evenly spaced views over the sweep.
    #[arg(long, default_value_t = 250)]
    pub frames: u32,
    /// Sweep duration in microseconds; defaults to 10ms per frame step.
    #[arg(long)]
    pub duration_us: Option<u64>,
    /// Turntable arc in degrees.
    #[arg(long, default_value_t = 90.0)]
    pub arc_deg: f64,
    #[arg(long, default_value_t = 1.0)]
    pub orbit_radius: f64,
    #[arg(long, default_value_t = 0.0)]
    pub elevation_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    pub start_azimuth_deg: f64,
    /// Linear sweep start position, as x,y,z.
    #[arg(long, value_parser = parse_vec3, default_value = "0,-1,0")]
    pub start: Vector3<f64>,
    /// Linear sweep total displacement, as x,y,z.
    #[arg(long, value_parser = parse_vec3, default_value = "0.5,0,0")]
    pub displacement: Vector3<f64>,
    /// Look-at target, as x,y,z.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    pub look_at: Vector3<f64>,
    #[arg(long, default_value_t = 346)]
    pub width: u32,
    #[arg(long, default_value_t = 260)]
    pub height: u32,
    #[arg(long, default_value_t = 300.0)]
    pub focal: f64,
}

impl TrajectoryArgs {
    pub fn build(&self) -> Result<SweepTrajectory> {
        let duration_us = self
            .duration_us
            .unwrap_or((self.frames.max(2) as u64 - 1) * 10_000);
        let kind = match self.trajectory {
            TrajectoryChoice::Turntable => TrajectoryKind::TurntableArc {
                center: self.look_at,
                radius: self.orbit_radius,
                elevation_deg: self.elevation_deg,
                start_azimuth_deg: self.start_azimuth_deg,
                arc_deg: self.arc_deg,
            },
            TrajectoryChoice::Linear => TrajectoryKind::LinearTranslation {
                start: self.start,
                displacement: self.displacement,
                look_at: self.look_at,
            },
        };
        let traj = SweepTrajectory {
            kind,
            duration_us,
            frame_count: self.frames,
            intrinsics: Intrinsics::desk(self.width, self.height, self.focal),
        };
        traj.validate()?;
        Ok(traj)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene checkpoint to sweep; omitted means the built-in seeded test
    /// object.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Existing numbered PNG frames to convert to events instead of
    /// rendering a scene; requires --times-file, writes only the event
    /// stream.
    #[arg(long, conflicts_with = "scene")]
    pub frames_dir: Option<PathBuf>,
    /// Frame timestamps for --frames-dir, one integer microsecond per line.
    #[arg(long, requires = "frames_dir")]
    pub times_file: Option<PathBuf>,
    /// Gaussian count of the built-in test object.
    #[arg(long, default_value_t = 50)]
    pub scene_count: usize,
    /// Seed of the built-in test object.
    #[arg(long, default_value_t = 7)]
    pub scene_seed: u64,
    #[command(flatten)]
    pub trajectory: TrajectoryArgs,
    #[arg(long, default_value_t = 0.25)]
    pub contrast_threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub refractory_us: u64,
    /// Uniform noise events per pixel per second.
    #[arg(long, default_value_t = 0.0)]
    pub noise_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the event stream as CSV.
    #[arg(long)]
    pub csv: bool,
    /// Also dump frames as raw float32.
    #[arg(long)]
    pub float_dump: bool,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if let Some(frames_dir) = &args.frames_dir {
        return simulate_from_frames(args, frames_dir);
    }
    let scene = match &args.scene {
        Some(path) => GaussianScene::load_checkpoint(path)?,
        None => random_test_scene(args.scene_count, args.scene_seed),
    };
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let traj = args.trajectory.build()?;
    let times = traj.sample_view_times();
    let views: Vec<CameraView> = times
        .iter()
        .map(|&t| traj.pose_at(t))
        .collect::<Result<_>>()?;

    let frames_dir = args.out.join("frames");
    std::fs::create_dir_all(&frames_dir)
        .map_err(|e| Error::io(format!("create {}", frames_dir.display()), e))?;

    let mut frames = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let img = render(&scene, view)?.image;
        io::save_grayscale_png(&io::frame_path(&frames_dir, i), &img)?;
        if args.float_dump {
            io::write_grid_f32(&frames_dir.join(format!("frame_{i:05}.f32")), &img)?;
        }
        frames.push(img);
    }
    io::save_grayscale_png(&args.out.join("initial.png"), &frames[0])?;
    io::write_times(&args.out.join("times.txt"), &times)?;
    io::PoseFile::from_views(&views)?.save(&args.out.join("poses.json"))?;

    let sim_cfg = SimConfig {
        contrast_threshold: args.contrast_threshold,
        refractory_us: args.refractory_us,
        noise_rate: args.noise_rate,
        ..SimConfig::default()
    };
    let stream = frames_to_events(&frames, &times, &sim_cfg, args.seed)?;
    io::write_events(&args.out.join("events.swev"), &stream)?;
    if args.csv {
        io::write_events_csv(&args.out.join("events.csv"), &stream)?;
    }

    let manifest = io::DatasetManifest {
        events: PathBuf::from("events.swev"),
        poses: PathBuf::from("poses.json"),
        initial_frame: Some(PathBuf::from("initial.png")),
        gt_frames_dir: Some(PathBuf::from("frames")),
        gt_times: Some(PathBuf::from("times.txt")),
        resolution: (traj.intrinsics.width, traj.intrinsics.height),
        contrast_threshold: args.contrast_threshold,
    };
    manifest.save(&args.out.join("manifest.json"))?;

    if args.noise_rate == 0.0 {
        let residual = roundtrip_check(&frames, &times, &sim_cfg)?;
        eprintln!(
            "simulated {} events, roundtrip residual {residual:.4} (A = {})",
            stream.len(),
            args.contrast_threshold
        );
    } else {
        eprintln!("simulated {} events (noisy)", stream.len());
    }
    Ok(())
}

/// Converts an already-captured PNG frame sequence to the canonical event
/// file; no poses or manifest are involved.
fn simulate_from_frames(args: &SimulateArgs, frames_dir: &std::path::Path) -> Result<()> {
    let times_file = args.times_file.as_ref().ok_or_else(|| {
        Error::InvalidArgument("--frames-dir requires --times-file".into())
    })?;
    let times = io::read_times(times_file)?;
    let frames: Vec<Grid> = (0..times.len())
        .map(|i| io::load_grayscale_png(&io::frame_path(frames_dir, i)))
        .collect::<Result<_>>()?;
    let sim_cfg = SimConfig {
        contrast_threshold: args.contrast_threshold,
        refractory_us: args.refractory_us,
        noise_rate: args.noise_rate,
        ..SimConfig::default()
    };
    let stream = frames_to_events(&frames, &times, &sim_cfg, args.seed)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(format!("create {}", args.out.display()), e))?;
    io::write_events(&args.out.join("events.swev"), &stream)?;
    if args.csv {
        io::write_events_csv(&args.out.join("events.csv"), &stream)?;
    }
    eprintln!(
        "converted {} frames to {} events",
        frames.len(),
        stream.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossChoice {
    Ours,
    Mse,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest produced by `simulate` (or assembled by hand).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints, loss curve, and reports.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 10_000)]
    pub init_count: usize,
    /// Half extent of the random-init bounding cube.
    #[arg(long, default_value_t = 0.5)]
    pub init_half_extent: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// D-SSIM weight in the combined loss.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Loss selection; `mse` is the ablation baseline.
    #[arg(long, value_enum, default_value = "ours")]
    pub loss: LossChoice,
    /// Disable the background-activity denoiser (ablation).
    #[arg(long)]
    pub no_noise_filter: bool,
    /// Denoiser support window in microseconds.
    #[arg(long, default_value_t = 10_000)]
    pub filter_tau_us: u64,
    /// Denoiser spatial radius in pixels.
    #[arg(long, default_value_t = 1)]
    pub filter_radius: u32,
    /// Disable the initial-frame anchor term (pure event supervision).
    #[arg(long)]
    pub no_frame_anchor: bool,
    #[arg(long, default_value_t = 100)]
    pub densify_interval: u64,
    #[arg(long, default_value_t = 500)]
    pub densify_from: u64,
    #[arg(long, default_value_t = 50_000)]
    pub densify_until: u64,
    #[arg(long, default_value_t = 2e-4)]
    pub densify_grad_threshold: f64,
    #[arg(long, default_value_t = 3_000)]
    pub opacity_reset_interval: u64,
    /// Optional cap on the Gaussian count during densification.
    #[arg(long)]
    pub max_gaussians: Option<usize>,
    /// Skip the end-of-run evaluation even when ground truth is available.
    #[arg(long)]
    pub no_final_eval: bool,
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            seed: self.seed,
            init_count: self.init_count,
            init_bounds: Bounds::cube(self.init_half_extent),
            loss: match self.loss {
                LossChoice::Ours => LossKind::Ours,
                LossChoice::Mse => LossKind::Mse,
            },
            loss_cfg: LossConfig {
                lambda: self.lambda,
                ..LossConfig::default()
            },
            frame_anchor_weight: if self.no_frame_anchor { 0.0 } else { 1.0 },
            densify_interval: self.densify_interval,
            densify_from: self.densify_from,
            densify_until: self.densify_until,
            densify_grad_threshold: self.densify_grad_threshold,
            opacity_reset_interval: self.opacity_reset_interval,
            max_gaussians: self.max_gaussians,
            ..TrainConfig::default()
        }
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let manifest = io::DatasetManifest::load(&args.manifest)?;
    let dataset = manifest.open()?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(format!("create {}", args.out.display()), e))?;

    let stream = if args.no_noise_filter {
        dataset.stream.clone()
    } else {
        dataset
            .stream
            .background_activity_filter(args.filter_tau_us, args.filter_radius)?
    };
    eprintln!(
        "events: {} raw, {} after filtering",
        dataset.stream.len(),
        stream.len()
    );

    let cfg = args.train_config();
    let train_dataset = TrainDataset::new(stream, dataset.views.clone(), dataset.initial_frame)?;

    // Echo the effective configuration next to the outputs.
    let echo = serde_json::json!({
        "train": &cfg,
        "contrast_threshold": manifest.contrast_threshold,
        "noise_filter": {
            "enabled": !args.no_noise_filter,
            "tau_us": args.filter_tau_us,
            "radius": args.filter_radius,
        },
    });
    std::fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&echo)?,
    )
    .map_err(|e| Error::io("write config.json", e))?;

    if cfg.iterations == 0 {
        let scene =
            GaussianScene::random_init(cfg.init_count, cfg.init_bounds, cfg.seed)?;
        scene.save_checkpoint(&args.out.join("checkpoint_final.swgs"))?;
        return Ok(());
    }

    let outputs = train(&train_dataset, &cfg, Some(&args.out))?;
    evsplat_core::train::write_loss_csv(&args.out.join("loss.csv"), &outputs.history)?;

    if !args.no_final_eval {
        if let (Some(gt_dir), Some(gt_times)) = (&manifest.gt_frames_dir, &manifest.gt_times) {
            let times = io::read_times(gt_times)?;
            let report = eval_against_frames(&outputs.scene, &train_dataset.views, gt_dir, &times)?;
            std::fs::write(
                args.out.join("final_metrics.json"),
                serde_json::to_string_pretty(&report)?,
            )
            .map_err(|e| Error::io("write final_metrics.json", e))?;
            if let Some(p) = report.mean_psnr_db {
                eprintln!("final mean PSNR {p:.2} dB, SSIM {:.4}", report.mean_ssim);
            }
        }
    }
    Ok(())
}

/// Scores a scene against numbered ground-truth frames at poses matched by
/// timestamp.
fn eval_against_frames(
    scene: &GaussianScene,
    views: &[CameraView],
    gt_dir: &std::path::Path,
    times: &[u64],
) -> Result<EvalReport> {
    let mut pairs = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let view = views
            .iter()
            .find(|v| v.timestamp == t)
            .ok_or_else(|| Error::InvalidArgument(format!("no pose at t={t}")))?;
        let gt_path = io::frame_path(gt_dir, i);
        if !gt_path.exists() {
            return Err(Error::InvalidArgument(format!(
                "missing ground-truth frame {}",
                gt_path.display()
            )));
        }
        let gt = io::load_grayscale_png(&gt_path)?;
        gt.check_same_resolution(&Grid::zeros(
            view.intrinsics.width,
            view.intrinsics.height,
        ))?;
        let rendered = render(scene, view)?.image;
        pairs.push((i, t, psnr(&rendered, &gt)?, ssim_metric(&rendered, &gt)?));
    }
    Ok(EvalReport::from_pairs(&pairs))
}

/// Seeded uniform displacement of the camera position, orientation kept.
pub fn jitter_views(views: &[CameraView], amount: f64, seed: u64) -> Vec<CameraView> {
    if amount == 0.0 {
        return views.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    views
        .iter()
        .map(|v| {
            let delta = Vector3::new(
                rng.gen_range(-amount..amount),
                rng.gen_range(-amount..amount),
                rng.gen_range(-amount..amount),
            );
            let position = v.position() + delta;
            CameraView {
                rotation: v.rotation,
                translation: -(v.rotation * position),
                timestamp: v.timestamp,
                intrinsics: v.intrinsics,
            }
        })
        .collect()
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Pose file to render; otherwise poses come from the trajectory flags.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Subset of timestamps to render (defaults to every pose).
    #[arg(long)]
    pub times: Option<PathBuf>,
    #[command(flatten)]
    pub trajectory: TrajectoryArgs,
    /// Uniform position jitter amplitude in scene units.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub jitter_seed: u64,
    /// Also write raw float32 dumps next to the PNGs.
    #[arg(long)]
    pub float_dump: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn views_from_flags(
    poses: &Option<PathBuf>,
    times: &Option<PathBuf>,
    trajectory: &TrajectoryArgs,
) -> Result<Vec<CameraView>> {
    let base: Vec<CameraView> = match poses {
        Some(path) => io::PoseFile::load(path)?.to_views()?,
        None => {
            let traj = trajectory.build()?;
            traj.sample_view_times()
                .into_iter()
                .map(|t| traj.pose_at(t))
                .collect::<Result<_>>()?
        }
    };
    match times {
        Some(path) => {
            let wanted = io::read_times(path)?;
            wanted
                .into_iter()
                .map(|t| {
                    base.iter()
                        .find(|v| v.timestamp == t)
                        .cloned()
                        .ok_or_else(|| Error::InvalidArgument(format!("no pose at t={t}")))
                })
                .collect()
        }
        None => Ok(base),
    }
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let scene = GaussianScene::load_checkpoint(&args.checkpoint)?;
    let views = views_from_flags(&args.poses, &args.times, &args.trajectory)?;
    let views = jitter_views(&views, args.jitter, args.jitter_seed);
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(format!("create {}", args.out.display()), e))?;
    for (i, view) in views.iter().enumerate() {
        let img = render(&scene, view)?.image;
        io::save_grayscale_png(&args.out.join(format!("render_{i:05}.png")), &img)?;
        if args.float_dump {
            io::write_grid_f32(&args.out.join(format!("render_{i:05}.f32")), &img)?;
        }
    }
    eprintln!("rendered {} views", views.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of numbered ground-truth frames.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Frame times matching the ground-truth frames.
    #[arg(long)]
    pub times: PathBuf,
    /// Pose file; otherwise poses come from the trajectory flags.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[command(flatten)]
    pub trajectory: TrajectoryArgs,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let scene = GaussianScene::load_checkpoint(&args.checkpoint)?;
    let times = io::read_times(&args.times)?;
    let views = views_from_flags(&args.poses, &Some(args.times.clone()), &args.trajectory)?;
    if views.len() != times.len() {
        return Err(Error::InvalidArgument(format!(
            "{} poses for {} ground-truth frames",
            views.len(),
            times.len()
        )));
    }
    let report = eval_against_frames(&scene, &views, &args.gt_dir, &times)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(format!("write {}", args.out.display()), e))?;
    match report.mean_psnr_db {
        Some(p) => eprintln!("mean PSNR {p:.2} dB, mean SSIM {:.4}", report.mean_ssim),
        None => eprintln!("all views identical (infinite PSNR), mean SSIM {:.4}", report.mean_ssim),
    }
    Ok(report)
}

//! PSNR and SSIM evaluation of rendered views against ground-truth frames.

use crate::camera::SweepTrajectory;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::loss::{dssim, LossConfig};
use crate::render::render;
use crate::scene::GaussianScene;

/// Peak signal-to-noise ratio in dB with peak 1.0. Identical images report
/// positive infinity.
pub fn psnr(x: &Grid, y: &Grid) -> Result<f64> {
    x.check_same_resolution(y)?;
    let mse: f64 = x
        .values()
        .iter()
        .zip(y.values())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// SSIM for [0,1] images: the same windowed computation as the training
/// D-SSIM with dynamic range 1, without the gradient.
pub fn ssim_metric(x: &Grid, y: &Grid) -> Result<f64> {
    let cfg = LossConfig {
        dynamic_range: 1.0,
        ..LossConfig::default()
    };
    Ok(dssim(x, y, &cfg)?.0)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ViewEval {
    pub index: usize,
    pub t_us: u64,
    /// None when the images are identical (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub psnr_infinite: bool,
    pub ssim: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewEval>,
    /// Mean over views with finite PSNR; None if every view was infinite.
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: f64,
    pub infinite_psnr_count: usize,
}

impl EvalReport {
    pub fn from_pairs(pairs: &[(usize, u64, f64, f64)]) -> Self {
        let views: Vec<ViewEval> = pairs
            .iter()
            .map(|&(index, t_us, p, s)| ViewEval {
                index,
                t_us,
                psnr_db: p.is_finite().then_some(p),
                psnr_infinite: p.is_infinite(),
                ssim: s,
            })
            .collect();
        let finite: Vec<f64> = views.iter().filter_map(|v| v.psnr_db).collect();
        let mean_psnr_db = if finite.is_empty() {
            None
        } else {
            Some(finite.iter().sum::<f64>() / finite.len() as f64)
        };
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / views.len().max(1) as f64;
        EvalReport {
            infinite_psnr_count: views.iter().filter(|v| v.psnr_infinite).count(),
            views,
            mean_psnr_db,
            mean_ssim,
        }
    }
}

/// Renders the scene at each view time along the trajectory and scores the
/// result against the matching ground-truth frame.
pub fn evaluate(
    scene: &GaussianScene,
    trajectory: &SweepTrajectory,
    gt_frames: &[Grid],
    view_times: &[u64],
) -> Result<EvalReport> {
    if gt_frames.len() != view_times.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ground-truth frames for {} view times",
            gt_frames.len(),
            view_times.len()
        )));
    }
    if gt_frames.is_empty() {
        return Err(Error::InvalidArgument("no views to evaluate".into()));
    }
    let mut pairs = Vec::with_capacity(view_times.len());
    for (i, (&t, gt)) in view_times.iter().zip(gt_frames).enumerate() {
        let view = trajectory.pose_at(t)?;
        let rendered = render(scene, &view)?.image;
        pairs.push((i, t, psnr(&rendered, gt)?, ssim_metric(&rendered, gt)?));
    }
    Ok(EvalReport::from_pairs(&pairs))
}

//! Event-supervised 3D Gaussian splatting on the CPU.
//!
//! The pipeline: simulate (or capture) an event stream during a single camera
//! sweep, then optimize a set of anisotropic 3D Gaussians so that the
//! log-brightness difference between a rendered sweep view and the rendered
//! start view matches the accumulated event polarities. A single sharp frame
//! taken before the sweep anchors the absolute intensity.
//!
//! Modules map onto the pipeline stages:
//! - [`event`]: event records, streams, denoising, polarity accumulation
//! - [`scene`]: the optimizable Gaussian set and its covariance geometry
//! - [`camera`]: pinhole intrinsics and sweep trajectories
//! - [`render`]: tile-based differentiable rasterizer (forward + backward)
//! - [`loss`]: event-space training loss (linlog L2 + D-SSIM) and ablations
//! - [`sim`]: contrast-threshold event simulator for synthetic sweeps
//! - [`train`]: optimization loop with adaptive density control
//! - [`metrics`]: PSNR/SSIM evaluation against ground-truth frames
//! - [`io`]: binary event files, checkpoints, pose JSON, dataset manifests

pub mod camera;
pub mod error;
pub mod event;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use grid::Grid;

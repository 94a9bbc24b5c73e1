//! The optimization loop: pairs the sweep-start view with sampled sweep
//! views, drives render -> loss -> backward -> adaptive-moment updates, and
//! periodically densifies, prunes, and resets opacity.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::event::EventStream;
use crate::grid::{AccumImage, Grid};
use crate::loss::{log_image_grad, mse_loss, predicted_difference, total_loss, LossConfig};
use crate::render::{render, render_backward, ParamGradients};
use crate::scene::{logit, quaternion_to_rotation, Bounds, Gaussian, GaussianScene};
use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Linlog normalized L2 plus weighted D-SSIM.
    Ours,
    /// Plain mean squared error on the event images (ablation arm).
    Mse,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub position_lr_init: f64,
    pub position_lr_final: f64,
    pub color_lr: f64,
    pub opacity_lr: f64,
    pub scaling_lr: f64,
    pub rotation_lr: f64,
    pub densify_interval: u64,
    pub densify_from: u64,
    pub densify_until: u64,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub opacity_reset_interval: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub loss: LossKind,
    pub loss_cfg: LossConfig,
    /// Weight of the L2 anchor between the rendered start view and the
    /// captured initial frame; 0 disables the anchor.
    pub frame_anchor_weight: f64,
    pub init_count: usize,
    #[serde(skip)]
    pub init_bounds: Bounds,
    /// Optional hard cap on the Gaussian count during densification.
    pub max_gaussians: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 50_000,
            position_lr_init: 1.6e-4,
            position_lr_final: 1.6e-6,
            color_lr: 2.5e-3,
            opacity_lr: 5e-2,
            scaling_lr: 5e-3,
            rotation_lr: 1e-3,
            densify_interval: 100,
            densify_from: 500,
            densify_until: 50_000,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            opacity_reset_interval: 3_000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-15,
            seed: 0,
            checkpoint_interval: 5_000,
            loss: LossKind::Ours,
            loss_cfg: LossConfig::default(),
            frame_anchor_weight: 1.0,
            init_count: 10_000,
            init_bounds: Bounds::cube(0.5),
            max_gaussians: None,
        }
    }
}

impl TrainConfig {
    /// Log-linear position learning rate: `position_lr_init` at iteration 0,
    /// `position_lr_final` at the last iteration.
    pub fn position_lr(&self, iteration: u64) -> f64 {
        if self.iterations <= 1 {
            return self.position_lr_init;
        }
        let frac = iteration as f64 / (self.iterations - 1) as f64;
        self.position_lr_init * (self.position_lr_final / self.position_lr_init).powf(frac)
    }
}

/// Per-parameter-group first/second moment buffers, aligned with the scene.
#[derive(Debug, Clone, Default)]
struct MomentVecs {
    position: Vec<Vector3<f64>>,
    color: Vec<f64>,
    opacity: Vec<f64>,
    rotation: Vec<Vector4<f64>>,
    log_scale: Vec<Vector3<f64>>,
}

impl MomentVecs {
    fn zeros(n: usize) -> Self {
        MomentVecs {
            position: vec![Vector3::zeros(); n],
            color: vec![0.0; n],
            opacity: vec![0.0; n],
            rotation: vec![Vector4::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
        }
    }

    fn len(&self) -> usize {
        self.color.len()
    }
}

/// One training pair: the event stream, the posed views of the sweep, and
/// the optional anchor frame, with ground-truth event images precomputed as
/// prefixes from the start time (already scaled to log units by A).
#[derive(Debug, Clone)]
pub struct TrainDataset {
    pub stream: EventStream,
    pub views: Vec<CameraView>,
    pub initial_frame: Option<Grid>,
    /// `e_gt[k-1]` supervises the pair (view 0, view k).
    e_gt: Vec<AccumImage>,
}

impl TrainDataset {
    pub fn new(
        stream: EventStream,
        views: Vec<CameraView>,
        initial_frame: Option<Grid>,
    ) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least 2 views (start + sweep)".into(),
            ));
        }
        if views.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::InvalidArgument(
                "view timestamps must be strictly increasing".into(),
            ));
        }
        let res = (views[0].intrinsics.width, views[0].intrinsics.height);
        if stream.resolution() != res {
            return Err(Error::ResolutionMismatch {
                a: stream.resolution(),
                b: res,
            });
        }
        if let Some(frame) = &initial_frame {
            if frame.resolution() != res {
                return Err(Error::ResolutionMismatch {
                    a: frame.resolution(),
                    b: res,
                });
            }
        }
        let t0 = views[0].timestamp;
        let times: Vec<u64> = views[1..].iter().map(|v| v.timestamp).collect();
        let a = stream.contrast_threshold();
        let e_gt = stream
            .split_windows(t0, &times)?
            .into_iter()
            .map(|img| img.scale(a))
            .collect();
        Ok(TrainDataset {
            stream,
            views,
            initial_frame,
            e_gt,
        })
    }

    /// Ground-truth event image (scaled by A) for the pair (view 0, view k).
    pub fn e_gt_for(&self, k: usize) -> &AccumImage {
        &self.e_gt[k - 1]
    }
}

#[derive(Debug)]
pub struct TrainState {
    pub scene: GaussianScene,
    pub iteration: u64,
    m: MomentVecs,
    v: MomentVecs,
    grad_norm_accum: Vec<f64>,
    grad_norm_count: Vec<u32>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(scene: GaussianScene, seed: u64) -> Self {
        let n = scene.len();
        TrainState {
            scene,
            iteration: 0,
            m: MomentVecs::zeros(n),
            v: MomentVecs::zeros(n),
            grad_norm_accum: vec![0.0; n],
            grad_norm_count: vec![0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Moment buffers must track the Gaussian count at all times.
    pub fn buffers_aligned(&self) -> bool {
        let n = self.scene.len();
        self.m.len() == n
            && self.v.len() == n
            && self.grad_norm_accum.len() == n
            && self.grad_norm_count.len() == n
    }
}

/// Loss breakdown of one optimization step. `total` is the full optimized
/// objective including the frame anchor.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StepReport {
    pub iteration: u64,
    pub view_index: usize,
    pub total: f64,
    pub event_term: f64,
    pub dssim_term: f64,
    pub anchor_term: f64,
}

/// Event-supervision objective of one view pair and its analytic gradients
/// with respect to every Gaussian parameter: render both views, form the
/// predicted difference, evaluate the combined loss against `e_gt`, and
/// backpropagate through both renders. The training step adds the frame
/// anchor and the optimizer on top of this same chain.
pub fn pair_loss_and_gradients(
    scene: &GaussianScene,
    view0: &CameraView,
    viewk: &CameraView,
    e_gt: &AccumImage,
    loss_cfg: &LossConfig,
) -> Result<(f64, ParamGradients)> {
    let r0 = render(scene, view0)?;
    let rk = render(scene, viewk)?;
    let e_pred = predicted_difference(&r0.image, &rk.image, loss_cfg)?;
    let lv = total_loss(&e_pred, e_gt, loss_cfg)?;
    let dlog0 = log_image_grad(&r0.image, loss_cfg);
    let dlogk = log_image_grad(&rk.image, loss_cfg);
    let d0 = lv.d_epred.zip_map(&dlog0, |d, g| d * g)?;
    let dk = lv.d_epred.zip_map(&dlogk, |d, g| -d * g)?;
    let mut grads = render_backward(scene, view0, &r0, &d0)?;
    grads.accumulate(&render_backward(scene, viewk, &rk, &dk)?);
    Ok((lv.total, grads))
}

#[inline]
fn adam_scalar(
    param: &mut f64,
    grad: f64,
    m: &mut f64,
    v: &mut f64,
    lr: f64,
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * grad;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * grad * grad;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *param -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
}

/// One optimization step: sample a sweep view, render the pair, evaluate the
/// loss, backpropagate through both renders, and update every parameter
/// group with its own learning rate.
pub fn train_step(
    state: &mut TrainState,
    dataset: &TrainDataset,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let k = state.rng.gen_range(1..dataset.views.len());
    let view0 = &dataset.views[0];
    let viewk = &dataset.views[k];

    let r0 = render(&state.scene, view0)?;
    let rk = render(&state.scene, viewk)?;
    let e_pred = predicted_difference(&r0.image, &rk.image, &cfg.loss_cfg)?;
    let e_gt = dataset.e_gt_for(k);

    let (event_term, dssim_term, loss_total, d_epred) = match cfg.loss {
        LossKind::Ours => {
            let lv = total_loss(&e_pred, e_gt, &cfg.loss_cfg)?;
            (lv.event_term, lv.dssim_term, lv.total, lv.d_epred)
        }
        LossKind::Mse => {
            let (l, d) = mse_loss(&e_pred, e_gt)?;
            (l, 0.0, l, d)
        }
    };

    // Chain d(E_pred) into both rendered images through the log mapping.
    let dlog0 = log_image_grad(&r0.image, &cfg.loss_cfg);
    let dlogk = log_image_grad(&rk.image, &cfg.loss_cfg);
    let mut d_image0 = d_epred.zip_map(&dlog0, |d, g| d * g)?;
    let d_imagek = d_epred.zip_map(&dlogk, |d, g| -d * g)?;

    // Optional L2 anchor of the start view against the captured frame.
    let mut anchor_term = 0.0;
    if cfg.frame_anchor_weight > 0.0 {
        if let Some(frame) = &dataset.initial_frame {
            let n = frame.len() as f64;
            let w = cfg.frame_anchor_weight;
            let mut acc = 0.0;
            for ((d, &rv), &fv) in d_image0
                .values_mut()
                .iter_mut()
                .zip(r0.image.values())
                .zip(frame.values())
            {
                let diff = rv - fv;
                acc += diff * diff;
                *d += w * 2.0 * diff / n;
            }
            anchor_term = w * acc / n;
        }
    }

    let total = loss_total + anchor_term;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: state.iteration,
            detail: format!("event {event_term}, dssim {dssim_term}, anchor {anchor_term}"),
        });
    }

    let mut grads = render_backward(&state.scene, view0, &r0, &d_image0)?;
    let grads_k = render_backward(&state.scene, viewk, &rk, &d_imagek)?;
    grads.accumulate(&grads_k);

    apply_adam(state, cfg, &grads);

    for i in 0..state.scene.len() {
        if grads.visible[i] {
            state.grad_norm_accum[i] += grads.mean2d_grad_norm[i];
            state.grad_norm_count[i] += 1;
        }
    }

    let report = StepReport {
        iteration: state.iteration,
        view_index: k,
        total,
        event_term,
        dssim_term,
        anchor_term,
    };
    state.iteration += 1;
    Ok(report)
}

fn apply_adam(state: &mut TrainState, cfg: &TrainConfig, grads: &ParamGradients) {
    let t = (state.iteration + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let pos_lr = cfg.position_lr(state.iteration);
    for i in 0..state.scene.len() {
        let g = &mut state.scene.gaussians[i];
        for c in 0..3 {
            adam_scalar(
                &mut g.position[c],
                grads.d_position[i][c],
                &mut state.m.position[i][c],
                &mut state.v.position[i][c],
                pos_lr,
                cfg,
                bc1,
                bc2,
            );
            adam_scalar(
                &mut g.log_scale[c],
                grads.d_log_scale[i][c],
                &mut state.m.log_scale[i][c],
                &mut state.v.log_scale[i][c],
                cfg.scaling_lr,
                cfg,
                bc1,
                bc2,
            );
        }
        for c in 0..4 {
            adam_scalar(
                &mut g.rotation[c],
                grads.d_rotation[i][c],
                &mut state.m.rotation[i][c],
                &mut state.v.rotation[i][c],
                cfg.rotation_lr,
                cfg,
                bc1,
                bc2,
            );
        }
        adam_scalar(
            &mut g.color,
            grads.d_color[i],
            &mut state.m.color[i],
            &mut state.v.color[i],
            cfg.color_lr,
            cfg,
            bc1,
            bc2,
        );
        adam_scalar(
            &mut g.opacity_logit,
            grads.d_opacity_logit[i],
            &mut state.m.opacity[i],
            &mut state.v.opacity[i],
            cfg.opacity_lr,
            cfg,
            bc1,
            bc2,
        );
    }
}

const PRUNE_OPACITY: f64 = 0.005;
const RESET_OPACITY_CAP: f64 = 0.01;
const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Adaptive density control: clones small high-gradient Gaussians, splits
/// large ones into two sampled children at reduced scale, prunes transparent
/// ones, and keeps the optimizer state aligned. Gradient statistics reset.
pub fn densify_and_prune(state: &mut TrainState, cfg: &TrainConfig) {
    let n = state.scene.len();
    let extent = state.scene.extent();
    let dense_limit = cfg.percent_dense * extent;
    let can_grow = cfg.max_gaussians.map_or(true, |cap| n < cap);

    let mut gaussians = Vec::with_capacity(n);
    let mut m = MomentVecs::zeros(0);
    let mut v = MomentVecs::zeros(0);

    let push = |g: Gaussian,
                    mom: Option<(usize, &MomentVecs, &MomentVecs)>,
                    m: &mut MomentVecs,
                    v: &mut MomentVecs,
                    gaussians: &mut Vec<Gaussian>| {
        gaussians.push(g);
        match mom {
            Some((i, om, ov)) => {
                m.position.push(om.position[i]);
                m.color.push(om.color[i]);
                m.opacity.push(om.opacity[i]);
                m.rotation.push(om.rotation[i]);
                m.log_scale.push(om.log_scale[i]);
                v.position.push(ov.position[i]);
                v.color.push(ov.color[i]);
                v.opacity.push(ov.opacity[i]);
                v.rotation.push(ov.rotation[i]);
                v.log_scale.push(ov.log_scale[i]);
            }
            None => {
                m.position.push(Vector3::zeros());
                m.color.push(0.0);
                m.opacity.push(0.0);
                m.rotation.push(Vector4::zeros());
                m.log_scale.push(Vector3::zeros());
                v.position.push(Vector3::zeros());
                v.color.push(0.0);
                v.opacity.push(0.0);
                v.rotation.push(Vector4::zeros());
                v.log_scale.push(Vector3::zeros());
            }
        }
    };

    for i in 0..n {
        let g = state.scene.gaussians[i];
        if g.activated_opacity() < PRUNE_OPACITY {
            continue;
        }
        let mean_grad = if state.grad_norm_count[i] > 0 {
            state.grad_norm_accum[i] / state.grad_norm_count[i] as f64
        } else {
            0.0
        };
        if mean_grad > cfg.densify_grad_threshold && can_grow {
            let scales = g.activated_scale();
            if scales.max() > dense_limit {
                // Split: parent replaced by two children sampled inside it.
                let rot = quaternion_to_rotation(&g.rotation)
                    .unwrap_or_else(|_| nalgebra::Matrix3::identity());
                for _ in 0..2 {
                    let local = Vector3::new(
                        state.rng.gen_range(-1.0..1.0) * scales.x,
                        state.rng.gen_range(-1.0..1.0) * scales.y,
                        state.rng.gen_range(-1.0..1.0) * scales.z,
                    );
                    let child = Gaussian {
                        position: g.position + rot * local,
                        log_scale: g.log_scale.map(|s| s - SPLIT_SCALE_DIVISOR.ln()),
                        ..g
                    };
                    push(child, None, &mut m, &mut v, &mut gaussians);
                }
            } else {
                // Clone: keep the parent (with its moments) plus a fresh copy.
                push(g, Some((i, &state.m, &state.v)), &mut m, &mut v, &mut gaussians);
                push(g, None, &mut m, &mut v, &mut gaussians);
            }
        } else {
            push(g, Some((i, &state.m, &state.v)), &mut m, &mut v, &mut gaussians);
        }
    }

    state.scene.gaussians = gaussians;
    state.m = m;
    state.v = v;
    state.grad_norm_accum = vec![0.0; state.scene.len()];
    state.grad_norm_count = vec![0; state.scene.len()];
}

/// Clamps every opacity so the activated value is at most the reset cap, and
/// clears the opacity optimizer state so recovery is not damped by stale
/// second moments.
pub fn reset_opacity(state: &mut TrainState) {
    let cap_logit = logit(RESET_OPACITY_CAP);
    for g in &mut state.scene.gaussians {
        if g.activated_opacity() > RESET_OPACITY_CAP {
            g.opacity_logit = cap_logit;
        }
    }
    for i in 0..state.m.len() {
        state.m.opacity[i] = 0.0;
        state.v.opacity[i] = 0.0;
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub scene: GaussianScene,
    pub history: Vec<StepReport>,
}

/// Runs the full schedule from a fresh random initialization. Checkpoints go
/// to `checkpoint_dir` when given; the final scene is always returned.
pub fn train(
    dataset: &TrainDataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutputs> {
    let scene = GaussianScene::random_init(cfg.init_count, cfg.init_bounds, cfg.seed)?;
    let mut state = TrainState::new(scene, cfg.seed);
    let mut history = Vec::with_capacity(cfg.iterations.min(1 << 20) as usize);

    for _ in 0..cfg.iterations {
        let report = train_step(&mut state, dataset, cfg)?;
        history.push(report);
        let it = state.iteration; // 1-based after the step
        if it >= cfg.densify_from
            && it <= cfg.densify_until
            && cfg.densify_interval > 0
            && it % cfg.densify_interval == 0
        {
            densify_and_prune(&mut state, cfg);
        }
        if cfg.opacity_reset_interval > 0 && it % cfg.opacity_reset_interval == 0 && it < cfg.iterations {
            reset_opacity(&mut state);
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0 && it < cfg.iterations
            {
                let path = dir.join(format!("checkpoint_{it:06}.swgs"));
                state.scene.save_checkpoint(&path)?;
            }
        }
        debug_assert!(state.buffers_aligned());
    }

    if let Some(dir) = checkpoint_dir {
        state.scene.save_checkpoint(&dir.join("checkpoint_final.swgs"))?;
    }
    Ok(TrainOutputs {
        scene: state.scene,
        history,
    })
}

/// Loss-curve CSV: iteration, total, event term, SSIM term.
pub fn write_loss_csv(path: &Path, history: &[StepReport]) -> Result<()> {
    let mut out = String::from("iteration,total,event_term,dssim_term\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iteration, r.total, r.event_term, r.dssim_term
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

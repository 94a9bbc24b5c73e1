//! Tile-based differentiable rasterizer: forward alpha compositing of
//! depth-sorted splats and the analytic backward pass producing gradients of
//! the image with respect to every Gaussian parameter.
//!
//! Determinism contract: identical inputs produce bit-identical images and
//! gradients regardless of worker-thread count. Compositing order is fixed by
//! a global front-to-back depth sort (ties broken by Gaussian index), tiles
//! own disjoint pixels, and per-tile gradient buffers are merged sequentially
//! in tile order.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scene::{
    build_covariance, projection_jacobian, project_covariance, quaternion_to_rotation,
    GaussianScene, NEAR_PLANE,
};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

pub const TILE_SIZE: u32 = 16;
/// Per-splat alpha is clamped here for backward-pass stability.
pub const ALPHA_MAX: f64 = 0.99;
/// A pixel stops compositing once its transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Splat footprint radius in standard deviations of the major eigenvalue,
/// used to bin splats into tiles.
pub const FOOTPRINT_SIGMAS: f64 = 6.0;

/// A splat contributes exactly zero where the Gaussian exponent falls below
/// this, i.e. beyond 6 standard deviations along any direction. The tile
/// binning circle is exactly conservative for this rule: outside the
/// 6-sigma-major circle the exponent is always below the cutoff.
pub const WEIGHT_CUTOFF_POWER: f64 = -0.5 * FOOTPRINT_SIGMAS * FOOTPRINT_SIGMAS;

/// The splat weight is the Gaussian shifted to reach exactly zero at the
/// cutoff and rescaled to keep weight 1 at the center:
/// w = (exp(power) - exp(cutoff)) / (1 - exp(cutoff)).
/// The shift is ~1.5e-8, far below every test tolerance, and it makes the
/// weight continuous at the footprint boundary so finite-difference gradient
/// checks see no jump there.
#[inline(always)]
pub fn splat_weight_from_power(power: f64) -> f64 {
    let cut = WEIGHT_CUTOFF_POWER.exp();
    (power.exp() - cut) / (1.0 - cut)
}

/// Everything cached per surviving splat for the backward pass.
#[derive(Debug, Clone)]
pub struct SplatCache {
    pub gaussian_index: u32,
    /// Camera-space depth (z).
    pub depth: f64,
    /// Projected center in continuous pixel coordinates.
    pub mean_px: Vector2<f64>,
    /// Camera-space mean.
    pub mean_cam: Vector3<f64>,
    /// Projected 2D covariance (with the diagonal floor).
    pub cov2: Matrix2<f64>,
    /// Inverse of `cov2` as (a, b, c) with Q = [[a, b], [b, c]].
    pub conic: [f64; 3],
    /// Tile-binning footprint radius in pixels (6 sigma of the major
    /// eigenvalue).
    pub radius: f64,
    pub alpha_base: f64,
    pub color: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct RenderTag {
    gaussian_count: usize,
    param_checksum: u64,
    view: CameraView,
}

/// Forward render output plus the per-splat cache the backward pass needs.
#[derive(Debug, Clone)]
pub struct RenderResult {
    /// Grayscale radiance in [0, 1).
    pub image: Grid,
    /// Residual transmittance per pixel in [0, 1].
    pub transmittance: Grid,
    /// Depth-sorted surviving splats.
    pub splats: Vec<SplatCache>,
    /// Splat indices (into `splats`) per tile, depth-sorted.
    tile_lists: Vec<Vec<u32>>,
    tiles_x: u32,
    tag: RenderTag,
}

/// Per-Gaussian parameter gradients, aligned with the scene. Culled Gaussians
/// hold exact zeros.
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub d_position: Vec<Vector3<f64>>,
    /// With respect to the stored pre-sigmoid color.
    pub d_color: Vec<f64>,
    pub d_opacity_logit: Vec<f64>,
    /// With respect to the stored (unnormalized) quaternion.
    pub d_rotation: Vec<Vector4<f64>>,
    pub d_log_scale: Vec<Vector3<f64>>,
    /// Norm of the accumulated 2D center gradient in normalized device
    /// coordinates (pixel gradients scaled by half the image size), the
    /// units the density-control threshold is calibrated in.
    pub mean2d_grad_norm: Vec<f64>,
    /// Whether the Gaussian survived culling in the forward pass.
    pub visible: Vec<bool>,
}

impl ParamGradients {
    pub fn zeros(n: usize) -> Self {
        ParamGradients {
            d_position: vec![Vector3::zeros(); n],
            d_color: vec![0.0; n],
            d_opacity_logit: vec![0.0; n],
            d_rotation: vec![Vector4::zeros(); n],
            d_log_scale: vec![Vector3::zeros(); n],
            mean2d_grad_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_color.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_color.is_empty()
    }

    /// Elementwise sum, used to combine the gradients of the two renders of a
    /// training pair. Visibility is or-ed, the 2D stats norms add.
    pub fn accumulate(&mut self, other: &ParamGradients) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.d_position[i] += other.d_position[i];
            self.d_color[i] += other.d_color[i];
            self.d_opacity_logit[i] += other.d_opacity_logit[i];
            self.d_rotation[i] += other.d_rotation[i];
            self.d_log_scale[i] += other.d_log_scale[i];
            self.mean2d_grad_norm[i] += other.mean2d_grad_norm[i];
            self.visible[i] = self.visible[i] || other.visible[i];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_position.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.d_color.iter().all(|v| v.is_finite())
            && self.d_opacity_logit.iter().all(|v| v.is_finite())
            && self.d_rotation.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self.d_log_scale.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

fn param_checksum(scene: &GaussianScene) -> u64 {
    let mut acc = 0u64;
    for g in &scene.gaussians {
        for v in [
            g.position.x,
            g.position.y,
            g.position.z,
            g.color,
            g.opacity_logit,
            g.log_scale.x,
        ] {
            acc = acc.rotate_left(7) ^ v.to_bits();
        }
    }
    acc
}

/// Major eigenvalue of a symmetric 2x2 matrix.
#[inline]
fn max_eigenvalue_2x2(m: &Matrix2<f64>) -> f64 {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    0.5 * ((a + c) + ((a - c) * (a - c) + 4.0 * b * b).sqrt())
}

/// Projects one Gaussian; returns None when culled (behind the near plane,
/// degenerate, or footprint entirely off-screen).
fn project_splat(
    scene: &GaussianScene,
    view: &CameraView,
    index: usize,
) -> Option<SplatCache> {
    let g = &scene.gaussians[index];
    let mean_cam = view.world_to_cam(&g.position);
    if mean_cam.z <= NEAR_PLANE {
        return None;
    }
    let sigma = build_covariance(&g.rotation, &g.activated_scale()).ok()?;
    let cov2 = project_covariance(&sigma, view, &mean_cam).ok()?;
    let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [
        cov2[(1, 1)] / det,
        -cov2[(0, 1)] / det,
        cov2[(0, 0)] / det,
    ];
    let radius = FOOTPRINT_SIGMAS * max_eigenvalue_2x2(&cov2).sqrt();
    if !radius.is_finite() {
        return None;
    }
    let it = &view.intrinsics;
    let mean_px = Vector2::new(
        it.fx * mean_cam.x / mean_cam.z + it.cx,
        it.fy * mean_cam.y / mean_cam.z + it.cy,
    );
    if !mean_px.x.is_finite() || !mean_px.y.is_finite() {
        return None;
    }
    // Cull when the footprint circle cannot touch the image rectangle.
    if mean_px.x + radius < 0.0
        || mean_px.x - radius > it.width as f64
        || mean_px.y + radius < 0.0
        || mean_px.y - radius > it.height as f64
    {
        return None;
    }
    Some(SplatCache {
        gaussian_index: index as u32,
        depth: mean_cam.z,
        mean_px,
        mean_cam,
        cov2,
        conic,
        radius,
        alpha_base: g.activated_opacity(),
        color: g.activated_color(),
    })
}

fn tile_count(pixels: u32) -> u32 {
    pixels.div_ceil(TILE_SIZE)
}

/// Hot per-splat data for the pixel loops, packed for cache locality.
#[derive(Clone, Copy)]
struct HotSplat {
    mx: f64,
    my: f64,
    ca: f64,
    cb: f64,
    cc: f64,
    alpha_base: f64,
    color: f64,
}

impl HotSplat {
    fn of(s: &SplatCache) -> Self {
        HotSplat {
            mx: s.mean_px.x,
            my: s.mean_px.y,
            ca: s.conic[0],
            cb: s.conic[1],
            cc: s.conic[2],
            alpha_base: s.alpha_base,
            color: s.color,
        }
    }

    /// Gaussian exponent at a pixel center; contributes only above the
    /// weight cutoff.
    #[inline(always)]
    fn power(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mx;
        let dy = py - self.my;
        -0.5 * (self.ca * dx * dx + self.cc * dy * dy) - self.cb * dx * dy
    }
}

/// Renders the scene from a view. Gaussians are culled, projected, globally
/// depth-sorted front to back, binned into 16x16 tiles, and composited per
/// pixel with early termination.
pub fn render(scene: &GaussianScene, view: &CameraView) -> Result<RenderResult> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let width = view.intrinsics.width;
    let height = view.intrinsics.height;

    let mut splats: Vec<SplatCache> = (0..scene.len())
        .into_par_iter()
        .map(|i| project_splat(scene, view, i))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    splats.sort_unstable_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });

    let tiles_x = tile_count(width);
    let tiles_y = tile_count(height);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (si, s) in splats.iter().enumerate() {
        let tx0 = ((s.mean_px.x - s.radius).floor().max(0.0) as u32) / TILE_SIZE;
        let ty0 = ((s.mean_px.y - s.radius).floor().max(0.0) as u32) / TILE_SIZE;
        let tx1 = (((s.mean_px.x + s.radius).ceil() as i64).min(width as i64 - 1).max(0) as u32)
            / TILE_SIZE;
        let ty1 = (((s.mean_px.y + s.radius).ceil() as i64).min(height as i64 - 1).max(0) as u32)
            / TILE_SIZE;
        for ty in ty0..=ty1.min(tiles_y - 1) {
            for tx in tx0..=tx1.min(tiles_x - 1) {
                tile_lists[(ty * tiles_x + tx) as usize].push(si as u32);
            }
        }
    }

    let hot: Vec<HotSplat> = splats.iter().map(HotSplat::of).collect();
    let tile_results: Vec<(Vec<f64>, Vec<f64>)> = (0..tile_lists.len() as u32)
        .into_par_iter()
        .map(|tile| {
            let tx = tile % tiles_x;
            let ty = tile / tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(width);
            let y1 = (y0 + TILE_SIZE).min(height);
            let list = &tile_lists[tile as usize];
            let mut colors = vec![0.0; ((x1 - x0) * (y1 - y0)) as usize];
            let mut trans = vec![1.0; colors.len()];
            for py in y0..y1 {
                for px in x0..x1 {
                    let cx = px as f64 + 0.5;
                    let cy = py as f64 + 0.5;
                    let mut t = 1.0;
                    let mut c = 0.0;
                    for &si in list {
                        if t < TRANSMITTANCE_MIN {
                            break;
                        }
                        let s = &hot[si as usize];
                        let power = s.power(cx, cy);
                        if power < WEIGHT_CUTOFF_POWER {
                            continue;
                        }
                        let alpha =
                            (s.alpha_base * splat_weight_from_power(power)).min(ALPHA_MAX);
                        c += s.color * alpha * t;
                        t *= 1.0 - alpha;
                    }
                    let local = ((py - y0) * (x1 - x0) + (px - x0)) as usize;
                    colors[local] = c;
                    trans[local] = t;
                }
            }
            (colors, trans)
        })
        .collect();

    let mut image = Grid::zeros(width, height);
    let mut transmittance = Grid::zeros(width, height);
    for (tile, (colors, trans)) in tile_results.into_iter().enumerate() {
        let tx = tile as u32 % tiles_x;
        let ty = tile as u32 / tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(width);
        let y1 = (y0 + TILE_SIZE).min(height);
        for py in y0..y1 {
            for px in x0..x1 {
                let local = ((py - y0) * (x1 - x0) + (px - x0)) as usize;
                image.set(px, py, colors[local]);
                transmittance.set(px, py, trans[local]);
            }
        }
    }

    Ok(RenderResult {
        image,
        transmittance,
        splats,
        tile_lists,
        tiles_x,
        tag: RenderTag {
            gaussian_count: scene.len(),
            param_checksum: param_checksum(scene),
            view: view.clone(),
        },
    })
}

/// Renders the same scene from the sweep-start view and a sweep view with
/// identical settings.
pub fn render_grayscale_pair(
    scene: &GaussianScene,
    view_0: &CameraView,
    view_k: &CameraView,
) -> Result<(RenderResult, RenderResult)> {
    Ok((render(scene, view_0)?, render(scene, view_k)?))
}

/// Per-splat accumulators produced by the pixel loops of one tile.
#[derive(Clone, Copy, Default)]
struct SplatAccum {
    d_color: f64,
    d_alpha_base: f64,
    d_mu: [f64; 2],
    d_conic: [f64; 3],
}

/// Backward pass. `d_image` holds dL/d(pixel value); the return value holds
/// dL/d(parameter) for every Gaussian, where L = sum(d_image * image).
///
/// The per-pixel blending is recomputed front to back with the same
/// termination as the forward pass, using the cached final pixel values to
/// form suffix contributions without storing per-pixel per-splat weights.
pub fn render_backward(
    scene: &GaussianScene,
    view: &CameraView,
    result: &RenderResult,
    d_image: &Grid,
) -> Result<ParamGradients> {
    let expected = RenderTag {
        gaussian_count: scene.len(),
        param_checksum: param_checksum(scene),
        view: view.clone(),
    };
    if expected != result.tag {
        return Err(Error::RenderTagMismatch);
    }
    d_image.check_same_resolution(&result.image)?;

    let width = view.intrinsics.width;
    let height = view.intrinsics.height;
    let tiles_x = result.tiles_x;
    let splats = &result.splats;

    // Pixel-loop phase: parallel over tiles, each producing gradients
    // aligned with its own splat list.
    let hot: Vec<HotSplat> = splats.iter().map(HotSplat::of).collect();
    let tile_grads: Vec<Vec<SplatAccum>> = (0..result.tile_lists.len() as u32)
        .into_par_iter()
        .map(|tile| {
            let tx = tile % tiles_x;
            let ty = tile / tiles_x;
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(width);
            let y1 = (y0 + TILE_SIZE).min(height);
            let list = &result.tile_lists[tile as usize];
            let mut acc = vec![SplatAccum::default(); list.len()];
            for py in y0..y1 {
                for px in x0..x1 {
                    let upstream = d_image.get(px, py);
                    if upstream == 0.0 {
                        continue;
                    }
                    let c_total = result.image.get(px, py);
                    let cx = px as f64 + 0.5;
                    let cy = py as f64 + 0.5;
                    let mut t = 1.0;
                    let mut partial = 0.0;
                    for (li, &si) in list.iter().enumerate() {
                        if t < TRANSMITTANCE_MIN {
                            break;
                        }
                        let s = &hot[si as usize];
                        let power = s.power(cx, cy);
                        if power < WEIGHT_CUTOFF_POWER {
                            continue;
                        }
                        let w = splat_weight_from_power(power);
                        let alpha_raw = s.alpha_base * w;
                        let alpha = alpha_raw.min(ALPHA_MAX);
                        let contrib = s.color * alpha * t;
                        partial += contrib;

                        let dx = cx - s.mx;
                        let dy = cy - s.my;
                        let a = &mut acc[li];
                        a.d_color += upstream * alpha * t;
                        let d_alpha =
                            upstream * (s.color * t - (c_total - partial) / (1.0 - alpha));
                        if alpha_raw < ALPHA_MAX {
                            a.d_alpha_base += d_alpha * w;
                            // dw/dpower = exp(power) / (1 - exp(cutoff)).
                            let d_power = d_alpha * s.alpha_base * power.exp()
                                / (1.0 - WEIGHT_CUTOFF_POWER.exp());
                            // d power / d mu = Q delta with delta = pixel - mu.
                            a.d_mu[0] += d_power * (s.ca * dx + s.cb * dy);
                            a.d_mu[1] += d_power * (s.cb * dx + s.cc * dy);
                            a.d_conic[0] += d_power * (-0.5 * dx * dx);
                            a.d_conic[1] += d_power * (-dx * dy);
                            a.d_conic[2] += d_power * (-0.5 * dy * dy);
                        }
                        t *= 1.0 - alpha;
                    }
                }
            }
            acc
        })
        .collect();

    // Deterministic merge in tile order into per-splat totals.
    let mut totals = vec![SplatAccum::default(); splats.len()];
    for (tile, grads) in tile_grads.iter().enumerate() {
        let list = &result.tile_lists[tile];
        for (li, g) in grads.iter().enumerate() {
            let t = &mut totals[list[li] as usize];
            t.d_color += g.d_color;
            t.d_alpha_base += g.d_alpha_base;
            t.d_mu[0] += g.d_mu[0];
            t.d_mu[1] += g.d_mu[1];
            t.d_conic[0] += g.d_conic[0];
            t.d_conic[1] += g.d_conic[1];
            t.d_conic[2] += g.d_conic[2];
        }
    }

    // Geometric chain per splat, parallel, scattered into scene-aligned
    // buffers afterwards.
    let chained: Vec<(u32, SplatParamGrads)> = splats
        .par_iter()
        .zip(totals.par_iter())
        .map(|(s, acc)| (s.gaussian_index, chain_splat(scene, view, s, acc)))
        .collect();

    let mut out = ParamGradients::zeros(scene.len());
    for (gi, g) in chained {
        let gi = gi as usize;
        out.d_position[gi] = g.d_position;
        out.d_color[gi] = g.d_color;
        out.d_opacity_logit[gi] = g.d_opacity_logit;
        out.d_rotation[gi] = g.d_rotation;
        out.d_log_scale[gi] = g.d_log_scale;
        out.mean2d_grad_norm[gi] = g.mean2d_norm;
        out.visible[gi] = true;
    }
    Ok(out)
}

struct SplatParamGrads {
    d_position: Vector3<f64>,
    d_color: f64,
    d_opacity_logit: f64,
    d_rotation: Vector4<f64>,
    d_log_scale: Vector3<f64>,
    mean2d_norm: f64,
}

/// Chains accumulated (color, alpha, center, conic) gradients of one splat
/// back to its 3D parameters through the projection and activations.
fn chain_splat(
    scene: &GaussianScene,
    view: &CameraView,
    s: &SplatCache,
    acc: &SplatAccum,
) -> SplatParamGrads {
    let g = &scene.gaussians[s.gaussian_index as usize];
    let it = &view.intrinsics;
    let d_mu = Vector2::new(acc.d_mu[0], acc.d_mu[1]);

    // Conic -> projected covariance: Q = S2^-1, dS2 = -Q dQ Q with the
    // off-diagonal gradient split between the two symmetric slots.
    let q_mat = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let d_q = Matrix2::new(
        acc.d_conic[0],
        acc.d_conic[1] / 2.0,
        acc.d_conic[1] / 2.0,
        acc.d_conic[2],
    );
    let mut d_s2 = -q_mat * d_q * q_mat;
    d_s2 = (d_s2 + d_s2.transpose()) * 0.5;

    // S2 = J Scam J^T + floor I, Scam = Rv Sigma Rv^T, Sigma = R D R^T.
    let rot3 = quaternion_to_rotation(&g.rotation).expect("splat survived projection");
    let scales = g.activated_scale();
    let d_diag = Matrix3::from_diagonal(&scales.map(|v| v * v));
    let sigma = rot3 * d_diag * rot3.transpose();
    let sigma_cam = view.rotation * sigma * view.rotation.transpose();
    let jac: Matrix2x3<f64> = projection_jacobian(it.fx, it.fy, &s.mean_cam);

    let d_sigma_cam = jac.transpose() * d_s2 * jac;
    let mut d_sigma = view.rotation.transpose() * d_sigma_cam * view.rotation;
    d_sigma = (d_sigma + d_sigma.transpose()) * 0.5;
    let d_jac = 2.0 * d_s2 * jac * sigma_cam;

    // J and mu both depend on the camera-space mean.
    let (x, y, z) = (s.mean_cam.x, s.mean_cam.y, s.mean_cam.z);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_mean_cam = Vector3::new(
        d_jac[(0, 2)] * (-it.fx / z2),
        d_jac[(1, 2)] * (-it.fy / z2),
        d_jac[(0, 0)] * (-it.fx / z2)
            + d_jac[(0, 2)] * (2.0 * it.fx * x / z3)
            + d_jac[(1, 1)] * (-it.fy / z2)
            + d_jac[(1, 2)] * (2.0 * it.fy * y / z3),
    );
    d_mean_cam += jac.transpose() * d_mu;
    let d_position = view.rotation.transpose() * d_mean_cam;

    // Sigma = R D R^T with D = diag(exp(2 s)).
    let d_rot3 = 2.0 * d_sigma * rot3 * d_diag;
    let m = rot3.transpose() * d_sigma * rot3;
    let d_log_scale = Vector3::new(
        m[(0, 0)] * 2.0 * scales.x * scales.x,
        m[(1, 1)] * 2.0 * scales.y * scales.y,
        m[(2, 2)] * 2.0 * scales.z * scales.z,
    );

    // Rotation matrix -> unit quaternion -> stored quaternion.
    let n = g.rotation.norm();
    let qh = g.rotation / n;
    let (w, xq, yq, zq) = (qh[0], qh[1], qh[2], qh[3]);
    let gm = &d_rot3;
    let d_qhat = Vector4::new(
        2.0 * (zq * (gm[(1, 0)] - gm[(0, 1)])
            + yq * (gm[(0, 2)] - gm[(2, 0)])
            + xq * (gm[(2, 1)] - gm[(1, 2)])),
        2.0 * (yq * (gm[(0, 1)] + gm[(1, 0)])
            + zq * (gm[(0, 2)] + gm[(2, 0)])
            + w * (gm[(2, 1)] - gm[(1, 2)])
            - 2.0 * xq * (gm[(1, 1)] + gm[(2, 2)])),
        2.0 * (xq * (gm[(0, 1)] + gm[(1, 0)])
            + w * (gm[(0, 2)] - gm[(2, 0)])
            + zq * (gm[(1, 2)] + gm[(2, 1)])
            - 2.0 * yq * (gm[(0, 0)] + gm[(2, 2)])),
        2.0 * (xq * (gm[(0, 2)] + gm[(2, 0)])
            + w * (gm[(1, 0)] - gm[(0, 1)])
            + yq * (gm[(1, 2)] + gm[(2, 1)])
            - 2.0 * zq * (gm[(0, 0)] + gm[(1, 1)])),
    );
    let d_rotation = (d_qhat - qh * qh.dot(&d_qhat)) / n;

    // Activations.
    let d_opacity_logit = acc.d_alpha_base * s.alpha_base * (1.0 - s.alpha_base);
    let d_color = acc.d_color * s.color * (1.0 - s.color);

    SplatParamGrads {
        d_position,
        d_color,
        d_opacity_logit,
        d_rotation,
        d_log_scale,
        mean2d_norm: Vector2::new(
            d_mu.x * it.width as f64 / 2.0,
            d_mu.y * it.height as f64 / 2.0,
        )
        .norm(),
    }
}

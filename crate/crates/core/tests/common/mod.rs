//! Shared generators and finite-difference machinery for the oracle tests.

use evsplat_core::camera::{CameraView, Intrinsics};
use evsplat_core::grid::Grid;
use evsplat_core::scene::{logit, Bounds, Gaussian, GaussianScene};
use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random anisotropic scene inside a small box at the origin. Opacity range
/// is a parameter because the early-termination and clamp behaviors depend
/// on how much alpha can stack on one pixel.
pub fn random_scene(
    rng: &mut ChaCha8Rng,
    count: usize,
    alpha_range: (f64, f64),
) -> GaussianScene {
    let bounds = Bounds::cube(0.3);
    let gaussians = (0..count)
        .map(|_| {
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let rotation = if axis.norm() > 1e-6 {
                let a = axis.normalize() * (angle / 2.0).sin();
                Vector4::new((angle / 2.0).cos(), a.x, a.y, a.z)
            } else {
                Vector4::new(1.0, 0.0, 0.0, 0.0)
            };
            Gaussian {
                position: Vector3::new(
                    rng.gen_range(bounds.min.x..bounds.max.x),
                    rng.gen_range(bounds.min.y..bounds.max.y),
                    rng.gen_range(bounds.min.z..bounds.max.z),
                ),
                color: rng.gen_range(-1.5..1.5),
                opacity_logit: logit(rng.gen_range(alpha_range.0..alpha_range.1)),
                rotation,
                log_scale: Vector3::new(
                    rng.gen_range(0.04f64..0.12).ln(),
                    rng.gen_range(0.04f64..0.12).ln(),
                    rng.gen_range(0.04f64..0.12).ln(),
                ),
            }
        })
        .collect();
    GaussianScene { gaussians, bounds }
}

/// Camera on the unit orbit at a random azimuth/elevation, looking at the
/// origin.
pub fn random_view(rng: &mut ChaCha8Rng, width: u32, height: u32, focal: f64) -> CameraView {
    let az: f64 = rng.gen_range(0.0..90f64).to_radians();
    let el: f64 = rng.gen_range(-25.0..25f64).to_radians();
    let position = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    let rotation = evsplat_core::camera::look_at_rotation(&position, &Vector3::zeros());
    CameraView {
        rotation,
        translation: -(rotation * position),
        timestamp: 0,
        intrinsics: Intrinsics::desk(width, height, focal),
    }
}

pub fn random_grid(rng: &mut ChaCha8Rng, w: u32, h: u32, lo: f64, hi: f64) -> Grid {
    Grid::from_fn(w, h, |_, _| rng.gen_range(lo..hi))
}

/// Flat view of the 12 optimizable scalars of one Gaussian.
pub const PARAM_NAMES: [&str; 12] = [
    "position.x",
    "position.y",
    "position.z",
    "color",
    "opacity_logit",
    "rotation.w",
    "rotation.x",
    "rotation.y",
    "rotation.z",
    "log_scale.x",
    "log_scale.y",
    "log_scale.z",
];

pub fn get_param(g: &Gaussian, k: usize) -> f64 {
    match k {
        0..=2 => g.position[k],
        3 => g.color,
        4 => g.opacity_logit,
        5..=8 => g.rotation[k - 5],
        _ => g.log_scale[k - 9],
    }
}

pub fn set_param(g: &mut Gaussian, k: usize, v: f64) {
    match k {
        0..=2 => g.position[k] = v,
        3 => g.color = v,
        4 => g.opacity_logit = v,
        5..=8 => g.rotation[k - 5] = v,
        _ => g.log_scale[k - 9] = v,
    }
}

/// Central finite difference of a scene functional with respect to one
/// parameter of one Gaussian.
pub fn fd_scene_param(
    scene: &GaussianScene,
    gi: usize,
    k: usize,
    h: f64,
    mut f: impl FnMut(&GaussianScene) -> f64,
) -> f64 {
    let base = get_param(&scene.gaussians[gi], k);
    let mut plus = scene.clone();
    set_param(&mut plus.gaussians[gi], k, base + h);
    let mut minus = scene.clone();
    set_param(&mut minus.gaussians[gi], k, base - h);
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Five-point central finite difference with largest step `h`. The gamma-log
/// mapping gives the pair objective steep higher derivatives near dark
/// pixels, so the plain two-point stencil at h = 1e-4 carries visible
/// truncation error; the fourth-order stencil at the same step does not.
pub fn fd5_scene_param(
    scene: &GaussianScene,
    gi: usize,
    k: usize,
    h: f64,
    mut f: impl FnMut(&GaussianScene) -> f64,
) -> f64 {
    let base = get_param(&scene.gaussians[gi], k);
    let mut eval = |delta: f64| {
        let mut s = scene.clone();
        set_param(&mut s.gaussians[gi], k, base + delta);
        f(&s)
    };
    let d = h / 2.0;
    (-eval(2.0 * d) + 8.0 * eval(d) - 8.0 * eval(-d) + eval(-2.0 * d)) / (12.0 * d)
}

/// Spec tolerance: relative error below `rel` with an absolute floor.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= abs_floor || err / analytic.abs().max(numeric.abs()) < rel
}

//! Rasterizer checks against the untiled brute-force compositor and central
//! finite differences through the full pair objective.

mod common;

use common::{
    fd5_scene_param, fd_scene_param, grad_close, random_grid, random_scene, random_view,
    PARAM_NAMES,
};
use evsplat_core::loss::LossConfig;
use evsplat_core::render::{
    render, render_backward, ALPHA_MAX, TRANSMITTANCE_MIN, WEIGHT_CUTOFF_POWER,
};
use evsplat_core::scene::{COV2D_FLOOR, NEAR_PLANE};
use evsplat_core::train::pair_loss_and_gradients;
use evsplat_core::Grid;
use evsplat_reference::{transmittance_trace, untiled_render_oracle};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn tiled_renderer_matches_untiled_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let count = 3 + (case % 18);
        let scene = random_scene(&mut rng, count, (0.05, 0.6));
        let view = random_view(&mut rng, 16, 16, 18.0);
        let ours = render(&scene, &view).unwrap();
        let oracle = untiled_render_oracle(
            &scene,
            &view,
            COV2D_FLOOR,
            WEIGHT_CUTOFF_POWER,
            ALPHA_MAX,
            NEAR_PLANE,
        );
        for (a, b) in ours.image.values().iter().zip(oracle.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-5, "max |tiled - untiled| = {worst:.3e}");
}

#[test]
fn renderer_matches_oracle_on_larger_frame_with_partial_tiles() {
    // 40x28 exercises tile boundaries and partially filled edge tiles.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0002);
    let scene = random_scene(&mut rng, 25, (0.05, 0.5));
    let view = random_view(&mut rng, 40, 28, 34.0);
    let ours = render(&scene, &view).unwrap();
    let oracle = untiled_render_oracle(
        &scene,
        &view,
        COV2D_FLOOR,
        WEIGHT_CUTOFF_POWER,
        ALPHA_MAX,
        NEAR_PLANE,
    );
    let worst = ours
        .image
        .values()
        .iter()
        .zip(oracle.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst < 1e-5, "max diff {worst:.3e}");
}

#[test]
fn transmittance_is_monotone_non_increasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0003);
    let scene = random_scene(&mut rng, 20, (0.1, 0.9));
    let view = random_view(&mut rng, 16, 16, 18.0);
    for py in 0..16 {
        for px in 0..16 {
            let trace = transmittance_trace(
                &scene,
                &view,
                COV2D_FLOOR,
                WEIGHT_CUTOFF_POWER,
                ALPHA_MAX,
                NEAR_PLANE,
                (px, py),
            );
            for w in trace.windows(2) {
                assert!(w[1] <= w[0], "transmittance increased: {w:?}");
            }
        }
    }
}

/// Gradient of a render-level objective sum(d_image * image) for every
/// parameter class, against central finite differences.
#[test]
fn render_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0004);
    let scene = random_scene(&mut rng, 5, (0.1, 0.55));
    let view = random_view(&mut rng, 16, 16, 18.0);
    let d_image = random_grid(&mut rng, 16, 16, -1.0, 1.0);

    let result = render(&scene, &view).unwrap();
    let grads = render_backward(&scene, &view, &result, &d_image).unwrap();
    let objective = |s: &evsplat_core::scene::GaussianScene| {
        let img = render(s, &view).unwrap().image;
        img.values()
            .iter()
            .zip(d_image.values())
            .map(|(&a, &b)| a * b)
            .sum::<f64>()
    };

    let h = 1e-4;
    for gi in 0..scene.len() {
        for k in 0..12 {
            let analytic = match k {
                0..=2 => grads.d_position[gi][k],
                3 => grads.d_color[gi],
                4 => grads.d_opacity_logit[gi],
                5..=8 => grads.d_rotation[gi][k - 5],
                _ => grads.d_log_scale[gi][k - 9],
            };
            let numeric = fd_scene_param(&scene, gi, k, h, objective);
            assert!(
                grad_close(analytic, numeric, 1e-3, 1e-6),
                "gaussian {gi} {}: analytic {analytic:.6e}, fd {numeric:.6e}",
                PARAM_NAMES[k]
            );
        }
    }
}

/// Gradient of the full pair objective (two renders -> E_pred -> combined
/// loss) for every parameter, against central finite differences. This is
/// the core differentiability contract of the pipeline.
#[test]
fn pair_objective_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0005);
    let cfg = LossConfig::default();
    for case in 0..5 {
        let count = 3 + (case % 3);
        let scene = random_scene(&mut rng, count, (0.1, 0.55));
        let view0 = random_view(&mut rng, 16, 16, 18.0);
        let viewk = random_view(&mut rng, 16, 16, 18.0);
        let e_gt = random_grid(&mut rng, 16, 16, -2.0, 2.0);

        let (_, grads) = pair_loss_and_gradients(&scene, &view0, &viewk, &e_gt, &cfg).unwrap();
        let objective = |s: &evsplat_core::scene::GaussianScene| {
            pair_loss_and_gradients(s, &view0, &viewk, &e_gt, &cfg)
                .unwrap()
                .0
        };

        let h = 1e-4;
        for gi in 0..scene.len() {
            for k in 0..12 {
                let analytic = match k {
                    0..=2 => grads.d_position[gi][k],
                    3 => grads.d_color[gi],
                    4 => grads.d_opacity_logit[gi],
                    5..=8 => grads.d_rotation[gi][k - 5],
                    _ => grads.d_log_scale[gi][k - 9],
                };
                let numeric = fd5_scene_param(&scene, gi, k, h, objective);
                assert!(
                    grad_close(analytic, numeric, 1e-3, 1e-6),
                    "case {case} gaussian {gi} {}: analytic {analytic:.6e}, fd {numeric:.6e}",
                    PARAM_NAMES[k]
                );
            }
        }
    }
}

#[test]
fn early_termination_residual_is_tiny_even_with_opaque_stacks() {
    // High opacities force termination; the truncated tail must stay within
    // the documented transmittance bound against the untiled oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0006);
    let scene = random_scene(&mut rng, 20, (0.7, 0.95));
    let view = random_view(&mut rng, 16, 16, 18.0);
    let ours = render(&scene, &view).unwrap();
    let oracle = untiled_render_oracle(
        &scene,
        &view,
        COV2D_FLOOR,
        WEIGHT_CUTOFF_POWER,
        ALPHA_MAX,
        NEAR_PLANE,
    );
    let worst = ours
        .image
        .values()
        .iter()
        .zip(oracle.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(worst < TRANSMITTANCE_MIN, "residual {worst:.3e}");
}

#[test]
fn culled_gaussians_get_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0007);
    let mut scene = random_scene(&mut rng, 4, (0.2, 0.5));
    // Behind the camera for every orbit view with look-at at the origin.
    scene.gaussians[1].position = nalgebra::Vector3::new(5.0, 5.0, 5.0);
    let view = random_view(&mut rng, 16, 16, 18.0);
    let result = render(&scene, &view).unwrap();
    let d_image = random_grid(&mut rng, 16, 16, -1.0, 1.0);
    let grads = render_backward(&scene, &view, &result, &d_image).unwrap();
    let culled: Vec<usize> = (0..scene.len()).filter(|&i| !grads.visible[i]).collect();
    assert!(culled.contains(&1), "expected gaussian 1 culled");
    for &i in &culled {
        assert_eq!(grads.d_position[i], nalgebra::Vector3::zeros());
        assert_eq!(grads.d_color[i], 0.0);
        assert_eq!(grads.d_opacity_logit[i], 0.0);
        assert_eq!(grads.mean2d_grad_norm[i], 0.0);
    }
}

#[test]
fn backward_gradients_are_finite_on_stress_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0008);
    for _ in 0..10 {
        let scene = random_scene(&mut rng, 30, (0.05, 0.9));
        let view = random_view(&mut rng, 24, 24, 22.0);
        let result = render(&scene, &view).unwrap();
        let d_image = random_grid(&mut rng, 24, 24, -5.0, 5.0);
        let grads = render_backward(&scene, &view, &result, &d_image).unwrap();
        assert!(grads.is_finite());
    }
}

#[test]
fn pair_objective_drops_to_zero_on_self_supervision() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0009);
    let cfg = LossConfig::default();
    let scene = random_scene(&mut rng, 10, (0.2, 0.7));
    let view0 = random_view(&mut rng, 16, 16, 18.0);
    let viewk = random_view(&mut rng, 16, 16, 18.0);
    let r0 = render(&scene, &view0).unwrap();
    let rk = render(&scene, &viewk).unwrap();
    let e_gt =
        evsplat_core::loss::predicted_difference(&r0.image, &rk.image, &cfg).unwrap();
    let (loss, _) = pair_loss_and_gradients(&scene, &view0, &viewk, &e_gt, &cfg).unwrap();
    assert_eq!(loss, 0.0);
    let _ = Grid::zeros(1, 1);
}

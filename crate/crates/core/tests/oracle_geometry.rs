//! Covariance construction, projection, and camera math against dense
//! matrix-product oracles, plus geometric property tests.

mod common;

use common::{random_scene, random_view};
use evsplat_core::camera::CameraView;
use evsplat_core::scene::{
    build_covariance, eval_gaussian_2d, project_covariance, Covariance3, COV2D_FLOOR,
};
use evsplat_reference::{
    covariance_oracle, gaussian_2d_oracle, projected_covariance_oracle, world_to_pixel_oracle,
};
use nalgebra::{Matrix2, Vector2, Vector3, Vector4};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_quat(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    loop {
        let q = Vector4::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if q.norm() > 0.2 {
            return q.normalize();
        }
    }
}

#[test]
fn covariance_matches_dense_product_oracle_and_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let q = random_quat(&mut rng);
        let scales = Vector3::new(
            rng.gen_range(0.1..3.0),
            rng.gen_range(0.1..3.0),
            rng.gen_range(0.1..3.0),
        );
        let ours = build_covariance(&q, &scales).unwrap();
        let oracle = covariance_oracle(&q, &scales);
        assert!((ours.0 - oracle).norm() < 1e-12);

        // Eigenvalues equal the squared scales (sorted); symmetric PSD.
        let mut eig: Vec<f64> = ours.0.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let mut expected: Vec<f64> = scales.iter().map(|s| s * s).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
        }
        assert!((ours.0 - ours.0.transpose()).norm() < 1e-14);
    }
}

#[test]
fn projected_covariance_matches_matrix_chain_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let q = random_quat(&mut rng);
        let scales = Vector3::new(
            rng.gen_range(0.05..0.5),
            rng.gen_range(0.05..0.5),
            rng.gen_range(0.05..0.5),
        );
        let sigma = build_covariance(&q, &scales).unwrap();
        let view = random_view(&mut rng, 32, 32, 30.0);
        let mean_world = Vector3::new(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
        );
        let mean_cam = view.world_to_cam(&mean_world);
        assert!(mean_cam.z > 0.1);
        let ours = project_covariance(&sigma, &view, &mean_cam).unwrap();
        let oracle = projected_covariance_oracle(
            &sigma.0,
            &view.rotation,
            &mean_cam,
            view.intrinsics.fx,
            view.intrinsics.fy,
            COV2D_FLOOR,
        );
        assert!((ours - oracle).norm() < 1e-10, "{ours} vs {oracle}");
    }
}

#[test]
fn projection_is_linear_in_the_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let view = random_view(&mut rng, 32, 32, 30.0);
    let mean_cam = view.world_to_cam(&Vector3::zeros());
    let s1 = build_covariance(&random_quat(&mut rng), &Vector3::new(0.3, 0.1, 0.2)).unwrap();
    let s2 = build_covariance(&random_quat(&mut rng), &Vector3::new(0.15, 0.4, 0.1)).unwrap();
    let (a, b) = (0.7, -0.3);
    let combined = Covariance3(s1.0 * a + s2.0 * b);
    let left = project_covariance(&combined, &view, &mean_cam).unwrap();
    let p1 = project_covariance(&s1, &view, &mean_cam).unwrap();
    let p2 = project_covariance(&s2, &view, &mean_cam).unwrap();
    // Remove the floor before combining: projection is linear without it.
    let floorless = |m: &Matrix2<f64>| m - Matrix2::identity() * COV2D_FLOOR;
    let rhs = floorless(&p1) * a + floorless(&p2) * b;
    assert!((floorless(&left) - rhs).norm() < 1e-12);
}

#[test]
fn gaussian_2d_matches_cofactor_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        // Random SPD 2x2 via A A^T + floor.
        let a = Matrix2::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let spd = a * a.transpose() + Matrix2::identity() * COV2D_FLOOR;
        let delta = Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let ours = eval_gaussian_2d(&spd, &delta).unwrap();
        let oracle = gaussian_2d_oracle(&spd, &delta);
        assert!((ours - oracle).abs() < 1e-14);
        assert!(ours > 0.0 && ours <= 1.0);
        if delta != Vector2::zeros() {
            assert!(ours < 1.0);
        }
    }
}

#[test]
fn world_to_pixel_matches_homogeneous_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let view = random_view(&mut rng, 64, 48, 55.0);
        let point = Vector3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        let (px, depth) = view.world_to_pixel(&point);
        let (ox, oy, oz) = world_to_pixel_oracle(&view, &point);
        assert!((px.x - ox).abs() < 1e-10);
        assert!((px.y - oy).abs() < 1e-10);
        assert!((depth - oz).abs() < 1e-12);
    }
}

#[test]
fn splat_centers_project_consistently_with_world_to_pixel() {
    // The rasterizer's cached splat centers must agree with the camera op.
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let scene = random_scene(&mut rng, 10, (0.2, 0.6));
    let view: CameraView = random_view(&mut rng, 32, 32, 30.0);
    let result = evsplat_core::render::render(&scene, &view).unwrap();
    for s in &result.splats {
        let g = &scene.gaussians[s.gaussian_index as usize];
        let (px, depth) = view.world_to_pixel(&g.position);
        assert!((px - s.mean_px).norm() < 1e-12);
        assert!((depth - s.depth).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Isotropic scales make the covariance rotation-invariant: s^2 I.
    #[test]
    fn isotropic_covariance_ignores_rotation(
        qa in prop::array::uniform4(-1.0f64..1.0),
        s in 0.05f64..2.0,
    ) {
        let q = Vector4::new(qa[0], qa[1], qa[2], qa[3]);
        prop_assume!(q.norm() > 0.1);
        let c = build_covariance(&q, &Vector3::repeat(s)).unwrap();
        let expected = nalgebra::Matrix3::identity() * s * s;
        prop_assert!((c.0 - expected).norm() < 1e-10);
    }

    /// Covariances are PSD for arbitrary valid inputs.
    #[test]
    fn covariance_is_positive_semidefinite(
        qa in prop::array::uniform4(-1.0f64..1.0),
        sa in prop::array::uniform3(0.01f64..4.0),
    ) {
        let q = Vector4::new(qa[0], qa[1], qa[2], qa[3]);
        prop_assume!(q.norm() > 0.1);
        let c = build_covariance(&q, &Vector3::new(sa[0], sa[1], sa[2])).unwrap();
        for ev in c.0.symmetric_eigenvalues().iter() {
            prop_assert!(*ev > -1e-12);
        }
    }
}

mod common;

use common::{front_camera, oblique_camera, random_scene};
use proptest::prelude::*;
use rtsplat::backward::backward;
use rtsplat::losses::{
    image_loss, mask_loss, normal_consistency, total_loss, view_objective, LossWeights,
};
use rtsplat::{render, Error, GaussianSurfel, Image, RenderOptions, Scene, ShadingParams};

const C1: f64 = 0.01 * 0.01;

#[test]
fn identical_images_cost_nothing() {
    let a = Image::from_fn(12, 9, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
    assert!(image_loss(&a, &a, 0.2).unwrap().abs() < 1e-12);
}

#[test]
fn black_versus_white() {
    let a = Image::filled(16, 16, 3, 0.0);
    let b = Image::filled(16, 16, 3, 1.0);
    // Constant images: the luminance term alone, (2·0·1 + C1) / (0 + 1 + C1).
    let ssim = C1 / (1.0 + C1);
    let expect = 0.8 * 1.0 + 0.2 * (1.0 - ssim) / 2.0;
    let got = image_loss(&a, &b, 0.2).unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    assert!((got - 0.89999).abs() < 1e-8);
}

#[test]
fn zero_lambda_is_plain_l1() {
    let a = Image::from_fn(10, 10, 3, |x, y, c| ((x + 2 * y + c) % 5) as f64 / 4.0);
    let b = Image::from_fn(10, 10, 3, |x, y, c| ((3 * x + y + 2 * c) % 7) as f64 / 6.0);
    let l1 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.data().len() as f64;
    assert!((image_loss(&a, &b, 0.0).unwrap() - l1).abs() < 1e-14);
}

#[test]
fn image_loss_rejects_size_mismatch() {
    let a = Image::filled(8, 8, 3, 0.0);
    let b = Image::filled(8, 9, 3, 0.0);
    assert!(matches!(image_loss(&a, &b, 0.2), Err(Error::DimensionMismatch(_))));
}

fn checker_mask(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, 1, |x, y, _| ((x + y) % 2) as f64)
}

#[test]
fn mask_loss_closed_forms() {
    let eps = 1e-6;
    let m = checker_mask(6, 5);
    let inverted = m.map(|v| 1.0 - v);
    let correct = mask_loss(&inverted, &m, eps).unwrap();
    assert!((correct - (-(1.0 - eps).ln())).abs() < 1e-15);
    let half = mask_loss(&Image::filled(6, 5, 1, 0.5), &m, eps).unwrap();
    assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
    let wrong = mask_loss(&m, &m, eps).unwrap();
    assert!((wrong - (-eps.ln())).abs() < 1e-9);
    assert!((wrong - 13.8155).abs() < 1e-4);
}

#[test]
fn mask_loss_rejects_size_mismatch() {
    assert!(mask_loss(&Image::filled(4, 4, 1, 0.5), &checker_mask(5, 4), 1e-6).is_err());
}

#[test]
fn total_loss_weights() {
    let w = LossWeights::default();
    assert_eq!(total_loss(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
    assert!((total_loss(1.0, 1.0, 1.0, &w).unwrap() - 1.06).abs() < 1e-15);
    let plain = LossWeights {
        lambda_normal: 0.0,
        lambda_mask: 0.0,
        ..w
    };
    assert_eq!(total_loss(0.7, 3.0, 9.0, &plain).unwrap(), 0.7);
}

#[test]
fn non_finite_term_is_named() {
    let w = LossWeights::default();
    match total_loss(0.1, f64::NAN, 0.0, &w) {
        Err(Error::NonFiniteLoss(name)) => assert_eq!(name, "normal"),
        other => panic!("expected a named error, got {other:?}"),
    }
}

/// Tiled fronto-parallel plane at `z = 0` facing the front camera.
fn plane_scene() -> Scene {
    let mut rng = common::rng(2);
    let mut surfels = Vec::new();
    for i in -12..=12 {
        for j in -12..=12 {
            let mut s = GaussianSurfel::new([i as f64 * 0.15, j as f64 * 0.15, 0.0], [1.0, 0.0, 0.0, 0.0], [0.12, 0.12], 0, &mut rng);
            s.occupancy_raw = 4.0;
            surfels.push(s);
        }
    }
    Scene::new(surfels, ShadingParams::init(&mut rng), 0)
}

#[test]
fn fronto_parallel_plane_is_normal_consistent() {
    let cam = front_camera(32);
    let r = render(&plane_scene(), &cam, &RenderOptions::default()).unwrap();
    let loss = normal_consistency(&r.outputs.gbuffer, &cam);
    assert!(loss < 1e-3, "{loss}");
}

#[test]
fn empty_first_surface_is_excluded() {
    let cam = front_camera(16);
    let scene = Scene::new(Vec::new(), ShadingParams::zeros(), 0);
    let r = render(&scene, &cam, &RenderOptions::default()).unwrap();
    assert_eq!(normal_consistency(&r.outputs.gbuffer, &cam), 0.0);
}

#[test]
fn mask_term_never_reaches_colour_coefficients() {
    let scene = random_scene(17, 25);
    let cam = oblique_camera(16);
    let target = Image::from_fn(16, 16, 3, |x, y, c| ((x * y + c) % 9) as f64 / 8.0);
    let mask = checker_mask(16, 16);
    let r = render(&scene, &cam, &RenderOptions::default()).unwrap();
    let grads = |lambda_mask: f64| {
        let w = LossWeights {
            lambda_mask,
            ..LossWeights::default()
        };
        let (_, g) = view_objective(&r.outputs, &cam, &target, Some(&mask), &w).unwrap();
        backward(&scene, &r, &g).unwrap()
    };
    let (without, with) = (grads(0.0), grads(5.0));
    let mut opacity_moved = false;
    for (a, b) in without.surfels.iter().zip(&with.surfels) {
        for (p, q) in a.sh_color.iter().zip(&b.sh_color) {
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() <= 1e-12 * p[c].abs().max(1.0));
            }
        }
        opacity_moved |= (a.opacity_raw - b.opacity_raw).abs() > 1e-9;
    }
    assert!(opacity_moved);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn image_loss_is_nonnegative(seed in 0u64..1000, lambda in 0.0f64..=1.0) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let a = Image::from_fn(11, 13, 3, |_, _, _| r.gen_range(0.0..1.0));
        let b = Image::from_fn(11, 13, 3, |_, _, _| r.gen_range(0.0..1.0));
        prop_assert!(image_loss(&a, &b, lambda).unwrap() >= 0.0);
    }

    #[test]
    fn mask_loss_is_bounded(seed in 0u64..1000) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let a = Image::from_fn(7, 7, 1, |_, _, _| r.gen_range(0.0..=1.0));
        let m = Image::from_fn(7, 7, 1, |_, _, _| if r.gen_bool(0.5) { 1.0 } else { 0.0 });
        let l = mask_loss(&a, &m, 1e-6).unwrap();
        prop_assert!(l >= 0.0 && l <= -(1e-6f64).ln() + 1e-12);
    }
}

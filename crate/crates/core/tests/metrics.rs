mod common;

use common::front_camera;
use proptest::prelude::*;
use rtsplat::metrics::{depth_agreement, floater_energy, mask_opacity, psnr, ssim, PSNR_CAP};
use rtsplat::scene::logit;
use rtsplat::{render, Error, GaussianSurfel, Image, OpacityModel, RenderOptions, Scene, ShadingParams};

fn gradient_image(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, 3, |x, y, c| 0.1 + 0.7 * ((x + y + c) as f64 / (w + h + 2) as f64))
}

#[test]
fn psnr_examples() {
    let a = gradient_image(16, 16);
    assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
    // Offset only in the left half; the mask picks that half.
    let half = Image::from_fn(16, 16, 1, |x, _, _| if x < 8 { 1.0 } else { 0.0 });
    let c = Image::from_fn(16, 16, 3, |x, y, ch| a.get(x, y, ch) + if x < 8 { 0.1 } else { 0.0 });
    assert!((psnr(&a, &c, Some(&half)).unwrap() - 20.0).abs() < 1e-9);
    let full = psnr(&a, &c, None).unwrap();
    assert!((full - 10.0 * (1.0f64 / 0.005).log10()).abs() < 1e-9);
    assert!((full - 23.01).abs() < 5e-3);
}

#[test]
fn empty_region_is_an_error() {
    let a = gradient_image(8, 8);
    let none = Image::filled(8, 8, 1, 0.0);
    assert!(matches!(psnr(&a, &a, Some(&none)), Err(Error::EmptyRegion)));
    assert!(matches!(ssim(&a, &a, Some(&none)), Err(Error::EmptyRegion)));
}

#[test]
fn ssim_of_identical_images_is_one() {
    let a = gradient_image(20, 14);
    assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn metrics_clamp_before_comparing() {
    let a = Image::filled(8, 8, 3, 1.0);
    let b = Image::filled(8, 8, 3, 1.7);
    assert_eq!(psnr(&a, &b, None).unwrap(), PSNR_CAP);
}

fn plane(z: f64, sigma: f64, alpha: f64) -> GaussianSurfel {
    let mut rng = common::rng(0);
    // Huge extent so the kernel is 1 to within 1e-8 over the image.
    let mut s = GaussianSurfel::new([0.0, 0.0, z], [1.0, 0.0, 0.0, 0.0], [1e4, 1e4], 0, &mut rng);
    s.occupancy_raw = logit(sigma);
    s.opacity_raw = logit(alpha);
    s
}

/// Front camera sits at `z = −3`, so a plane at `z` has depth `z + 3`.
fn slab_maps(size: usize) -> (Image, Image, Image) {
    (
        Image::filled(size, size, 1, 3.0),
        Image::filled(size, size, 1, 5.0),
        Image::from_fn(size, size, 1, |x, _, _| if x % 2 == 0 { 1.0 } else { 0.0 }),
    )
}

#[test]
fn single_slab_fragment_energy() {
    let cam = front_camera(8);
    let (g, b, m) = slab_maps(8);
    // σα = 0.6 · 0.5 = 0.3 at depth 4, inside the slab (3, 5).
    let scene = Scene::new(vec![plane(1.0, 0.6, 0.5)], ShadingParams::zeros(), 0);
    let e = floater_energy(&scene, &cam, &g, &b, &m, OpacityModel::Factorized).unwrap();
    assert!((e - 0.3).abs() < 1e-6, "{e}");
}

#[test]
fn surfaces_on_the_slab_boundaries_do_not_count() {
    let cam = front_camera(8);
    let (g, b, m) = slab_maps(8);
    let scene = Scene::new(vec![plane(0.0, 0.9, 0.9), plane(2.0, 0.9, 0.9)], ShadingParams::zeros(), 0);
    assert_eq!(floater_energy(&scene, &cam, &g, &b, &m, OpacityModel::Factorized).unwrap(), 0.0);
    let empty = Scene::new(Vec::new(), ShadingParams::zeros(), 0);
    assert_eq!(floater_energy(&empty, &cam, &g, &b, &m, OpacityModel::Factorized).unwrap(), 0.0);
}

#[test]
fn glass_over_background_depths_and_opacity() {
    let cam = front_camera(8);
    let (g, b, m) = slab_maps(8);
    let scene = Scene::new(vec![plane(0.0, 0.999, 0.01), plane(2.0, 0.999, 0.999)], ShadingParams::zeros(), 0);
    let r = render(&scene, &cam, &RenderOptions::default()).unwrap();
    let (surf, vol) = depth_agreement(&r.outputs, &g, &b, &m, 0.02).unwrap();
    assert_eq!(surf, 1.0);
    assert_eq!(vol, 1.0);
    // First hit on the glass plus the leftover probability on the wall.
    let (inside, outside) = mask_opacity(&r.outputs, &m).unwrap();
    assert!((inside - (0.999 * 0.01 + 0.001 * 0.999 * 0.999)).abs() < 1e-6);
    assert!((outside - inside).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn psnr_decreases_with_error(d1 in 0.001f64..0.3, extra in 0.001f64..0.3) {
        let a = Image::filled(6, 6, 3, 0.35);
        let near = psnr(&a, &a.map(|v| v + d1), None).unwrap();
        let far = psnr(&a, &a.map(|v| v + d1 + extra), None).unwrap();
        prop_assert!(far < near);
    }

    #[test]
    fn floater_energy_is_a_fraction(z in -0.9f64..2.9, sigma in 0.0f64..1.0, alpha in 0.0f64..1.0) {
        let cam = front_camera(6);
        let (g, b, m) = slab_maps(6);
        let scene = Scene::new(vec![plane(z, sigma, alpha), plane(z * 0.5, alpha, sigma)], ShadingParams::zeros(), 0);
        let e = floater_energy(&scene, &cam, &g, &b, &m, OpacityModel::Factorized).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }
}

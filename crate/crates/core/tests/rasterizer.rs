mod common;

use common::{front_camera, oblique_camera, random_scene};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rtsplat::raster::{
    build_fragments, build_fragments_naive, deferred_aggregate, intersect_kernel, prepare_view, volumetric_forward, Ray,
};
use rtsplat::reference::render_reference;
use rtsplat::scene::{logit, surfel_frame};
use rtsplat::{Camera, GaussianSurfel, OpacityModel, Scene, ShadingParams};

/// 1×1 camera whose only ray is the optical axis through the origin.
fn axis_camera() -> Camera {
    Camera::look_at(
        Vector3::new(0.0, 0.0, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
        30.0,
        1,
        1,
    )
    .unwrap()
}

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Wide fronto-parallel surfel on the axis with the given activated values.
fn disk(z: f64, sigma: f64, alpha: f64, rgb: [f64; 3]) -> GaussianSurfel {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut s = GaussianSurfel::new([0.0, 0.0, z], [1.0, 0.0, 0.0, 0.0], [2.0, 2.0], 0, &mut r);
    s.occupancy_raw = logit(sigma);
    s.opacity_raw = logit(alpha);
    // colour = 0.5 + Y00 c with Y00 = 1 / (2√π).
    s.sh_color[0] = rgb.map(|v| (v - 0.5) * 2.0 * SQRT_PI);
    s
}

fn scene(surfels: Vec<GaussianSurfel>) -> Scene {
    Scene::new(surfels, ShadingParams::zeros(), 0)
}

struct Passes {
    c_trans: [f64; 3],
    weights: Vec<f64>,
    probs: Vec<f64>,
    prob: f64,
    normal: [f64; 3],
}

fn run_axis(scene: &Scene) -> Passes {
    let cam = axis_camera();
    let view = prepare_view(scene, &cam, OpacityModel::Factorized).unwrap();
    let frags = build_fragments(&view, &cam);
    let vol = volumetric_forward(&frags, &view);
    let gb = deferred_aggregate(&frags, &view);
    let mut weights = Vec::new();
    let mut probs = Vec::new();
    for (k, f) in frags.pixel(0).iter().enumerate() {
        let s = &view.surfels[f.slot as usize];
        weights.push(s.sigma * s.alpha_vol * f.g * vol.prefix[k]);
        probs.push(s.sigma * f.g * gb.prefix[k]);
    }
    Passes {
        c_trans: vol.color[0],
        weights,
        probs,
        prob: gb.prob[0],
        normal: gb.normal[0],
    }
}

// Activations saturate at 1 − 1e-6, which bounds the example tolerances.
const FULL: f64 = 1.0 - 1e-9;

#[test]
fn kernel_at_center_and_one_sigma() {
    let frame = surfel_frame([1.0, 0.0, 0.0, 0.0]).unwrap();
    let ray = Ray {
        origin: Vector3::new(0.0, 0.0, -2.0),
        dir: Vector3::new(0.0, 0.0, 1.0),
        depth_scale: 1.0,
    };
    let hit = intersect_kernel(&Vector3::zeros(), &frame, [0.5, 0.5], &ray).unwrap();
    assert_eq!((hit.u, hit.v, hit.g), (0.0, 0.0, 1.0));
    assert_eq!(hit.depth, 2.0);
    let hit = intersect_kernel(&Vector3::new(-0.5, 0.0, 0.0), &frame, [0.5, 0.5], &ray).unwrap();
    assert!((hit.u - 1.0).abs() < 1e-15);
    assert!((hit.g - (-0.5f64).exp()).abs() < 1e-15);
    assert!((hit.g - 0.60653).abs() < 1e-5);
    let side = Ray {
        dir: Vector3::new(1.0, 0.0, 0.0),
        ..ray
    };
    assert!(intersect_kernel(&Vector3::zeros(), &frame, [0.5, 0.5], &side).is_none());
}

#[test]
fn single_fragment_composite() {
    let p = run_axis(&scene(vec![disk(0.0, FULL, 0.8, [1.0, 0.0, 0.0])]));
    assert!((p.c_trans[0] - 0.8).abs() < 1e-6, "{:?}", p.c_trans);
    assert!(p.c_trans[1].abs() < 1e-9 && p.c_trans[2].abs() < 1e-9);
    assert!((p.weights[0] - 0.8).abs() < 1e-6);
    assert!((p.probs[0] - 1.0).abs() < 5e-6);
}

#[test]
fn front_half_over_opaque_back() {
    let p = run_axis(&scene(vec![
        disk(1.0, FULL, FULL, [0.0, 1.0, 0.0]),
        disk(0.0, FULL, 0.5, [1.0, 0.0, 0.0]),
    ]));
    // Order follows depth, not insertion.
    for (c, want) in p.c_trans.iter().zip([0.5, 0.5, 0.0]) {
        assert!((c - want).abs() < 1e-6, "{:?}", p.c_trans);
    }
}

#[test]
fn glass_over_opaque_background() {
    let p = run_axis(&scene(vec![
        disk(0.0, 0.99, 0.05, [0.5; 3]),
        disk(2.0, FULL, FULL, [0.5; 3]),
    ]));
    assert!((p.weights[0] - 0.0495).abs() < 1e-9);
    assert!((p.weights[1] - 0.9505).abs() < 5e-6);
    assert!((p.probs[0] - 0.99).abs() < 1e-9);
    assert!((p.probs[1] - 0.01).abs() < 5e-6);
    // Both normals face the camera, so the expected normal is exactly it.
    assert!((p.normal[2] + 1.0).abs() < 1e-12);
    assert!((p.prob - 1.0).abs() < 5e-6);
}

#[test]
fn zero_occupancy_leaves_background() {
    let cam = axis_camera();
    let s = scene(vec![disk(0.0, 1e-9, 0.5, [1.0; 3])]);
    let view = prepare_view(&s, &cam, OpacityModel::Factorized).unwrap();
    let frags = build_fragments(&view, &cam);
    let gb = deferred_aggregate(&frags, &view);
    assert!(gb.prob[0] < 1e-5);
    assert!(!gb.has_surface(0));
}

#[test]
fn empty_scene_has_no_fragments() {
    let cam = front_camera(8);
    let view = prepare_view(&scene(vec![]), &cam, OpacityModel::Factorized).unwrap();
    let frags = build_fragments(&view, &cam);
    assert!(frags.fragments.is_empty());
    assert_eq!(frags.offsets.len(), 65);
}

#[test]
fn equal_center_depths_sort_by_index() {
    let cam = axis_camera();
    let s = scene(vec![disk(0.0, 0.3, 0.5, [1.0; 3]), disk(0.0, 0.6, 0.5, [0.0; 3])]);
    let view = prepare_view(&s, &cam, OpacityModel::Factorized).unwrap();
    let order: Vec<usize> = view.surfels.iter().map(|v| v.index).collect();
    assert_eq!(order, vec![0, 1]);
    let s = scene(vec![disk(2.0, 0.3, 0.5, [1.0; 3]), disk(1.0, 0.6, 0.5, [0.0; 3])]);
    let view = prepare_view(&s, &cam, OpacityModel::Factorized).unwrap();
    let order: Vec<usize> = view.surfels.iter().map(|v| v.index).collect();
    assert_eq!(order, vec![1, 0]);
}

#[test]
fn tiled_fragments_match_naive() {
    for seed in 0..20 {
        let s = random_scene(seed, 80);
        for cam in [front_camera(24), oblique_camera(19)] {
            let view = prepare_view(&s, &cam, OpacityModel::Factorized).unwrap();
            assert_eq!(build_fragments(&view, &cam), build_fragments_naive(&view, &cam), "seed {seed}");
        }
    }
}

#[test]
fn all_opaque_reduces_volumetric_to_first_surface() {
    for seed in 0..20 {
        let s = random_scene(100 + seed, 60);
        let cam = oblique_camera(16);
        let mut view = prepare_view(&s, &cam, OpacityModel::Factorized).unwrap();
        for v in view.surfels.iter_mut() {
            v.alpha_vol = 1.0;
        }
        let frags = build_fragments(&view, &cam);
        let vol = volumetric_forward(&frags, &view);
        let gb = deferred_aggregate(&frags, &view);
        for pix in 0..frags.pixel_count() {
            assert_eq!(vol.used[pix], gb.used[pix]);
            let base = frags.offsets[pix];
            for k in 0..vol.used[pix] as usize {
                let f = &frags.fragments[base + k];
                let s = &view.surfels[f.slot as usize];
                let w = s.sigma * s.alpha_vol * f.g * vol.prefix[base + k];
                let p = s.sigma * f.g * gb.prefix[base + k];
                assert!((w - p).abs() <= 1e-12);
            }
            assert!((vol.weight[pix] - gb.prob[pix]).abs() <= 1e-12);
        }
    }
}

fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
}

/// Production passes against the brute-force per-pixel loop.
fn compare_with_reference(s: &Scene, cam: &Camera, model: OpacityModel) {
    let view = prepare_view(s, cam, model).unwrap();
    let frags = build_fragments(&view, cam);
    let vol = volumetric_forward(&frags, &view);
    let gb = deferred_aggregate(&frags, &view);
    let reference = render_reference(s, cam, model).unwrap();
    let tol = 1e-6;
    for (pix, r) in reference.iter().enumerate() {
        for c in 0..3 {
            assert_close(vol.color[pix][c], r.c_trans[c], tol, "C_trans");
            assert_close(gb.scatter[pix][c], r.scatter[c], tol, "scatter");
            assert_close(gb.normal[pix][c], r.normal[c], tol, "normal");
        }
        assert_close(vol.weight[pix], r.weight, tol, "W");
        assert_close(gb.prob[pix], r.prob, tol, "P");
        assert_close(gb.roughness[pix], r.roughness, tol, "roughness");
        assert_close(gb.tau[pix], r.tau, tol, "tau");
        assert_close(gb.alpha[pix], r.alpha, tol, "alpha");
        for k in 0..gb.feature[pix].len() {
            assert_close(gb.feature[pix][k], r.feature[k], tol, "feature");
        }
        if r.weight > 1e-3 {
            assert_close(vol.depth[pix], r.volumetric_depth, 1e-6 * r.volumetric_depth.max(1.0), "vol depth");
        }
        if r.prob > 1e-3 {
            assert_close(gb.depth[pix], r.surface_depth, 1e-6 * r.surface_depth.max(1.0), "surface depth");
        }
        assert!((0.0..=1.0).contains(&vol.weight[pix]) && (0.0..=1.0).contains(&gb.prob[pix]));
        let list = frags.pixel(pix);
        assert_eq!(list.len().min(vol.used[pix] as usize), r.weights.len());
        for (k, (idx, w, _)) in r.weights.iter().enumerate() {
            let f = &list[k];
            let vs = &view.surfels[f.slot as usize];
            assert_eq!(vs.index, *idx);
            let wp = vs.sigma * vs.alpha_vol * f.g * vol.prefix[frags.offsets[pix] + k];
            assert_close(wp, *w, tol, "w_i");
            assert!(*w >= 0.0);
        }
    }
}

#[test]
fn matches_brute_force_reference_on_random_scenes() {
    for seed in 0..100u64 {
        let n = 1 + (seed as usize * 37) % 200;
        let s = random_scene(1000 + seed, n);
        let cam = if seed % 2 == 0 { front_camera(16) } else { oblique_camera(16) };
        let model = if seed % 5 == 4 { OpacityModel::Tied } else { OpacityModel::Factorized };
        compare_with_reference(&s, &cam, model);
    }
}

#[test]
fn fragment_depths_follow_center_order_and_kernel_floor() {
    let s = random_scene(7, 150);
    let cam = oblique_camera(20);
    let view = prepare_view(&s, &cam, OpacityModel::Factorized).unwrap();
    let frags = build_fragments(&view, &cam);
    for pix in 0..frags.pixel_count() {
        let list = frags.pixel(pix);
        for w in list.windows(2) {
            assert!(w[0].slot < w[1].slot);
        }
        for f in list {
            assert!(f.g >= 1.0 / 255.0 && f.g <= 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weights_are_probabilities(seed in 0u64..10_000, n in 0usize..120) {
        let s = random_scene(seed, n);
        let cam = oblique_camera(12);
        let view = prepare_view(&s, &cam, OpacityModel::Factorized).unwrap();
        let frags = build_fragments(&view, &cam);
        let vol = volumetric_forward(&frags, &view);
        let gb = deferred_aggregate(&frags, &view);
        for pix in 0..frags.pixel_count() {
            prop_assert!(vol.weight[pix] >= 0.0 && vol.weight[pix] <= 1.0 + 1e-12);
            prop_assert!(gb.prob[pix] >= 0.0 && gb.prob[pix] <= 1.0 + 1e-12);
            // Volumetric weight never exceeds first-surface probability mass.
            prop_assert!(vol.weight[pix] <= gb.prob[pix] + 1e-12);
            let p = gb.prob[pix];
            prop_assert!(gb.tau[pix] >= 0.0 && gb.tau[pix] <= p + 1e-12);
            prop_assert!(gb.roughness[pix] >= 0.0 && gb.roughness[pix] <= p + 1e-12);
            if gb.has_surface(pix) {
                let n = gb.normal[pix];
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                prop_assert!((len - 1.0).abs() < 1e-9 || len == 0.0);
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_fragments(seed in 0u64..1000) {
        let s = random_scene(seed, 60);
        let cam = front_camera(16);
        let view = prepare_view(&s, &cam, OpacityModel::Factorized).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = pool.install(|| build_fragments(&view, &cam));
        let b = build_fragments(&view, &cam);
        prop_assert_eq!(a, b);
    }
}

#![allow(dead_code)]

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsplat::{Camera, GaussianSurfel, Image, Scene, ShadingParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Camera three units in front of the origin, looking along `+z`.
pub fn front_camera(size: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.0, 0.0, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
        45.0,
        size,
        size,
    )
    .unwrap()
}

pub fn oblique_camera(size: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.8, 0.4, -2.8),
        Vector3::new(0.0, 0.0, 0.2),
        Vector3::new(0.0, 1.0, 0.0),
        50.0,
        size,
        size,
    )
    .unwrap()
}

#[allow(unused_imports)]
pub use rtsplat::gradcheck::{random_quaternion, random_scene, random_surfel};

/// Thin glass quad (σ ≈ 0.9999, α = 0.05) at `z = 0` in front of an opaque
/// wall at `z = 2`, both tiled with overlapping surfels. Returns the scene
/// and the axis-aligned box around the glass.
pub fn glass_scene(seed: u64) -> (Scene, [f64; 3], [f64; 3]) {
    use rand::Rng;
    use rtsplat::scene::logit;
    let mut r = rng(seed);
    let mut surfels = Vec::new();
    let mut tile = |z: f64, half: i32, step: f64, sigma: f64, alpha: f64, r: &mut ChaCha8Rng| {
        for i in -half..=half {
            for j in -half..=half {
                let mut s = GaussianSurfel::new([i as f64 * step, j as f64 * step, z], [1.0, 0.0, 0.0, 0.0], [step, step], 1, r);
                s.occupancy_raw = logit(sigma);
                s.opacity_raw = logit(alpha);
                s.sh_color[0] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
                s.roughness_raw = r.gen_range(-2.0..0.0);
                s.transmissivity_raw = r.gen_range(-1.0..1.0);
                s.scatter_color_raw = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
                surfels.push(s);
            }
        }
    };
    tile(0.0, 8, 0.0625, 0.9999, 0.05, &mut r);
    tile(2.0, 14, 0.2, 0.999, 0.999, &mut r);
    let shading = ShadingParams::init(&mut r);
    (Scene::new(surfels, shading, 1), [-0.6, -0.6, -0.1], [0.6, 0.6, 0.1])
}

/// Pixels of `camera` whose ray crosses `z = 0` inside `|x|, |y| ≤ half`.
pub fn glass_mask(camera: &Camera, half: f64) -> Image {
    let o = camera.center();
    Image::from_fn(camera.width, camera.height, 1, |x, y, _| {
        let d = camera.ray_dir(x, y);
        let t = -o.z / d.z;
        let p = o + d * t;
        if t > 0.0 && p.x.abs() <= half && p.y.abs() <= half {
            1.0
        } else {
            0.0
        }
    })
}

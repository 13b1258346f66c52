//! Renders a hand-built glass pane in front of a checkered wall and writes
//! every layer of the decomposition as PNG.
//!
//! cargo run --release --example render_layers -- [out_dir]

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsplat::scene::logit;
use rtsplat::sh::C0;
use rtsplat::{render, Camera, GaussianSurfel, RenderOptions, Scene, ShadingParams};

/// Pane of 17×17 surfels at `z = 0` (σ high, α low, rough 0.1, τ 0.85)
/// and a 29×29 opaque checkered wall at `z = 2`.
fn glass_over_checker() -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut surfels = Vec::new();
    for i in -8..=8 {
        for j in -8..=8 {
            let step = 0.0625;
            let mut s = GaussianSurfel::new([i as f64 * step, j as f64 * step, 0.0], [1.0, 0.0, 0.0, 0.0], [step, step], 1, &mut rng);
            s.occupancy_raw = logit(0.999);
            s.opacity_raw = logit(0.02);
            s.roughness_raw = logit(0.1);
            s.transmissivity_raw = logit(0.85);
            s.scatter_color_raw = [logit(0.55), logit(0.75), logit(0.7)];
            surfels.push(s);
        }
    }
    for i in -14..=14 {
        for j in -14..=14 {
            let step = 0.2;
            let mut s = GaussianSurfel::new([i as f64 * step, j as f64 * step, 2.0], [1.0, 0.0, 0.0, 0.0], [step, step], 1, &mut rng);
            s.occupancy_raw = logit(0.999);
            s.opacity_raw = logit(0.999);
            s.transmissivity_raw = logit(0.999);
            let c = if (i + j) % 2 == 0 { [0.9, 0.85, 0.7] } else { [0.15, 0.2, 0.35] };
            s.sh_color[0] = c.map(|v| (v - 0.5) / C0);
            surfels.push(s);
        }
    }
    Scene::new(surfels, ShadingParams::init(&mut rng), 1)
}

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "layers".into());
    std::fs::create_dir_all(&out)?;
    let scene = glass_over_checker();
    let camera = Camera::look_at(
        Vector3::new(0.8, 0.3, -3.0),
        Vector3::new(0.0, 0.0, 0.5),
        Vector3::new(0.0, 1.0, 0.0),
        45.0,
        128,
        128,
    )?;
    let t = std::time::Instant::now();
    let o = render(&scene, &camera, &RenderOptions::default())?.outputs;
    println!("{} surfels rendered at 128x128 in {:.1} ms", scene.len(), t.elapsed().as_secs_f64() * 1e3);
    let depth = |d: &rtsplat::Image| d.map(|v| if v.is_finite() { (v / 6.0).clamp(0.0, 1.0) } else { 0.0 });
    let layers = [
        ("color", o.color.clone()),
        ("specular", o.c_spec.clone()),
        ("subsurface", o.modulated_sub()),
        ("transmission", o.c_trans.clone()),
        ("gate", o.gate.clone()),
        ("normal", o.normal_image()),
        ("surface_depth", depth(&o.surface_depth)),
        ("volumetric_depth", depth(&o.volumetric_depth)),
    ];
    for (name, img) in &layers {
        img.save_png(format!("{out}/{name}.png"))?;
    }
    let centre = 64 * 128 + 64;
    println!(
        "centre pixel: surface depth {:.3}, volumetric depth {:.3}, A_alpha {:.3}",
        o.surface_depth.data()[centre],
        o.volumetric_depth.data()[centre],
        o.gbuffer.alpha[centre]
    );
    println!("wrote {} layers to {out}/", layers.len());
    Ok(())
}

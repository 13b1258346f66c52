//! Shows how the specular gate reacts to local highlight variance: the
//! same scene under a smooth and a sharply varying environment, for a few
//! gate strengths.
//!
//! cargo run --release --example gating_map

use nalgebra::Vector3;
use rtsplat::gradcheck::random_scene;
use rtsplat::{render, Camera, RenderOptions};

fn main() -> anyhow::Result<()> {
    let camera = Camera::look_at(
        Vector3::new(0.5, 0.3, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
        45.0,
        32,
        32,
    )?;
    let mut scene = random_scene(9, 80);
    for (label, scale) in [("smooth environment", 0.05), ("high-variance environment", 25.0)] {
        for c in scene.shading.env.iter_mut().skip(1) {
            for v in c.iter_mut() {
                *v *= scale;
            }
        }
        println!("{label}");
        for k in [0.0, 1.0, 4.0, 16.0] {
            let opts = RenderOptions {
                gate_k: k,
                ..RenderOptions::default()
            };
            let o = render(&scene, &camera, &opts)?.outputs;
            let g = o.gate.data();
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            let min = g.iter().copied().fold(1.0, f64::min);
            println!("  k = {k:>4}: mean gate {mean:.4}, min gate {min:.4}");
        }
        for c in scene.shading.env.iter_mut().skip(1) {
            for v in c.iter_mut() {
                *v /= scale;
            }
        }
    }
    Ok(())
}

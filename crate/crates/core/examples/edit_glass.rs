//! Selects a glass pane by bounding box, sharpens its reflection, tints it,
//! strips the reflection and makes it fully transmissive, then undoes the edits one by one.
//!
//! cargo run --release --example edit_glass

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsplat::edit::{apply_edit, undo_edit, EditOp, EditSpec, Selection};
use rtsplat::scene::logit;
use rtsplat::{render, Camera, GaussianSurfel, Image, RenderOptions, Scene, ShadingParams};

fn plane(z: f64, half: i32, step: f64, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<GaussianSurfel> {
    let mut out = Vec::new();
    for i in -half..=half {
        for j in -half..=half {
            let mut s = GaussianSurfel::new([i as f64 * step, j as f64 * step, z], [1.0, 0.0, 0.0, 0.0], [step, step], 1, rng);
            s.occupancy_raw = logit(0.999);
            s.opacity_raw = logit(alpha);
            s.roughness_raw = logit(0.15);
            s.sh_color[0] = [(i + j) as f64 * 0.2 % 1.0, 0.3, -0.2];
            out.push(s);
        }
    }
    out
}

fn color(scene: &Scene, camera: &Camera) -> anyhow::Result<Image> {
    Ok(render(scene, camera, &RenderOptions::default())?.outputs.color)
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut surfels = plane(0.0, 8, 0.0625, 0.05, &mut rng);
    surfels.extend(plane(2.0, 14, 0.2, 0.999, &mut rng));
    let mut shading = ShadingParams::init(&mut rng);
    // A bright lobe towards the camera so roughness has something to blur.
    shading.env[2] = [0.0, 0.0, -1.5];
    shading.env[6] = [0.8, 0.8, 0.8];
    let mut scene = Scene::new(surfels, shading, 1);
    let camera = Camera::look_at(
        Vector3::new(0.0, 0.0, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
        45.0,
        48,
        48,
    )?;
    let glass = Selection::Box {
        min: [-0.6, -0.6, -0.1],
        max: [0.6, 0.6, 0.1],
    };
    let original = color(&scene, &camera)?;
    let edits = [
        vec![EditOp::RoughnessScale(0.0)],
        vec![EditOp::Tint([1.0, 0.5, 0.5])],
        vec![EditOp::RemoveReflection, EditOp::SetTau(1.0)],
    ];
    for ops in edits {
        let before = color(&scene, &camera)?;
        let report = apply_edit(&mut scene, &EditSpec { selection: glass.clone(), ops: ops.clone() })?;
        let after = color(&scene, &camera)?;
        println!("{ops:?}: {} surfels, max pixel change {:.4}", report.selected, after.max_abs_diff(&before));
        for w in report.warnings {
            println!("  warning: {w}");
        }
    }
    while !scene.edit_journal.is_empty() {
        let frame = undo_edit(&mut scene)?;
        println!("undid `{}`", frame.description);
    }
    println!("after undo, max difference from the original: {:e}", color(&scene, &camera)?.max_abs_diff(&original));
    Ok(())
}

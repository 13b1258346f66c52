//! Short training run on a small synthetic scene, saved as a checkpoint,
//! reloaded and scored on the held-out views. Writes the metrics CSV.
//!
//! cargo run --release --example evaluate_checkpoint -- [out_dir]

use rtsplat::checkpoint;
use rtsplat::dataset::Dataset;
use rtsplat::metrics::{depth_agreement, evaluate, mask_opacity};
use rtsplat::render;
use rtsplat::synth::SceneSpec;
use rtsplat::train::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "eval_run".into());
    let spec = SceneSpec {
        width: 32,
        height: 32,
        supersample: 2,
        ..SceneSpec::default()
    };
    let data = Dataset::synthesize(&spec)?;
    let cfg = TrainConfig {
        iterations: 400,
        densify_from: 100,
        densify_interval: 50,
        reset_interval: 10_000,
        ..TrainConfig::default()
    };
    let outcome = train(&data, &cfg, Some(out.as_ref()))?;
    let path = format!("{out}/scene.rtsp");
    let scene = checkpoint::load(&path)?;
    println!("{path}: {} surfels, {} log rows", scene.len(), outcome.log.len());

    let opts = cfg.render_options();
    let report = evaluate(&scene, data.test_views(), &opts)?;
    print!("{}", report.to_table());
    std::fs::write(format!("{out}/metrics.csv"), report.to_csv())?;

    for v in data.test_views() {
        let o = render(&scene, &v.camera, &opts)?.outputs;
        let mask = v.mask.as_ref().unwrap();
        let (surface, volumetric) =
            depth_agreement(&o, v.glass_depth.as_ref().unwrap(), v.background_depth.as_ref().unwrap(), mask, 0.02)?;
        let (inside, outside) = mask_opacity(&o, mask)?;
        println!(
            "view {:>2}: depth ok surface {:.2} volumetric {:.2}; A_alpha inside {:.3} outside {:.3}",
            v.index, surface, volumetric, inside, outside
        );
    }
    Ok(())
}

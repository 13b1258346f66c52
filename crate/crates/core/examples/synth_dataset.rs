//! Ray-traces the default glass scene and writes it as a dataset directory.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [--high-variance]

use rtsplat::dataset::emit_dataset;
use rtsplat::synth::SceneSpec;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let high = args.iter().any(|a| a == "--high-variance");
    let out = args.iter().find(|a| !a.starts_with("--")).cloned().unwrap_or_else(|| "synthetic_glass".into());
    let spec = if high { SceneSpec::high_variance() } else { SceneSpec::default() };
    let data = emit_dataset(&spec, &out)?;
    let train = data.train_views().count();
    println!("{} views ({train} train / {} test) -> {out}", data.views.len(), data.views.len() - train);
    for v in &data.views {
        let mask = v.mask.as_ref().expect("synthetic views carry masks");
        let covered = mask.data().iter().filter(|&&m| m > 0.5).count();
        let mean: f64 = v.image.data().iter().sum::<f64>() / v.image.data().len() as f64;
        println!(
            "view {:>2} {:<5} glass pixels {:>4}  mean intensity {:.3}",
            v.index,
            if v.test { "test" } else { "train" },
            covered,
            mean
        );
    }
    println!("{} initial points", data.points.len());
    Ok(())
}

//! Trains on the default synthetic glass scene and reports test metrics.
//!
//! cargo run --release --example train_synthetic -- [iterations]

use rtsplat::dataset::Dataset;
use rtsplat::metrics::evaluate;
use rtsplat::synth::SceneSpec;
use rtsplat::train::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let t = std::time::Instant::now();
    let data = Dataset::synthesize(&SceneSpec::default())?;
    println!("synthesized {} views in {:.1}s", data.views.len(), t.elapsed().as_secs_f64());
    let cfg = TrainConfig {
        iterations,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let out = train(&data, &cfg, None)?;
    println!("trained {iterations} iterations in {:.1}s", t.elapsed().as_secs_f64());
    let report = evaluate(&out.scene, data.test_views(), &cfg.render_options())?;
    print!("{}", report.to_table());
    Ok(())
}

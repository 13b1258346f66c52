//! Prints the density-control events of a default training schedule and
//! replays them on a four-surfel scene to show which surfels survive.
//!
//! cargo run --release --example density_schedule -- [iterations]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsplat::scene::{activate, logit};
use rtsplat::train::adam::Adam;
use rtsplat::train::{density_control, DensityStats, TrainConfig};
use rtsplat::{GaussianSurfel, Scene, ShadingParams};

fn main() -> anyhow::Result<()> {
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5000);
    let cfg = TrainConfig {
        iterations,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut surfels = Vec::new();
    for (x, sigma, alpha) in [(0.0, 0.9, 0.001), (1.0, 0.004, 0.9), (2.0, 0.006, 0.5), (3.0, 0.8, 0.7)] {
        let mut s = GaussianSurfel::new([x, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [0.01, 0.01], 0, &mut rng);
        s.occupancy_raw = logit(sigma);
        s.opacity_raw = logit(alpha);
        surfels.push(s);
    }
    let mut scene = Scene::new(surfels, ShadingParams::zeros(), 0);
    let mut adam = Adam::new(&scene);
    let mut stats = DensityStats::new(scene.len());
    println!("densify every {} from {} to {}", cfg.densify_interval, cfg.densify_from, cfg.densify_until());
    for it in 1..=iterations {
        let report = density_control(&mut scene, &mut adam, &mut stats, it, &cfg, 1.0, &mut rng);
        if report.pruned > 0 || report.reset.is_some() {
            let state: Vec<String> = scene
                .surfels
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let a = activate(s, i).unwrap();
                    format!("x={} σ={:.3} α={:.3}", s.position[0], a.sigma, a.alpha)
                })
                .collect();
            println!("iter {it:>5}: pruned {} reset {:?} -> [{}]", report.pruned, report.reset, state.join("; "));
        }
    }
    Ok(())
}

//! Densify, prune and reset schedule.
//!
//! Densification clones or splits surfels whose mean screen-space positional
//! gradient exceeds a threshold; pruning removes surfels with low geometric
//! occupancy only; resets alternate between clamping optical opacity
//! (odd multiples of the reset interval) and occupancy (even multiples).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::backward::GradientBundle;
use crate::raster::OpacityModel;
use crate::scene::{activate, logit, surfel_frame, ParamGroup, Scene};

use super::adam::Adam;
use super::config::TrainConfig;

/// Children per split surfel and their scale shrink factor.
pub const SPLIT_CHILDREN: usize = 2;
pub const SPLIT_SHRINK: f64 = 1.6;

/// Running sums of the screen-space positional gradient per surfel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityStats {
    pub accum: Vec<f64>,
    pub denom: Vec<u32>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            denom: vec![0; n],
        }
    }

    /// Adds one view's gradients; only surfels that received fragments count.
    pub fn add(&mut self, grads: &GradientBundle) {
        for i in 0..self.accum.len() {
            if grads.visible[i] {
                self.accum[i] += grads.screen_grad[i];
                self.denom[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.denom[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.denom[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reset {
    /// `α ← min(α, ceiling)`.
    Opacity,
    /// `σ ← min(σ, ceiling)`.
    Occupancy,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub reset: Option<Reset>,
}

/// Reset due at `iteration`, if any.
pub fn reset_due(iteration: u64, cfg: &TrainConfig) -> Option<Reset> {
    if iteration == 0 || iteration % cfg.reset_interval != 0 {
        return None;
    }
    if (iteration / cfg.reset_interval) % 2 == 1 {
        Some(Reset::Opacity)
    } else {
        Some(Reset::Occupancy)
    }
}

pub fn densify_due(iteration: u64, cfg: &TrainConfig) -> bool {
    iteration >= cfg.densify_from && iteration <= cfg.densify_until() && iteration % cfg.densify_interval == 0
}

/// Raw parameter that plays the role of `σ` under `model`.
fn occupancy_group(model: OpacityModel) -> ParamGroup {
    match model {
        OpacityModel::Factorized => ParamGroup::Occupancy,
        OpacityModel::Tied => ParamGroup::Opacity,
    }
}

/// Clamps every activated value of `group` to at most `ceiling` and clears
/// its optimizer moments.
pub fn apply_reset(scene: &mut Scene, adam: &mut Adam, reset: Reset, model: OpacityModel, ceiling: f64) {
    let group = match reset {
        Reset::Opacity => ParamGroup::Opacity,
        Reset::Occupancy => occupancy_group(model),
    };
    let cap = logit(ceiling);
    for s in scene.surfels.iter_mut() {
        let raw = &mut s.group_mut(group)[0];
        *raw = raw.min(cap);
    }
    adam.reset_group(group);
}

/// Removes surfels whose occupancy is below the threshold. Optical opacity
/// is never a pruning criterion.
pub fn prune(scene: &mut Scene, adam: &mut Adam, stats: &mut DensityStats, model: OpacityModel, threshold: f64) -> usize {
    let keep: Vec<bool> = scene
        .surfels
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let a = activate(s, i).expect("validated surfel");
            let occ = match model {
                OpacityModel::Factorized => a.sigma,
                OpacityModel::Tied => a.alpha,
            };
            occ >= threshold
        })
        .collect();
    let removed = keep.iter().filter(|k| !**k).count();
    scene.retain_mask(&keep);
    adam.retain(&keep);
    let mut it = keep.iter();
    stats.accum.retain(|_| *it.next().unwrap());
    let mut it = keep.iter();
    stats.denom.retain(|_| *it.next().unwrap());
    removed
}

/// Clones or splits surfels with large mean positional gradient.
/// Returns `(cloned, split)`.
pub fn densify<R: Rng + ?Sized>(
    scene: &mut Scene,
    adam: &mut Adam,
    stats: &mut DensityStats,
    cfg: &TrainConfig,
    extent: f64,
    rng: &mut R,
) -> (usize, usize) {
    let n = scene.len();
    let mut cand: Vec<(usize, f64)> = (0..n)
        .map(|i| (i, stats.mean(i)))
        .filter(|&(_, g)| g > cfg.densify_grad_threshold)
        .collect();
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let split_limit = cfg.split_scale_fraction * extent;
    let mut room = cfg.max_surfels.saturating_sub(n);
    let mut keep = vec![true; n];
    let (mut cloned, mut split) = (0, 0);
    let mut born = Vec::new();
    for (i, _) in cand {
        let s = &scene.surfels[i];
        let big = s.log_scale[0].max(s.log_scale[1]).exp() > split_limit;
        if big {
            // Splitting nets one extra surfel.
            if room < SPLIT_CHILDREN - 1 {
                continue;
            }
            room -= SPLIT_CHILDREN - 1;
            let frame = surfel_frame(s.rotation).expect("validated surfel");
            let scale = [s.log_scale[0].exp(), s.log_scale[1].exp()];
            for _ in 0..SPLIT_CHILDREN {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let offset = frame.tu * (a * scale[0]) + frame.tv * (b * scale[1]);
                let mut child = s.clone();
                for k in 0..3 {
                    child.position[k] += offset[k];
                }
                for l in child.log_scale.iter_mut() {
                    *l -= SPLIT_SHRINK.ln();
                }
                born.push((child, scene.reflection_removed[i]));
            }
            keep[i] = false;
            split += 1;
        } else {
            if room == 0 {
                continue;
            }
            room -= 1;
            born.push((s.clone(), scene.reflection_removed[i]));
            cloned += 1;
        }
    }
    scene.retain_mask(&keep);
    adam.retain(&keep);
    for (s, removed) in born {
        adam.push(&s);
        scene.push(s);
        *scene.reflection_removed.last_mut().unwrap() = removed;
    }
    (cloned, split)
}

/// One density-control call after the optimizer step of `iteration`.
pub fn density_control<R: Rng + ?Sized>(
    scene: &mut Scene,
    adam: &mut Adam,
    stats: &mut DensityStats,
    iteration: u64,
    cfg: &TrainConfig,
    extent: f64,
    rng: &mut R,
) -> DensityReport {
    let model = cfg.opacity_model();
    let mut report = DensityReport::default();
    if densify_due(iteration, cfg) {
        let (c, s) = densify(scene, adam, stats, cfg, extent, rng);
        report.cloned = c;
        report.split = s;
        *stats = DensityStats::new(scene.len());
        report.pruned = prune(scene, adam, stats, model, cfg.prune_occupancy);
    }
    if let Some(r) = reset_due(iteration, cfg) {
        apply_reset(scene, adam, r, model, cfg.reset_value);
        report.reset = Some(r);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{GaussianSurfel, Scene};
    use crate::shading::ShadingParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn surfel(x: f64, sigma: f64, alpha: f64, scale: f64) -> GaussianSurfel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = GaussianSurfel::new([x, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0], [scale, scale], 0, &mut rng);
        s.occupancy_raw = logit(sigma);
        s.opacity_raw = logit(alpha);
        s
    }

    fn scene(surfels: Vec<GaussianSurfel>) -> Scene {
        Scene::new(surfels, ShadingParams::zeros(), 0)
    }

    fn cfg(iterations: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn reset_schedule_alternates() {
        let c = cfg(10_000);
        assert_eq!(reset_due(1500, &c), Some(Reset::Opacity));
        assert_eq!(reset_due(3000, &c), Some(Reset::Occupancy));
        assert_eq!(reset_due(4500, &c), Some(Reset::Opacity));
        assert_eq!(reset_due(6000, &c), Some(Reset::Occupancy));
        assert_eq!(reset_due(7500, &c), Some(Reset::Opacity));
        assert_eq!(reset_due(7499, &c), None);
        assert_eq!(reset_due(1499, &c), None);
        assert_eq!(reset_due(0, &c), None);
    }

    #[test]
    fn opacity_reset_leaves_occupancy_alone() {
        let mut sc = scene(vec![surfel(0.0, 0.9, 0.8, 0.1), surfel(1.0, 0.5, 0.003, 0.1)]);
        let mut adam = Adam::new(&sc);
        apply_reset(&mut sc, &mut adam, Reset::Opacity, OpacityModel::Factorized, 0.01);
        let a0 = activate(&sc.surfels[0], 0).unwrap();
        let a1 = activate(&sc.surfels[1], 1).unwrap();
        assert!((a0.alpha - 0.01).abs() < 1e-12);
        assert!((a1.alpha - 0.003).abs() < 1e-12, "below the ceiling stays put");
        assert!((a0.sigma - 0.9).abs() < 1e-12);
        assert!((a1.sigma - 0.5).abs() < 1e-12);
    }

    #[test]
    fn occupancy_reset_leaves_opacity_alone() {
        let mut sc = scene(vec![surfel(0.0, 0.9, 0.8, 0.1)]);
        let mut adam = Adam::new(&sc);
        apply_reset(&mut sc, &mut adam, Reset::Occupancy, OpacityModel::Factorized, 0.01);
        let a = activate(&sc.surfels[0], 0).unwrap();
        assert!((a.sigma - 0.01).abs() < 1e-12);
        assert!((a.alpha - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tied_resets_both_hit_opacity() {
        let mut sc = scene(vec![surfel(0.0, 0.9, 0.8, 0.1)]);
        let mut adam = Adam::new(&sc);
        apply_reset(&mut sc, &mut adam, Reset::Occupancy, OpacityModel::Tied, 0.01);
        let a = activate(&sc.surfels[0], 0).unwrap();
        assert!((a.alpha - 0.01).abs() < 1e-12);
        assert!((a.sigma - 0.9).abs() < 1e-12);
    }

    #[test]
    fn prune_uses_occupancy_not_opacity() {
        let mut sc = scene(vec![
            surfel(0.0, 0.9, 0.001, 0.1),
            surfel(1.0, 0.004, 0.9, 0.1),
            surfel(2.0, 0.006, 0.5, 0.1),
        ]);
        let mut adam = Adam::new(&sc);
        let mut stats = DensityStats::new(3);
        let removed = prune(&mut sc, &mut adam, &mut stats, OpacityModel::Factorized, 0.005);
        assert_eq!(removed, 1);
        assert_eq!(sc.len(), 2);
        assert_eq!(sc.surfels[0].position[0], 0.0);
        assert_eq!(sc.surfels[1].position[0], 2.0);
        assert_eq!(stats.accum.len(), 2);
    }

    #[test]
    fn densify_clones_small_and_splits_large() {
        let mut sc = scene(vec![
            surfel(0.0, 0.5, 0.5, 0.001),
            surfel(1.0, 0.5, 0.5, 0.5),
            surfel(2.0, 0.5, 0.5, 0.5),
        ]);
        let mut adam = Adam::new(&sc);
        let mut stats = DensityStats {
            accum: vec![1.0, 1.0, 1e-6],
            denom: vec![1, 1, 1],
        };
        let c = cfg(7000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (cloned, split) = densify(&mut sc, &mut adam, &mut stats, &c, 1.0, &mut rng);
        assert_eq!((cloned, split), (1, 1));
        // Parent 1 replaced by two children; parent 0 kept plus one clone.
        assert_eq!(sc.len(), 5);
        let children: Vec<_> = sc.surfels.iter().filter(|s| (s.log_scale[0] - (0.5f64.ln() - 1.6f64.ln())).abs() < 1e-12).collect();
        assert_eq!(children.len(), 2);
        for ch in children {
            // Offsets stay in the tangent plane (normal is +z here).
            assert!((ch.position[2] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn densify_respects_surfel_cap() {
        let mut sc = scene((0..4).map(|i| surfel(i as f64, 0.5, 0.5, 0.001)).collect());
        let mut adam = Adam::new(&sc);
        let mut stats = DensityStats {
            accum: vec![1.0; 4],
            denom: vec![1; 4],
        };
        let c = TrainConfig {
            max_surfels: 6,
            ..cfg(7000)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (cloned, _) = densify(&mut sc, &mut adam, &mut stats, &c, 1.0, &mut rng);
        assert_eq!(cloned, 2);
        assert_eq!(sc.len(), 6);
    }
}

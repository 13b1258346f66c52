//! Optimization loop: render, losses, backward with gating, optimizer step,
//! density control.

pub mod adam;
pub mod config;
pub mod density;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backward::backward;
use crate::camera::Camera;
use crate::checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{view_objective, LossComponents};
use crate::render::render;
use crate::scene::{GaussianSurfel, Scene};
use crate::sh;
use crate::shading::ShadingParams;
use crate::synth::InitPoint;

pub use adam::{Adam, LearningRates};
pub use config::{Ablations, TrainConfig};
pub use density::{density_control, DensityReport, DensityStats, Reset};

/// Points drawn when a dataset ships without initialization points.
pub const RANDOM_INIT_POINTS: usize = 2000;
const MIN_INIT_SCALE: f64 = 1e-3;
const NORMAL_NEIGHBOURS: usize = 8;

/// Radius of the camera centers around their mean, padded by 10%.
pub fn scene_extent(cameras: &[&Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let mean = cameras.iter().map(|c| c.center()).sum::<Vector3<f64>>() / cameras.len() as f64;
    let r = cameras.iter().map(|c| (c.center() - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

fn random_points<R: Rng + ?Sized>(cameras: &[&Camera], extent: f64, rng: &mut R) -> Vec<InitPoint> {
    let n = cameras.len() as f64;
    let center = cameras.iter().map(|c| c.center()).sum::<Vector3<f64>>() / n;
    let forward = cameras.iter().map(|c| c.forward()).sum::<Vector3<f64>>() / n;
    let focus = center + forward * (2.0 * extent);
    let h = 2.0 * extent;
    (0..RANDOM_INIT_POINTS)
        .map(|_| InitPoint {
            position: std::array::from_fn(|k| focus[k] + rng.gen_range(-h..h)),
            color: [0.5; 3],
            kind: crate::synth::PointKind::Random,
        })
        .collect()
}

/// Surfels at the given points: random orientation, isotropic scale from the
/// mean squared distance to the three nearest neighbours, colour from the
/// point, every logistic attribute at its midpoint.
pub fn initial_scene<R: Rng + ?Sized>(points: &[InitPoint], sh_degree: usize, rng: &mut R) -> Scene {
    let y00 = sh::C0;
    let mut surfels = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        // (squared distance, index), ascending
        let mut near: Vec<(f64, usize)> = Vec::with_capacity(NORMAL_NEIGHBOURS + 1);
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2: f64 = (0..3).map(|k| (p.position[k] - q.position[k]).powi(2)).sum();
            if near.len() < NORMAL_NEIGHBOURS || d2 < near[near.len() - 1].0 {
                let at = near.partition_point(|&(d, _)| d <= d2);
                near.insert(at, (d2, j));
                near.truncate(NORMAL_NEIGHBOURS);
            }
        }
        let scale = if near.is_empty() {
            0.1
        } else {
            let k = near.len().min(3);
            (near[..k].iter().map(|n| n.0).sum::<f64>() / k as f64).sqrt().max(MIN_INIT_SCALE)
        };
        let q = match pca_normal(p.position, &near, points) {
            Some(n) => {
                let r = UnitQuaternion::rotation_between(&Vector3::z(), &n)
                    .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
                [r.w, r.i, r.j, r.k]
            }
            None => random_quaternion(rng),
        };
        let mut s = GaussianSurfel::new(p.position, q, [scale, scale], sh_degree, rng);
        s.sh_color[0] = p.color.map(|c| (c - 0.5) / y00);
        surfels.push(s);
    }
    Scene::new(surfels, ShadingParams::init(rng), sh_degree)
}

/// Smallest-variance direction of a point and its neighbours.
fn pca_normal(center: [f64; 3], near: &[(f64, usize)], points: &[InitPoint]) -> Option<Vector3<f64>> {
    if near.len() < 3 {
        return None;
    }
    let pts: Vec<Vector3<f64>> = std::iter::once(Vector3::from(center))
        .chain(near.iter().map(|&(_, j)| Vector3::from(points[j].position)))
        .collect();
    let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let cov = pts.iter().map(|x| (x - mean) * (x - mean).transpose()).sum::<Matrix3<f64>>();
    let eig = cov.symmetric_eigen();
    let (k, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let n = eig.eigenvectors.column(k).into_owned();
    let len = n.norm();
    (len > 1e-12 && len.is_finite()).then(|| n / len)
}

fn random_quaternion<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|v| v / n);
        }
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub view: usize,
    pub loss: LossComponents,
    pub surfels: usize,
}

pub const LOG_HEADER: &str = "iteration,view,image,l1,ssim,normal,mask,total,n_surfels";

impl LogRow {
    /// CSV line with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iteration, self.view, l.image, l.l1, l.ssim, l.normal, l.mask, l.total, self.surfels
        )
    }
}

pub struct Trainer {
    pub scene: Scene,
    pub adam: Adam,
    pub stats: DensityStats,
    pub config: TrainConfig,
    pub extent: f64,
    pub log: Vec<LogRow>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    /// Validates the dataset and initializes surfels from its points (or
    /// random points when it has none).
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cams: Vec<&Camera> = dataset.train_views().map(|v| &v.camera).collect();
        if cams.is_empty() {
            return Err(Error::InvalidParameter("dataset has no training views".into()));
        }
        let extent = scene_extent(&cams);
        let points = if dataset.points.is_empty() {
            random_points(&cams, extent, &mut rng)
        } else {
            dataset.points.clone()
        };
        let scene = initial_scene(&points, config.sh_degree, &mut rng);
        Self::from_parts(dataset, config, scene, rng, extent)
    }

    /// Resumes from an existing scene (its iteration counter is kept).
    pub fn with_scene(dataset: &Dataset, config: TrainConfig, scene: Scene) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        scene.validate()?;
        let cams: Vec<&Camera> = dataset.train_views().map(|v| &v.camera).collect();
        if cams.is_empty() {
            return Err(Error::InvalidParameter("dataset has no training views".into()));
        }
        let extent = scene_extent(&cams);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ scene.iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self::from_parts(dataset, config, scene, rng, extent)
    }

    fn from_parts(dataset: &Dataset, config: TrainConfig, scene: Scene, rng: ChaCha8Rng, extent: f64) -> Result<Self> {
        if scene.sh_degree != config.sh_degree {
            return Err(Error::InvalidParameter(format!(
                "scene has sh degree {}, config asks for {}",
                scene.sh_degree, config.sh_degree
            )));
        }
        let order = dataset.train_views().map(|v| v.index).collect();
        let n = scene.len();
        Ok(Self {
            adam: Adam::new(&scene),
            stats: DensityStats::new(n),
            scene,
            config,
            extent,
            log: Vec::new(),
            rng,
            order,
            cursor: usize::MAX,
        })
    }

    fn next_view(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Learning rates at `iteration`: positions decay log-linearly to the
    /// final rate over the run.
    pub fn learning_rates(&self, iteration: u64) -> LearningRates {
        let cfg = &self.config;
        let mut lr = cfg.lr.clone();
        let t = if cfg.iterations == 0 {
            0.0
        } else {
            (iteration as f64 / cfg.iterations as f64).clamp(0.0, 1.0)
        };
        let (a, b) = (cfg.lr.position, cfg.position_lr_final);
        lr.position = if a > 0.0 && b > 0.0 {
            ((1.0 - t) * a.ln() + t * b.ln()).exp()
        } else {
            a
        };
        if cfg.position_lr_scaled {
            lr.position *= self.extent;
        }
        lr
    }

    /// Runs one iteration and returns its log row.
    pub fn step(&mut self, dataset: &Dataset) -> Result<LogRow> {
        let iteration = self.scene.iteration + 1;
        let index = self.next_view();
        let view = dataset
            .views
            .iter()
            .find(|v| v.index == index)
            .ok_or_else(|| Error::Contract(format!("view {index} vanished from the dataset")))?;
        let opts = self.config.render_options();
        let weights = self.config.loss_weights();
        let rendered = render(&self.scene, &view.camera, &opts)?;
        let (loss, out_grads) = view_objective(&rendered.outputs, &view.camera, &view.image, view.mask.as_ref(), &weights)?;
        let grads = backward(&self.scene, &rendered, &out_grads)?;
        if !grads.is_finite() {
            return Err(Error::Contract(format!("non-finite gradient at iteration {iteration}")));
        }
        self.stats.add(&grads);
        let lr = self.learning_rates(iteration);
        self.adam.step(&mut self.scene, &grads, &lr)?;
        self.scene.iteration = iteration;
        let report = density_control(
            &mut self.scene,
            &mut self.adam,
            &mut self.stats,
            iteration,
            &self.config,
            self.extent,
            &mut self.rng,
        );
        if report != DensityReport::default() {
            debug!(
                "iteration {iteration}: cloned {}, split {}, pruned {}, reset {:?}, {} surfels",
                report.cloned,
                report.split,
                report.pruned,
                report.reset,
                self.scene.len()
            );
        }
        let row = LogRow {
            iteration,
            view: index,
            loss,
            surfels: self.scene.len(),
        };
        self.log.push(row);
        Ok(row)
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.log {
            let _ = writeln!(s, "{}", r.to_csv());
        }
        s
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub scene: Scene,
    pub log: Vec<LogRow>,
    pub log_csv: String,
}

/// Trains from scratch. With `out`, writes `config.txt`, `train_log.csv`,
/// periodic `checkpoints/iter_NNNNNN.rtsp` and the final `scene.rtsp`.
pub fn train(dataset: &Dataset, config: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config.clone())?;
    run(&mut trainer, dataset, out)
}

/// Continues `trainer` up to its configured iteration count.
pub fn run(trainer: &mut Trainer, dataset: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    let mkdir = |p: PathBuf| fs::create_dir_all(&p).map_err(|e| Error::io(p, e));
    if let Some(dir) = out {
        mkdir(dir.to_path_buf())?;
        let p = dir.join("config.txt");
        fs::write(&p, trainer.config.to_kv().to_text()).map_err(|e| Error::io(p, e))?;
        if trainer.config.checkpoint_every > 0 {
            mkdir(dir.join("checkpoints"))?;
        }
    }
    let total = trainer.config.iterations;
    info!(
        "training {} surfels for {} iterations ({} train views)",
        trainer.scene.len(),
        total.saturating_sub(trainer.scene.iteration),
        trainer.order.len()
    );
    while trainer.scene.iteration < total {
        let row = trainer.step(dataset)?;
        if row.iteration % 100 == 0 || row.iteration == total {
            info!(
                "iter {:>6}  loss {:.5}  l1 {:.5}  surfels {}",
                row.iteration, row.loss.total, row.loss.l1, row.surfels
            );
        }
        let every = trainer.config.checkpoint_every;
        if let Some(dir) = out {
            if every > 0 && row.iteration % every == 0 {
                checkpoint::save(&trainer.scene, dir.join(format!("checkpoints/iter_{:06}.rtsp", row.iteration)))?;
            }
        }
    }
    let log_csv = trainer.log_csv();
    if let Some(dir) = out {
        checkpoint::save(&trainer.scene, dir.join("scene.rtsp"))?;
        let p = dir.join("train_log.csv");
        fs::write(&p, &log_csv).map_err(|e| Error::io(p, e))?;
    }
    Ok(TrainOutcome {
        scene: trainer.scene.clone(),
        log: trainer.log.clone(),
        log_csv,
    })
}

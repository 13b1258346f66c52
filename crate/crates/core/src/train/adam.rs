//! Adaptive moment estimation over surfel and shading parameters.

use crate::backward::GradientBundle;
use crate::error::{Error, Result};
use crate::scene::{GaussianSurfel, ParamGroup, Scene};
use crate::shading::ShadingParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Step size per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub occupancy: f64,
    pub opacity: f64,
    pub sh_color: f64,
    /// Roughness, material feature, scatter colour and transmissivity.
    pub surface: f64,
    pub shading: f64,
}

impl LearningRates {
    pub fn of(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Position => self.position,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scale,
            ParamGroup::Occupancy => self.occupancy,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::ShColor => self.sh_color,
            ParamGroup::Roughness | ParamGroup::Material | ParamGroup::ScatterColor | ParamGroup::Transmissivity => {
                self.surface
            }
        }
    }

    pub fn uniform(lr: f64) -> Self {
        Self {
            position: lr,
            rotation: lr,
            scale: lr,
            occupancy: lr,
            opacity: lr,
            sh_color: lr,
            surface: lr,
            shading: lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    /// Completed steps; bias correction uses `step + 1` on the next update.
    pub step: u64,
    pub m: Vec<GaussianSurfel>,
    pub v: Vec<GaussianSurfel>,
    pub m_shading: ShadingParams,
    pub v_shading: ShadingParams,
}

#[inline]
fn update(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let mhat = *m / c1;
    let vhat = *v / c2;
    *p -= lr * mhat / (vhat.sqrt() + EPSILON);
}

impl Adam {
    pub fn new(scene: &Scene) -> Self {
        Self {
            step: 0,
            m: scene.surfels.iter().map(GaussianSurfel::zeros_like).collect(),
            v: scene.surfels.iter().map(GaussianSurfel::zeros_like).collect(),
            m_shading: ShadingParams::zeros(),
            v_shading: ShadingParams::zeros(),
        }
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, scene: &mut Scene, grads: &GradientBundle, lr: &LearningRates) -> Result<()> {
        let n = scene.surfels.len();
        if grads.surfels.len() != n || self.m.len() != n || self.v.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "optimizer step over {n} surfels with {} gradients and {} moments",
                grads.surfels.len(),
                self.m.len()
            )));
        }
        for (i, g) in grads.surfels.iter().enumerate() {
            if g.sh_color.len() != scene.surfels[i].sh_color.len() {
                return Err(Error::DimensionMismatch(format!("surfel {i}: sh coefficient count")));
            }
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..n {
            for group in ParamGroup::ALL {
                let rate = lr.of(group);
                let p = scene.surfels[i].group_mut(group);
                let m = self.m[i].group_mut(group);
                let v = self.v[i].group_mut(group);
                let g = grads.surfels[i].group(group);
                for k in 0..p.len() {
                    update(&mut p[k], &mut m[k], &mut v[k], g[k], rate, c1, c2);
                }
            }
        }
        let gs = grads.shading.slices();
        let ms = self.m_shading.slices_mut();
        let vs = self.v_shading.slices_mut();
        for (((p, m), v), g) in scene.shading.slices_mut().into_iter().zip(ms).zip(vs).zip(gs) {
            for k in 0..p.len() {
                update(&mut p[k], &mut m[k], &mut v[k], g[k], lr.shading, c1, c2);
            }
        }
        Ok(())
    }

    /// Keeps the moments of surfels whose `keep` entry is true.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.m.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.v.retain(|_| *it.next().unwrap());
    }

    /// Appends zero moments for a new surfel shaped like `like`.
    pub fn push(&mut self, like: &GaussianSurfel) {
        self.m.push(like.zeros_like());
        self.v.push(like.zeros_like());
    }

    /// Zeroes the moments of one group (after a parameter reset).
    pub fn reset_group(&mut self, group: ParamGroup) {
        for s in self.m.iter_mut().chain(self.v.iter_mut()) {
            s.group_mut(group).iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::raster::OpacityModel;
use crate::render::RenderOptions;
use crate::scene::DEFAULT_SH_DEGREE;

use super::adam::LearningRates;

/// Which parts of the model are switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablations {
    /// One shared opacity drives both passes (σ ≡ α).
    pub no_occupancy: bool,
    /// `τ ≡ 1`: no intrinsic scattered colour.
    pub no_scattering: bool,
    /// `β ≡ 1`.
    pub no_attenuation: bool,
    /// Equivalent to `k = 0`.
    pub no_gating: bool,
    pub no_mask_loss: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub seed: u64,
    pub sh_degree: usize,
    pub lr: LearningRates,
    pub position_lr_final: f64,
    /// Multiply both position rates by the scene extent.
    pub position_lr_scaled: bool,
    pub densify_interval: u64,
    pub densify_from: u64,
    /// Densification stops after this fraction of the iterations.
    pub densify_until_fraction: f64,
    pub densify_grad_threshold: f64,
    /// Surfels larger than this fraction of the scene extent are split, smaller ones cloned.
    pub split_scale_fraction: f64,
    pub prune_occupancy: f64,
    pub reset_interval: u64,
    pub reset_value: f64,
    pub max_surfels: usize,
    pub loss: LossWeights,
    pub ablations: Ablations,
    /// Write a checkpoint every this many iterations (0: final only).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 7000,
            seed: 0,
            sh_degree: DEFAULT_SH_DEGREE,
            lr: LearningRates {
                position: 1.6e-4,
                rotation: 1e-3,
                scale: 5e-3,
                occupancy: 5e-2,
                opacity: 5e-2,
                sh_color: 2.5e-3,
                surface: 2.5e-3,
                shading: 1e-3,
            },
            position_lr_final: 1.6e-6,
            position_lr_scaled: true,
            densify_interval: 100,
            densify_from: 300,
            densify_until_fraction: 0.6,
            densify_grad_threshold: 2e-4,
            split_scale_fraction: 0.01,
            prune_occupancy: 0.005,
            reset_interval: 1500,
            reset_value: 0.01,
            max_surfels: 20_000,
            loss: LossWeights::default(),
            ablations: Ablations::default(),
            checkpoint_every: 0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "iterations",
    "seed",
    "sh_degree",
    "lr_position",
    "lr_position_final",
    "lr_position_scaled",
    "lr_rotation",
    "lr_scale",
    "lr_occupancy",
    "lr_opacity",
    "lr_sh_color",
    "lr_surface",
    "lr_shading",
    "densify_interval",
    "densify_from",
    "densify_until_fraction",
    "densify_grad_threshold",
    "split_scale_fraction",
    "prune_occupancy",
    "reset_interval",
    "reset_value",
    "max_surfels",
    "lambda_dssim",
    "lambda_perc",
    "lambda_normal",
    "lambda_mask",
    "gate_k",
    "bce_eps",
    "checkpoint_every",
    "no_occupancy",
    "no_scattering",
    "no_attenuation",
    "no_gating",
    "no_mask_loss",
];

impl TrainConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(CONFIG_KEYS)?;
        let d = Self::default();
        let flag = |k: &str| -> Result<bool> { Ok(kv.get_bool(k)?.unwrap_or(false)) };
        let cfg = Self {
            iterations: kv.get_or("iterations", d.iterations)?,
            seed: kv.get_or("seed", d.seed)?,
            sh_degree: kv.get_or("sh_degree", d.sh_degree)?,
            lr: LearningRates {
                position: kv.get_or("lr_position", d.lr.position)?,
                rotation: kv.get_or("lr_rotation", d.lr.rotation)?,
                scale: kv.get_or("lr_scale", d.lr.scale)?,
                occupancy: kv.get_or("lr_occupancy", d.lr.occupancy)?,
                opacity: kv.get_or("lr_opacity", d.lr.opacity)?,
                sh_color: kv.get_or("lr_sh_color", d.lr.sh_color)?,
                surface: kv.get_or("lr_surface", d.lr.surface)?,
                shading: kv.get_or("lr_shading", d.lr.shading)?,
            },
            position_lr_final: kv.get_or("lr_position_final", d.position_lr_final)?,
            position_lr_scaled: kv.get_bool("lr_position_scaled")?.unwrap_or(d.position_lr_scaled),
            densify_interval: kv.get_or("densify_interval", d.densify_interval)?,
            densify_from: kv.get_or("densify_from", d.densify_from)?,
            densify_until_fraction: kv.get_or("densify_until_fraction", d.densify_until_fraction)?,
            densify_grad_threshold: kv.get_or("densify_grad_threshold", d.densify_grad_threshold)?,
            split_scale_fraction: kv.get_or("split_scale_fraction", d.split_scale_fraction)?,
            prune_occupancy: kv.get_or("prune_occupancy", d.prune_occupancy)?,
            reset_interval: kv.get_or("reset_interval", d.reset_interval)?,
            reset_value: kv.get_or("reset_value", d.reset_value)?,
            max_surfels: kv.get_or("max_surfels", d.max_surfels)?,
            loss: LossWeights {
                lambda_dssim: kv.get_or("lambda_dssim", d.loss.lambda_dssim)?,
                lambda_perc: kv.get_or("lambda_perc", d.loss.lambda_perc)?,
                lambda_normal: kv.get_or("lambda_normal", d.loss.lambda_normal)?,
                lambda_mask: kv.get_or("lambda_mask", d.loss.lambda_mask)?,
                gate_k: kv.get_or("gate_k", d.loss.gate_k)?,
                bce_eps: kv.get_or("bce_eps", d.loss.bce_eps)?,
            },
            ablations: Ablations {
                no_occupancy: flag("no_occupancy")?,
                no_scattering: flag("no_scattering")?,
                no_attenuation: flag("no_attenuation")?,
                no_gating: flag("no_gating")?,
                no_mask_loss: flag("no_mask_loss")?,
            },
            checkpoint_every: kv.get_or("checkpoint_every", d.checkpoint_every)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("iterations", self.iterations);
        kv.set("seed", self.seed);
        kv.set("sh_degree", self.sh_degree);
        kv.set("lr_position", self.lr.position);
        kv.set("lr_position_final", self.position_lr_final);
        kv.set("lr_position_scaled", self.position_lr_scaled);
        kv.set("lr_rotation", self.lr.rotation);
        kv.set("lr_scale", self.lr.scale);
        kv.set("lr_occupancy", self.lr.occupancy);
        kv.set("lr_opacity", self.lr.opacity);
        kv.set("lr_sh_color", self.lr.sh_color);
        kv.set("lr_surface", self.lr.surface);
        kv.set("lr_shading", self.lr.shading);
        kv.set("densify_interval", self.densify_interval);
        kv.set("densify_from", self.densify_from);
        kv.set("densify_until_fraction", self.densify_until_fraction);
        kv.set("densify_grad_threshold", self.densify_grad_threshold);
        kv.set("split_scale_fraction", self.split_scale_fraction);
        kv.set("prune_occupancy", self.prune_occupancy);
        kv.set("reset_interval", self.reset_interval);
        kv.set("reset_value", self.reset_value);
        kv.set("max_surfels", self.max_surfels);
        kv.set("lambda_dssim", self.loss.lambda_dssim);
        kv.set("lambda_perc", self.loss.lambda_perc);
        kv.set("lambda_normal", self.loss.lambda_normal);
        kv.set("lambda_mask", self.loss.lambda_mask);
        kv.set("gate_k", self.loss.gate_k);
        kv.set("bce_eps", self.loss.bce_eps);
        kv.set("checkpoint_every", self.checkpoint_every);
        let a = &self.ablations;
        kv.set("no_occupancy", a.no_occupancy);
        kv.set("no_scattering", a.no_scattering);
        kv.set("no_attenuation", a.no_attenuation);
        kv.set("no_gating", a.no_gating);
        kv.set("no_mask_loss", a.no_mask_loss);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.densify_interval == 0 || self.reset_interval == 0 {
            return bad("densify and reset intervals must be positive".into());
        }
        for (name, v) in [
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("prune_occupancy", self.prune_occupancy),
            ("reset_value", self.reset_value),
            ("split_scale_fraction", self.split_scale_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} = {v} must lie in (0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.densify_until_fraction) {
            return bad("densify_until_fraction must lie in [0, 1]".into());
        }
        let l = &self.lr;
        for v in [
            l.position,
            l.rotation,
            l.scale,
            l.occupancy,
            l.opacity,
            l.sh_color,
            l.surface,
            l.shading,
            self.position_lr_final,
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("learning rate {v} must be finite and >= 0"));
            }
        }
        if self.sh_degree > crate::sh::MAX_DEGREE {
            return bad(format!("sh_degree {} too large", self.sh_degree));
        }
        self.loss.validate()
    }

    /// Last iteration at which densification (and resets) may run.
    pub fn densify_until(&self) -> u64 {
        (self.densify_until_fraction * self.iterations as f64).floor() as u64
    }

    pub fn opacity_model(&self) -> OpacityModel {
        if self.ablations.no_occupancy {
            OpacityModel::Tied
        } else {
            OpacityModel::Factorized
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            opacity_model: self.opacity_model(),
            gate_k: if self.ablations.no_gating { 0.0 } else { self.loss.gate_k },
            scattering: !self.ablations.no_scattering,
            attenuation: !self.ablations.no_attenuation,
            frozen_gate: None,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let mut w = self.loss.clone();
        if self.ablations.no_mask_loss {
            w.lambda_mask = 0.0;
        }
        if self.ablations.no_gating {
            w.gate_k = 0.0;
        }
        w
    }
}

//! Full forward pipeline: rasterize both passes, shade the G-buffer, gate and
//! composite. Keeps every intermediate the backward pass needs.

use nalgebra::{DMatrix, Vector3};

use crate::camera::Camera;
use crate::composite::{compose_pixel, gate_transmission, gating_map, DEFAULT_GATE_K};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{
    build_fragments, deferred_aggregate, prepare_view, volumetric_forward, FragmentList, GBuffer,
    OpacityModel, PreparedView, Ray, VolumetricResult,
};
use crate::scene::Scene;
use crate::shading::{env_eval_full, head_forward_batch, head_input, EnvEval, HeadBatch, HEAD_INPUT};

/// Linearization point for evaluating the gated objective with a frozen
/// stop-gradient: `C̃ = (1 − g) C_ref + g C_trans`. Used by gradient checks.
#[derive(Clone, Debug)]
pub struct FrozenGate {
    pub gate: Image,
    pub c_trans: Image,
}

#[derive(Clone, Debug)]
pub struct RenderOptions {
    pub opacity_model: OpacityModel,
    /// Gate sensitivity `k`; zero disables gating.
    pub gate_k: f64,
    /// When false, `τ ≡ 1` (no intrinsic scattered colour).
    pub scattering: bool,
    /// When false, `β ≡ 1`.
    pub attenuation: bool,
    pub frozen_gate: Option<FrozenGate>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            opacity_model: OpacityModel::Factorized,
            gate_k: DEFAULT_GATE_K,
            scattering: true,
            attenuation: true,
            frozen_gate: None,
        }
    }
}

/// Per-pixel images produced by a render.
#[derive(Clone, Debug)]
pub struct RenderOutputs {
    pub c_spec: Image,
    pub beta: Image,
    pub c_trans: Image,
    pub c_sub: Image,
    pub color: Image,
    pub gate: Image,
    pub surface_depth: Image,
    pub volumetric_depth: Image,
    pub volumetric_weight: Image,
    pub gbuffer: GBuffer,
}

impl RenderOutputs {
    /// `β · C_sub`, the transmitted-plus-scattered layer as displayed.
    pub fn modulated_sub(&self) -> Image {
        Image::from_fn(self.color.width(), self.color.height(), 3, |x, y, c| {
            self.beta.get(x, y, 0) * self.c_sub.get(x, y, c)
        })
    }

    /// Expected normal as an RGB visualization `(n + 1) / 2`.
    pub fn normal_image(&self) -> Image {
        let w = self.gbuffer.width;
        Image::from_fn(w, self.gbuffer.height, 3, |x, y, c| {
            0.5 * (self.gbuffer.normal[y * w + x][c] + 1.0)
        })
    }
}

/// Shading intermediates of the pixels that have a first surface.
#[derive(Clone, Debug)]
pub struct ShadingCache {
    pub pixels: Vec<usize>,
    pub batch: HeadBatch,
    pub env: Vec<EnvEval>,
    pub reflected: Vec<Vector3<f64>>,
    pub to_camera: Vec<Vector3<f64>>,
    pub n_dot_v: Vec<f64>,
}

/// Everything recorded during the forward pass for reverse-mode differentiation.
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    pub camera: Camera,
    pub options: RenderOptions,
    pub surfel_count: usize,
    pub view: PreparedView,
    pub fragments: FragmentList,
    pub volumetric: VolumetricResult,
    pub shading: ShadingCache,
    /// Head outputs before edits/ablations (`C_spec = 0, β = 1` where unshaded).
    pub spec_raw: Vec<[f64; 3]>,
    pub beta_raw: Vec<f64>,
    /// Transmissivity used in composition.
    pub tau_used: Vec<f64>,
    /// Gate applied to the `C_trans` sensitivity.
    pub gate_used: Image,
}

#[derive(Clone, Debug)]
pub struct Rendered {
    pub outputs: RenderOutputs,
    pub record: ForwardRecord,
}

/// Renders `scene` from `camera`.
pub fn render(scene: &Scene, camera: &Camera, options: &RenderOptions) -> Result<Rendered> {
    camera.validate()?;
    let view = prepare_view(scene, camera, options.opacity_model)?;
    let fragments = build_fragments(&view, camera);
    render_with_fragments(scene, camera, options, view, fragments)
}

/// Same as [`render`] but with caller-supplied fragments.
pub fn render_with_fragments(
    scene: &Scene,
    camera: &Camera,
    options: &RenderOptions,
    view: PreparedView,
    fragments: FragmentList,
) -> Result<Rendered> {
    let (w, h) = (camera.width, camera.height);
    let npix = w * h;
    let volumetric = volumetric_forward(&fragments, &view);
    let gbuffer = deferred_aggregate(&fragments, &view);

    // Deferred shading of pixels with a first surface.
    let mut pixels = Vec::new();
    let mut inputs: Vec<[f64; HEAD_INPUT]> = Vec::new();
    let mut env = Vec::new();
    let mut reflected = Vec::new();
    let mut to_camera = Vec::new();
    let mut n_dot_v = Vec::new();
    for pix in 0..npix {
        let normal = Vector3::from(gbuffer.normal[pix]);
        if !gbuffer.has_surface(pix) || Vector3::from(gbuffer.normal_sum[pix]).norm() == 0.0 {
            continue;
        }
        let ray = Ray::through_pixel(camera, pix % w, pix / w);
        let v = -ray.dir;
        let nv = normal.dot(&v);
        let r = normal * (2.0 * nv) - v;
        let e = env_eval_full(&scene.shading.env, &r, gbuffer.roughness[pix]);
        let x = head_input(e.rgb, &gbuffer.feature[pix], nv);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePixel { x: pix % w, y: pix / w });
        }
        pixels.push(pix);
        inputs.push(x);
        env.push(e);
        reflected.push(r);
        to_camera.push(v);
        n_dot_v.push(nv);
    }
    let x = DMatrix::from_fn(inputs.len(), HEAD_INPUT, |i, j| inputs[i][j]);
    let batch = head_forward_batch(&scene.shading, x);

    let mut spec_raw = vec![[0.0; 3]; npix];
    let mut beta_raw = vec![1.0; npix];
    for (row, &pix) in pixels.iter().enumerate() {
        spec_raw[pix] = [batch.output[(row, 0)], batch.output[(row, 1)], batch.output[(row, 2)]];
        beta_raw[pix] = batch.output[(row, 3)];
    }

    let mut c_spec = Image::new(w, h, 3);
    let mut beta = Image::new(w, h, 1);
    let mut tau_used = vec![1.0; npix];
    for pix in 0..npix {
        let rm = gbuffer.removed[pix];
        let b = if options.attenuation { beta_raw[pix] } else { 1.0 };
        beta.data_mut()[pix] = rm + (1.0 - rm) * b;
        let out = c_spec.pixel_mut(pix);
        for c in 0..3 {
            out[c] = (1.0 - rm) * spec_raw[pix][c];
        }
        if options.scattering {
            tau_used[pix] = gbuffer.tau[pix];
        }
    }

    let gate = gating_map(&c_spec, options.gate_k)?;
    let gate_used = match &options.frozen_gate {
        Some(f) => {
            f.gate.check_shape(&gate, "frozen gate")?;
            f.gate.clone()
        }
        None => gate.clone(),
    };

    let mut c_trans = Image::new(w, h, 3);
    let mut c_sub = Image::new(w, h, 3);
    let mut color = Image::new(w, h, 3);
    for pix in 0..npix {
        let raw = volumetric.color[pix];
        c_trans.pixel_mut(pix).copy_from_slice(&raw);
        let gated = match &options.frozen_gate {
            Some(f) => {
                let g = f.gate.data()[pix];
                let r = f.c_trans.pixel(pix);
                [
                    (1.0 - g) * r[0] + g * raw[0],
                    (1.0 - g) * r[1] + g * raw[1],
                    (1.0 - g) * r[2] + g * raw[2],
                ]
            }
            None => gate_transmission(raw, gate.data()[pix]),
        };
        let cs = c_spec.pixel(pix);
        let (sub, col) = compose_pixel(
            [cs[0], cs[1], cs[2]],
            beta.data()[pix],
            tau_used[pix],
            gbuffer.scatter[pix],
            gated,
        );
        c_sub.pixel_mut(pix).copy_from_slice(&sub);
        color.pixel_mut(pix).copy_from_slice(&col);
    }

    let surface_depth = Image::from_vec(w, h, 1, gbuffer.depth.clone())?;
    let volumetric_depth = Image::from_vec(w, h, 1, volumetric.depth.clone())?;
    let volumetric_weight = Image::from_vec(w, h, 1, volumetric.weight.clone())?;

    Ok(Rendered {
        outputs: RenderOutputs {
            c_spec,
            beta,
            c_trans,
            c_sub,
            color,
            gate,
            surface_depth,
            volumetric_depth,
            volumetric_weight,
            gbuffer,
        },
        record: ForwardRecord {
            camera: camera.clone(),
            options: options.clone(),
            surfel_count: scene.surfels.len(),
            view,
            fragments,
            volumetric,
            shading: ShadingCache {
                pixels,
                batch,
                env,
                reflected,
                to_camera,
                n_dot_v,
            },
            spec_raw,
            beta_raw,
            tau_used,
            gate_used,
        },
    })
}

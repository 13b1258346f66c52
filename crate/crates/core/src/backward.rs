//! Reverse-mode gradients of a render with respect to every surfel attribute
//! and the shading parameters.

use nalgebra::{DMatrix, Vector3};

use crate::composite::compose_backward;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{OpacityModel, Ray, SURFACE_EPS, WEIGHT_FLOOR};
use crate::render::Rendered;
use crate::scene::{frame_backward, GaussianSurfel, Scene, FEATURE_DIM};
use crate::shading::{env_backward, head_backward_batch, ShadingParams, HEAD_OUTPUT};
use crate::sh;

/// Upstream gradients on render outputs. Missing entries are zero.
#[derive(Clone, Debug)]
pub struct OutputGrads {
    /// `∂L/∂C`, three channels.
    pub color: Image,
    /// `∂L/∂A_α`, one channel.
    pub alpha: Option<Image>,
    /// `∂L/∂A_n` on the (renormalized) expected normal.
    pub normal: Option<Vec<[f64; 3]>>,
    /// `∂L/∂D` on the first-surface depth.
    pub surface_depth: Option<Image>,
}

impl OutputGrads {
    pub fn from_color(color: Image) -> Self {
        Self {
            color,
            alpha: None,
            normal: None,
            surface_depth: None,
        }
    }
}

/// Gradients for one or more views.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    /// Same layout as the surfels: each field holds `∂L/∂field`.
    pub surfels: Vec<GaussianSurfel>,
    pub shading: ShadingParams,
    /// Magnitude of the screen-space (NDC) positional gradient, per surfel.
    pub screen_grad: Vec<f64>,
    /// Whether the surfel received any fragment.
    pub visible: Vec<bool>,
}

impl GradientBundle {
    pub fn zeros(scene: &Scene) -> Self {
        Self {
            surfels: scene.surfels.iter().map(GaussianSurfel::zeros_like).collect(),
            shading: ShadingParams::zeros(),
            screen_grad: vec![0.0; scene.surfels.len()],
            visible: vec![false; scene.surfels.len()],
        }
    }

    /// Adds `other` into `self`; screen gradients are summed as well.
    pub fn accumulate(&mut self, other: &GradientBundle) -> Result<()> {
        if other.surfels.len() != self.surfels.len() {
            return Err(Error::DimensionMismatch(format!(
                "gradient bundles cover {} and {} surfels",
                self.surfels.len(),
                other.surfels.len()
            )));
        }
        for (a, b) in self.surfels.iter_mut().zip(&other.surfels) {
            a.add_scaled(b, 1.0);
        }
        for (a, b) in self.shading.slices_mut().into_iter().zip(other.shading.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for i in 0..self.screen_grad.len() {
            self.screen_grad[i] += other.screen_grad[i];
            self.visible[i] |= other.visible[i];
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.surfels.iter().all(GaussianSurfel::is_finite)
            && self.shading.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Per-view gradient on the activated quantities of one prepared surfel.
#[derive(Clone, Copy, Default)]
struct SlotGrad {
    touched: bool,
    sigma: f64,
    alpha_vol: f64,
    alpha_attr: f64,
    position: [f64; 3],
    tu: [f64; 3],
    tv: [f64; 3],
    n: [f64; 3],
    scale: [f64; 2],
    roughness: f64,
    tau: f64,
    scatter: [f64; 3],
    feature: [f64; FEATURE_DIM],
    color: [f64; 3],
    /// Position and colour sensitivities with the gate left open; they only
    /// feed the densification statistic.
    position_open: [f64; 3],
    color_open: [f64; 3],
}

#[inline]
fn add3(a: &mut [f64; 3], v: Vector3<f64>, s: f64) {
    a[0] += v.x * s;
    a[1] += v.y * s;
    a[2] += v.z * s;
}

/// Pushes upstream output gradients back through the whole pipeline.
pub fn backward(scene: &Scene, rendered: &Rendered, grads: &OutputGrads) -> Result<GradientBundle> {
    let rec = &rendered.record;
    let out = &rendered.outputs;
    let cam = &rec.camera;
    let (w, h) = (cam.width, cam.height);
    let npix = w * h;
    if rec.surfel_count != scene.surfels.len()
        || rec.view.surfels.iter().any(|s| s.index >= scene.surfels.len())
    {
        return Err(Error::Contract(
            "forward record does not belong to this scene".into(),
        ));
    }
    if rec.fragments.pixel_count() != npix
        || rec.volumetric.prefix.len() != rec.fragments.fragments.len()
        || out.gbuffer.prefix.len() != rec.fragments.fragments.len()
        || rec.spec_raw.len() != npix
    {
        return Err(Error::Contract("forward record is missing intermediates".into()));
    }
    if grads.color.width() != w || grads.color.height() != h || grads.color.channels() != 3 {
        return Err(Error::DimensionMismatch("colour gradient shape".into()));
    }
    let check1 = |img: &Option<Image>, what: &str| -> Result<()> {
        match img {
            Some(i) if i.width() != w || i.height() != h || i.channels() != 1 => {
                Err(Error::DimensionMismatch(format!("{what} gradient shape")))
            }
            _ => Ok(()),
        }
    };
    check1(&grads.alpha, "alpha")?;
    check1(&grads.surface_depth, "depth")?;
    if grads.normal.as_ref().is_some_and(|n| n.len() != npix) {
        return Err(Error::DimensionMismatch("normal gradient length".into()));
    }

    let gb = &out.gbuffer;
    let opts = &rec.options;
    let mut bundle = GradientBundle::zeros(scene);

    // Composition.
    let mut d_ctrans = vec![[0.0; 3]; npix];
    let mut d_ctrans_open = vec![[0.0; 3]; npix];
    let mut d_tau = vec![0.0; npix];
    let mut d_scatter = vec![[0.0; 3]; npix];
    let mut d_rm = vec![0.0; npix];
    let mut d_head_out = vec![[0.0; HEAD_OUTPUT]; npix];
    for pix in 0..npix {
        let dc = grads.color.pixel(pix);
        let dc = [dc[0], dc[1], dc[2]];
        let sub = out.c_sub.pixel(pix);
        let gated = match &opts.frozen_gate {
            Some(f) => {
                let g = f.gate.data()[pix];
                let r = f.c_trans.pixel(pix);
                let raw = out.c_trans.pixel(pix);
                std::array::from_fn(|c| (1.0 - g) * r[c] + g * raw[c])
            }
            None => {
                let raw = out.c_trans.pixel(pix);
                [raw[0], raw[1], raw[2]]
            }
        };
        let g = compose_backward(
            out.beta.data()[pix],
            rec.tau_used[pix],
            gb.scatter[pix],
            gated,
            [sub[0], sub[1], sub[2]],
            dc,
        );
        let gate = rec.gate_used.data()[pix];
        d_ctrans[pix] = g.c_trans.map(|v| v * gate);
        d_ctrans_open[pix] = g.c_trans;
        if opts.scattering {
            d_tau[pix] = g.tau;
        }
        d_scatter[pix] = g.scatter;
        let rm = gb.removed[pix];
        let b = if opts.attenuation { rec.beta_raw[pix] } else { 1.0 };
        let spec = rec.spec_raw[pix];
        d_rm[pix] = g.beta * (1.0 - b) - (0..3).map(|c| spec[c] * g.c_spec[c]).sum::<f64>();
        let mut d = [0.0; HEAD_OUTPUT];
        for c in 0..3 {
            d[c] = (1.0 - rm) * g.c_spec[c];
        }
        if opts.attenuation {
            d[3] = (1.0 - rm) * g.beta;
        }
        d_head_out[pix] = d;
    }

    // Shading head and environment.
    let cache = &rec.shading;
    let n_shaded = cache.pixels.len();
    let d_out = DMatrix::from_fn(n_shaded, HEAD_OUTPUT, |i, j| d_head_out[cache.pixels[i]][j]);
    let dx = head_backward_batch(&scene.shading, &cache.batch, &d_out, &mut bundle.shading);

    let mut d_normal = vec![[0.0; 3]; npix];
    let mut d_rough = vec![0.0; npix];
    let mut d_feat = vec![[0.0; FEATURE_DIM]; npix];
    for (row, &pix) in cache.pixels.iter().enumerate() {
        let d_env_rgb = [dx[(row, 0)], dx[(row, 1)], dx[(row, 2)]];
        for k in 0..FEATURE_DIM {
            d_feat[pix][k] = dx[(row, 3 + k)];
        }
        let d_nv = dx[(row, 3 + FEATURE_DIM)];
        let r = cache.reflected[row];
        let (d_r, d_rho) = env_backward(
            &scene.shading.env,
            &r,
            gb.roughness[pix],
            &cache.env[row],
            d_env_rgb,
            &mut bundle.shading.env,
        );
        d_rough[pix] = d_rho;
        let n = Vector3::from(gb.normal[pix]);
        let v = cache.to_camera[row];
        let nv = cache.n_dot_v[row];
        let dn = v * (2.0 * n.dot(&d_r)) + d_r * (2.0 * nv) + v * d_nv;
        d_normal[pix] = dn.into();
    }
    if let Some(gn) = &grads.normal {
        for pix in 0..npix {
            for c in 0..3 {
                d_normal[pix][c] += gn[pix][c];
            }
        }
    }

    // Per-fragment passes into per-slot accumulators.
    let view = &rec.view;
    let frags = &rec.fragments;
    let mut slots = vec![SlotGrad::default(); view.surfels.len()];
    let mut d_g = Vec::new();
    let mut d_g_open = Vec::new();
    let mut d_depth = Vec::new();
    for pix in 0..npix {
        let list = frags.pixel(pix);
        if list.is_empty() {
            continue;
        }
        let base = frags.offsets[pix];
        d_g.clear();
        d_g.resize(list.len(), 0.0);
        d_depth.clear();
        d_depth.resize(list.len(), 0.0);

        // First-surface aggregation.
        let prob = gb.prob[pix];
        let nsum = Vector3::from(gb.normal_sum[pix]);
        let len = nsum.norm();
        let dn = Vector3::from(d_normal[pix]);
        let d_m = if prob > SURFACE_EPS && len > 0.0 {
            let n = nsum / len;
            (dn - n * n.dot(&dn)) / len
        } else {
            dn
        };
        let d_alpha = grads.alpha.as_ref().map_or(0.0, |a| a.data()[pix]);
        let d_dsurf = grads.surface_depth.as_ref().map_or(0.0, |a| a.data()[pix]);
        let d_num = d_dsurf / prob.max(WEIGHT_FLOOR);
        let d_prob = if prob > WEIGHT_FLOOR { -d_dsurf * gb.depth[pix] / prob } else { 0.0 };
        let d_rho = d_rough[pix];
        let d_z = d_feat[pix];
        let d_sc = d_scatter[pix];
        let d_t = d_tau[pix];
        let d_r = d_rm[pix];
        let used = gb.used[pix] as usize;
        let mut suffix = 0.0;
        for k in (0..used).rev() {
            let f = &list[k];
            let s = &view.surfels[f.slot as usize];
            let trans = gb.prefix[base + k];
            let occ = s.sigma * f.g;
            let p = occ * trans;
            let n_or = s.frame.n * f.flip;
            let mut dp = d_m.dot(&n_or)
                + d_rho * s.act.roughness
                + d_t * s.act.tau
                + d_alpha * s.alpha_attr
                + d_num * f.depth
                + d_prob;
            for j in 0..FEATURE_DIM {
                dp += d_z[j] * s.feature[j];
            }
            for c in 0..3 {
                dp += d_sc[c] * s.act.scatter[c];
            }
            if s.removed_reflection {
                dp += d_r;
            }
            let sg = &mut slots[f.slot as usize];
            sg.touched = true;
            add3(&mut sg.n, d_m, p * f.flip);
            sg.roughness += p * d_rho;
            sg.tau += p * d_t;
            sg.alpha_attr += p * d_alpha;
            for j in 0..FEATURE_DIM {
                sg.feature[j] += p * d_z[j];
            }
            for c in 0..3 {
                sg.scatter[c] += p * d_sc[c];
            }
            d_depth[k] += p * d_num;
            let d_occ = dp * trans - suffix / (1.0 - occ);
            suffix += dp * p;
            sg.sigma += d_occ * f.g;
            d_g[k] += d_occ * s.sigma;
        }

        // Volumetric compositing.
        let dct = d_ctrans[pix];
        let dct_open = d_ctrans_open[pix];
        let gated = dct != dct_open;
        d_g_open.clear();
        d_g_open.extend_from_slice(&d_g);
        let used = rec.volumetric.used[pix] as usize;
        let mut suffix = 0.0;
        let mut suffix_open = 0.0;
        for k in (0..used).rev() {
            let f = &list[k];
            let s = &view.surfels[f.slot as usize];
            let trans = rec.volumetric.prefix[base + k];
            let a = s.sigma * s.alpha_vol * f.g;
            let wgt = a * trans;
            let dw: f64 = (0..3).map(|c| dct[c] * s.color[c]).sum();
            let sg = &mut slots[f.slot as usize];
            sg.touched = true;
            for c in 0..3 {
                sg.color[c] += wgt * dct[c];
                sg.color_open[c] += wgt * dct_open[c];
            }
            let da = dw * trans - suffix / (1.0 - a);
            suffix += dw * wgt;
            sg.sigma += da * s.alpha_vol * f.g;
            sg.alpha_vol += da * s.sigma * f.g;
            d_g[k] += da * s.sigma * s.alpha_vol;
            if gated {
                let dw: f64 = (0..3).map(|c| dct_open[c] * s.color[c]).sum();
                let da = dw * trans - suffix_open / (1.0 - a);
                suffix_open += dw * wgt;
                d_g_open[k] += da * s.sigma * s.alpha_vol;
            }
        }
        if !gated {
            d_g_open.copy_from_slice(&d_g);
        }

        // Ray–surfel intersection.
        let ray = Ray::through_pixel(cam, pix % w, pix / w);
        for (k, f) in list.iter().enumerate() {
            if d_g[k] == 0.0 && d_g_open[k] == 0.0 && d_depth[k] == 0.0 {
                continue;
            }
            let s = &view.surfels[f.slot as usize];
            let [su, sv] = s.act.scale;
            let q = s.position - ray.origin;
            let e = ray.dir * f.t - q;
            let denom = ray.dir.dot(&s.frame.n);
            let pull = |dg: f64| {
                let du = -dg * f.u * f.g;
                let dv = -dg * f.v * f.g;
                let (du_w, dv_w) = (du / su, dv / sv);
                let de = s.frame.tu * du_w + s.frame.tv * dv_w;
                let dt = d_depth[k] * ray.depth_scale + de.dot(&ray.dir);
                (du, dv, du_w, dv_w, dt, -de + s.frame.n * (dt / denom))
            };
            let (du, dv, du_w, dv_w, dt, dq) = pull(d_g[k]);
            let dq_open = if d_g_open[k] == d_g[k] { dq } else { pull(d_g_open[k]).5 };
            let sg = &mut slots[f.slot as usize];
            sg.scale[0] -= du * f.u / su;
            sg.scale[1] -= dv * f.v / sv;
            add3(&mut sg.tu, e, du_w);
            add3(&mut sg.tv, e, dv_w);
            add3(&mut sg.n, e, -dt / denom);
            add3(&mut sg.position, dq, 1.0);
            add3(&mut sg.position_open, dq_open, 1.0);
        }
    }

    // Activated quantities to raw parameters.
    let right = cam.rotation.row(0).transpose();
    let down = cam.rotation.row(1).transpose();
    for (slot, sg) in slots.iter().enumerate() {
        if !sg.touched {
            continue;
        }
        let s = &view.surfels[slot];
        let src = &scene.surfels[s.index];
        let g = &mut bundle.surfels[s.index];
        bundle.visible[s.index] = true;

        let mut d_pos = Vector3::from(sg.position);
        let mut d_pos_open = Vector3::from(sg.position_open);
        // View-dependent colour.
        let dc: [f64; 3] = std::array::from_fn(|c| if s.color_clamped[c] { 0.0 } else { sg.color[c] });
        let dc_open: [f64; 3] = std::array::from_fn(|c| if s.color_clamped[c] { 0.0 } else { sg.color_open[c] });
        if dc != [0.0; 3] || dc_open != [0.0; 3] {
            let degree = src.sh_degree();
            let n = sh::coeff_count(degree);
            let mut basis = [0.0; sh::coeff_count(sh::MAX_DEGREE)];
            let mut bgrad = [[0.0; 3]; sh::coeff_count(sh::MAX_DEGREE)];
            sh::eval_basis_grad(degree, s.view_dir.into(), &mut basis[..n], &mut bgrad[..n]);
            let mut d_dir = Vector3::zeros();
            let mut d_dir_open = Vector3::zeros();
            for k in 0..n {
                let mut proj = 0.0;
                let mut proj_open = 0.0;
                for c in 0..3 {
                    g.sh_color[k][c] += dc[c] * basis[k];
                    proj += dc[c] * src.sh_color[k][c];
                    proj_open += dc_open[c] * src.sh_color[k][c];
                }
                d_dir += Vector3::from(bgrad[k]) * proj;
                d_dir_open += Vector3::from(bgrad[k]) * proj_open;
            }
            if s.view_dist > 0.0 {
                let dir = s.view_dir;
                d_pos += (d_dir - dir * dir.dot(&d_dir)) / s.view_dist;
                d_pos_open += (d_dir_open - dir * dir.dot(&d_dir_open)) / s.view_dist;
            }
        }
        for k in 0..3 {
            g.position[k] += d_pos[k];
        }
        let dq = frame_backward(
            src.rotation,
            &Vector3::from(sg.tu),
            &Vector3::from(sg.tv),
            &Vector3::from(sg.n),
        );
        for k in 0..4 {
            g.rotation[k] += dq[k];
        }
        for k in 0..2 {
            g.log_scale[k] += sg.scale[k] * s.act.scale[k];
        }
        match view.model {
            OpacityModel::Factorized => {
                g.occupancy_raw += sg.sigma * s.act.d_sigma;
                g.opacity_raw += (sg.alpha_vol + sg.alpha_attr) * s.act.d_alpha;
            }
            OpacityModel::Tied => {
                g.opacity_raw += (sg.sigma + sg.alpha_attr) * s.act.d_alpha;
            }
        }
        g.roughness_raw += sg.roughness * s.act.d_roughness;
        g.transmissivity_raw += sg.tau * s.act.d_tau;
        for c in 0..3 {
            g.scatter_color_raw[c] += sg.scatter[c] * s.act.d_scatter[c];
        }
        for j in 0..FEATURE_DIM {
            g.material_feature[j] += sg.feature[j];
        }

        // Screen-space gradient in normalized device units.
        let z = s.center_depth.max(1e-6);
        let gx = d_pos_open.dot(&right) * z / cam.fx * 0.5 * w as f64;
        let gy = d_pos_open.dot(&down) * z / cam.fy * 0.5 * h as f64;
        bundle.screen_grad[s.index] += (gx * gx + gy * gy).sqrt();
    }
    if !bundle.is_finite() {
        return Err(Error::NonFiniteLoss("gradient"));
    }
    Ok(bundle)
}

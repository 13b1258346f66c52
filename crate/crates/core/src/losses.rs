//! Photometric, normal-consistency and transparent-mask objectives, each with
//! its gradient on the render outputs.

use nalgebra::Vector3;

use crate::backward::OutputGrads;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::GBuffer;
use crate::render::RenderOutputs;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Pixels whose first-hit probability exceeds this enter the normal loss.
pub const NORMAL_LOSS_MIN_PROB: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// D-SSIM share of the image loss.
    pub lambda_dssim: f64,
    /// Reserved; no perceptual term is evaluated.
    pub lambda_perc: f64,
    pub lambda_normal: f64,
    pub lambda_mask: f64,
    pub gate_k: f64,
    pub bce_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            lambda_perc: 0.0,
            lambda_normal: 0.05,
            lambda_mask: 0.01,
            gate_k: 4.0,
            bce_eps: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_dssim", self.lambda_dssim),
            ("lambda_perc", self.lambda_perc),
            ("lambda_normal", self.lambda_normal),
            ("lambda_mask", self.lambda_mask),
            ("gate_k", self.gate_k),
            ("bce_eps", self.bce_eps),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.lambda_dssim > 1.0 {
            return Err(Error::InvalidParameter("lambda_dssim must be <= 1".into()));
        }
        if !(self.bce_eps < 0.5) {
            return Err(Error::InvalidParameter("bce_eps must be < 0.5".into()));
        }
        Ok(())
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean absolute difference and its gradient with respect to `a`.
pub fn l1_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    check_same(a, b)?;
    let n = a.data().len() as f64;
    let mut grad = Image::new(a.width(), a.height(), a.channels());
    let mut sum = 0.0;
    for ((g, x), y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = x - y;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable replicate-padded blur of a single-channel plane.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                s += kv * plane[y * w + clamp(x as isize + j as isize - r, w)];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                s += kv * tmp[clamp(y as isize + j as isize - r, h) * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Adjoint of [`blur`].
fn blur_adjoint(grad: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            for (j, kv) in k.iter().enumerate() {
                tmp[clamp(y as isize + j as isize - r, h) * w + x] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x];
            for (j, kv) in k.iter().enumerate() {
                out[y * w + clamp(x as isize + j as isize - r, w)] += kv * g;
            }
        }
    }
    out
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>, Vec<f64>)> {
    check_same(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let k = gaussian_window();
    let npix = w * h;
    let total = (npix * ch) as f64;
    let mut sum = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, ch));
    let mut map = vec![0.0; npix];
    for c in 0..ch {
        let x: Vec<f64> = (0..npix).map(|i| a.data()[i * ch + c]).collect();
        let y: Vec<f64> = (0..npix).map(|i| b.data()[i * ch + c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let exx = blur(&xx, w, h, &k);
        let eyy = blur(&yy, w, h, &k);
        let exy = blur(&xy, w, h, &k);
        let mut d_mx = vec![0.0; npix];
        let mut d_exx = vec![0.0; npix];
        let mut d_exy = vec![0.0; npix];
        for i in 0..npix {
            let sxx = exx[i] - mx[i] * mx[i];
            let syy = eyy[i] - my[i] * my[i];
            let sxy = exy[i] - mx[i] * my[i];
            let a1 = 2.0 * mx[i] * my[i] + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            sum += s;
            map[i] += s / ch as f64;
            if want_grad {
                let ds = 1.0 / total;
                let da1 = ds * a2 / (b1 * b2);
                let da2 = ds * a1 / (b1 * b2);
                let db1 = -ds * s / b1;
                let db2 = -ds * s / b2;
                d_mx[i] = da1 * 2.0 * my[i] - da2 * 2.0 * my[i] + db1 * 2.0 * mx[i] - db2 * 2.0 * mx[i];
                d_exx[i] = db2;
                d_exy[i] = 2.0 * da2;
            }
        }
        if let Some(g) = grad.as_mut() {
            let gm = blur_adjoint(&d_mx, w, h, &k);
            let gxx = blur_adjoint(&d_exx, w, h, &k);
            let gxy = blur_adjoint(&d_exy, w, h, &k);
            for i in 0..npix {
                g.data_mut()[i * ch + c] = gm[i] + 2.0 * x[i] * gxx[i] + y[i] * gxy[i];
            }
        }
    }
    Ok((sum / total, grad, map))
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// Per-pixel SSIM averaged over channels.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Image> {
    let map = ssim_impl(a, b, false)?.2;
    Image::from_vec(a.width(), a.height(), 1, map)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (s, g, _) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

/// `(1 − λ) L1 + λ (1 − SSIM) / 2`.
pub fn image_loss(render: &Image, target: &Image, lambda: f64) -> Result<f64> {
    Ok(image_loss_with_grad(render, target, lambda)?.0)
}

pub fn image_loss_with_grad(render: &Image, target: &Image, lambda: f64) -> Result<(f64, Image)> {
    let (loss, _, _, g) = image_terms(render, target, lambda)?;
    Ok((loss, g))
}

/// `(loss, L1, SSIM, ∂loss/∂render)`; SSIM is skipped (reported as NaN) when `λ = 0`.
fn image_terms(render: &Image, target: &Image, lambda: f64) -> Result<(f64, f64, f64, Image)> {
    let (l1, mut g) = l1_with_grad(render, target)?;
    for v in g.data_mut() {
        *v *= 1.0 - lambda;
    }
    if lambda == 0.0 {
        return Ok((l1, l1, f64::NAN, g));
    }
    let (s, gs) = ssim_with_grad(render, target)?;
    for (v, d) in g.data_mut().iter_mut().zip(gs.data()) {
        *v -= 0.5 * lambda * d;
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s) / 2.0, l1, s, g))
}

/// Binary cross-entropy pulling `A_α` to the inverted mask `1 − M`.
pub fn mask_loss(alpha: &Image, mask: &Image, eps: f64) -> Result<f64> {
    Ok(mask_loss_with_grad(alpha, mask, eps)?.0)
}

pub fn mask_loss_with_grad(alpha: &Image, mask: &Image, eps: f64) -> Result<(f64, Image)> {
    if alpha.width() != mask.width() || alpha.height() != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, opacity map is {}x{}",
            mask.width(),
            mask.height(),
            alpha.width(),
            alpha.height()
        )));
    }
    let n = alpha.pixel_count() as f64;
    let mut grad = Image::new(alpha.width(), alpha.height(), 1);
    let mut sum = 0.0;
    for i in 0..alpha.pixel_count() {
        let a_raw = alpha.pixel(i)[0];
        let m = mask.pixel(i)[0];
        let a = a_raw.clamp(eps, 1.0 - eps);
        let target = 1.0 - m;
        sum += -(target * a.ln() + m * (1.0 - a).ln());
        if a_raw > eps && a_raw < 1.0 - eps {
            grad.data_mut()[i] = (-target / a + m / (1.0 - a)) / n;
        }
    }
    Ok((sum / n, grad))
}

/// Gradient of the normal-consistency loss on the G-buffer.
#[derive(Clone, Debug)]
pub struct NormalLossGrad {
    pub normal: Vec<[f64; 3]>,
    pub depth: Image,
    /// Pixels contributing to the mean.
    pub count: usize,
}

fn valid_normal_pixel(gb: &GBuffer, x: usize, y: usize) -> bool {
    let (w, h) = (gb.width, gb.height);
    if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
        return false;
    }
    [(x, y), (x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
        .iter()
        .all(|&(i, j)| gb.prob[j * w + i] > NORMAL_LOSS_MIN_PROB)
}

/// World-space normal from central differences of the back-projected surface depth.
pub fn depth_normal(gb: &GBuffer, camera: &Camera, x: usize, y: usize) -> Option<Vector3<f64>> {
    if !valid_normal_pixel(gb, x, y) {
        return None;
    }
    let p = |i: usize, j: usize| camera.unproject_camera(i as f64, j as f64, gb.depth[j * gb.width + i]);
    let dpx = p(x + 1, y) - p(x - 1, y);
    let dpy = p(x, y + 1) - p(x, y - 1);
    let c = dpy.cross(&dpx);
    let len = c.norm();
    if len == 0.0 {
        return None;
    }
    let mut n = c / len;
    if n.dot(&p(x, y)) > 0.0 {
        n = -n;
    }
    Some(camera.rotation.transpose() * n)
}

/// Mean of `1 − A_n · N` over interior pixels whose own and 4-neighbour
/// first-hit probabilities exceed 0.5.
pub fn normal_consistency(gb: &GBuffer, camera: &Camera) -> f64 {
    normal_consistency_with_grad(gb, camera).0
}

pub fn normal_consistency_with_grad(gb: &GBuffer, camera: &Camera) -> (f64, NormalLossGrad) {
    let (w, h) = (gb.width, gb.height);
    let mut grad = NormalLossGrad {
        normal: vec![[0.0; 3]; w * h],
        depth: Image::new(w, h, 1),
        count: 0,
    };
    let mut terms = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if valid_normal_pixel(gb, x, y) {
                terms.push((x, y));
            }
        }
    }
    if terms.is_empty() {
        return (0.0, grad);
    }
    let inv = 1.0 / terms.len() as f64;
    grad.count = terms.len();
    let rt = camera.rotation.transpose();
    let ray = |i: usize, j: usize| camera.unproject_camera(i as f64, j as f64, 1.0);
    let mut sum = 0.0;
    for &(x, y) in &terms {
        let d = |i: usize, j: usize| gb.depth[j * w + i];
        let p = |i: usize, j: usize| ray(i, j) * d(i, j);
        let dpx = p(x + 1, y) - p(x - 1, y);
        let dpy = p(x, y + 1) - p(x, y - 1);
        let c = dpy.cross(&dpx);
        let len = c.norm();
        if len == 0.0 {
            sum += 1.0;
            continue;
        }
        let mut nc = c / len;
        let sign = if nc.dot(&p(x, y)) > 0.0 { -1.0 } else { 1.0 };
        nc *= sign;
        let nw = rt * nc;
        let an = Vector3::from(gb.normal[y * w + x]);
        sum += 1.0 - an.dot(&nw);
        // Gradients.
        let g = &mut grad.normal[y * w + x];
        for k in 0..3 {
            g[k] -= inv * nw[k];
        }
        let d_nw = -an * inv;
        let d_nc = camera.rotation * d_nw * sign;
        let d_c = (d_nc - nc * sign * (nc * sign).dot(&d_nc)) / len;
        let d_dpy = dpx.cross(&d_c);
        let d_dpx = d_c.cross(&dpy);
        let dd = grad.depth.data_mut();
        dd[y * w + x + 1] += d_dpx.dot(&ray(x + 1, y));
        dd[y * w + x - 1] -= d_dpx.dot(&ray(x - 1, y));
        dd[(y + 1) * w + x] += d_dpy.dot(&ray(x, y + 1));
        dd[(y - 1) * w + x] -= d_dpy.dot(&ray(x, y - 1));
    }
    (sum * inv, grad)
}

/// Weighted objective `L_img + λ_n L_n + λ_mask L_mask`.
pub fn total_loss(image: f64, normal: f64, mask: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("image", image), ("normal", normal), ("mask", mask)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    Ok(image + weights.lambda_normal * normal + weights.lambda_mask * mask)
}

/// Loss terms of one view.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub image: f64,
    pub l1: f64,
    pub ssim: f64,
    pub normal: f64,
    pub mask: f64,
    pub total: f64,
}

/// Evaluates the full objective of one rendered view and the upstream
/// gradients on its outputs.
pub fn view_objective(
    outputs: &RenderOutputs,
    camera: &Camera,
    target: &Image,
    mask: Option<&Image>,
    weights: &LossWeights,
) -> Result<(LossComponents, OutputGrads)> {
    let (img, l1, ssim_v, color_grad) = image_terms(&outputs.color, target, weights.lambda_dssim)?;
    let mut grads = OutputGrads::from_color(color_grad);
    let mut normal = 0.0;
    if weights.lambda_normal > 0.0 {
        let (ln, g) = normal_consistency_with_grad(&outputs.gbuffer, camera);
        normal = ln;
        let s = weights.lambda_normal;
        grads.normal = Some(g.normal.iter().map(|v| v.map(|x| x * s)).collect());
        grads.surface_depth = Some(g.depth.map(|x| x * s));
    }
    let mut mask_v = 0.0;
    if let Some(m) = mask {
        let alpha = Image::from_vec(camera.width, camera.height, 1, outputs.gbuffer.alpha.clone())?;
        let (lm, g) = mask_loss_with_grad(&alpha, m, weights.bce_eps)?;
        mask_v = lm;
        if weights.lambda_mask > 0.0 {
            let s = weights.lambda_mask;
            grads.alpha = Some(g.map(|x| x * s));
        }
    }
    let total = total_loss(img, normal, mask_v, weights)?;
    Ok((
        LossComponents {
            image: img,
            l1,
            ssim: ssim_v,
            normal,
            mask: mask_v,
            total,
        },
        grads,
    ))
}

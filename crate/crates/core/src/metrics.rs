//! Image-quality metrics, masked variants and the floater-energy diagnostic.

use std::fmt::Write as _;
use std::time::Instant;

use crate::camera::Camera;
use crate::dataset::View;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::ssim_map;
use crate::raster::{build_fragments, prepare_view, volumetric_forward, OpacityModel};
use crate::render::{render, RenderOptions, RenderOutputs};
use crate::scene::Scene;

pub const PSNR_CAP: f64 = 99.0;
/// Exclusion margin around both slab boundaries, as a fraction of the slab width.
pub const FLOATER_MARGIN: f64 = 0.01;

fn check(a: &Image, b: &Image, mask: Option<&Image>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch("metric inputs differ in shape".into()));
    }
    if let Some(m) = mask {
        if m.width() != a.width() || m.height() != a.height() {
            return Err(Error::DimensionMismatch("metric mask size".into()));
        }
    }
    Ok(())
}

fn selected(mask: Option<&Image>, pix: usize) -> bool {
    mask.is_none_or(|m| m.pixel(pix)[0] > 0.5)
}

/// Peak signal-to-noise ratio in dB after clamping both images to `[0, 1]`,
/// optionally over the pixels where `mask > 0.5`.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Image>) -> Result<f64> {
    check(a, b, mask)?;
    let ch = a.channels();
    let (mut se, mut n) = (0.0, 0usize);
    for pix in 0..a.pixel_count() {
        if !selected(mask, pix) {
            continue;
        }
        for c in 0..ch {
            let d = a.pixel(pix)[c].clamp(0.0, 1.0) - b.pixel(pix)[c].clamp(0.0, 1.0);
            se += d * d;
        }
        n += ch;
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM on clamped images, optionally averaged over masked pixels only.
pub fn ssim(a: &Image, b: &Image, mask: Option<&Image>) -> Result<f64> {
    check(a, b, mask)?;
    let map = ssim_map(&a.map(|v| v.clamp(0.0, 1.0)), &b.map(|v| v.clamp(0.0, 1.0)))?;
    let (mut sum, mut n) = (0.0, 0usize);
    for pix in 0..map.pixel_count() {
        if selected(mask, pix) {
            sum += map.pixel(pix)[0];
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(sum / n as f64)
}

/// Mean volumetric weight, over masked pixels, carried by fragments strictly
/// inside the slab between the glass and the background (shrunk by 1% of its
/// width at each end). Pixels without finite oracle depths are skipped.
pub fn floater_energy(
    scene: &Scene,
    camera: &Camera,
    glass_depth: &Image,
    background_depth: &Image,
    mask: &Image,
    model: OpacityModel,
) -> Result<f64> {
    let view = prepare_view(scene, camera, model)?;
    let frags = build_fragments(&view, camera);
    let vol = volumetric_forward(&frags, &view);
    let (mut sum, mut n) = (0.0, 0usize);
    for pix in 0..camera.pixel_count() {
        if mask.pixel(pix)[0] <= 0.5 {
            continue;
        }
        let (g, b) = (glass_depth.pixel(pix)[0], background_depth.pixel(pix)[0]);
        if !(g.is_finite() && b.is_finite() && b > g) {
            continue;
        }
        let delta = FLOATER_MARGIN * (b - g);
        let base = frags.offsets[pix];
        let mut e = 0.0;
        for (k, f) in frags.pixel(pix).iter().take(vol.used[pix] as usize).enumerate() {
            if f.depth > g + delta && f.depth < b - delta {
                let s = &view.surfels[f.slot as usize];
                e += s.sigma * s.alpha_vol * f.g * vol.prefix[base + k];
            }
        }
        sum += e;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Transparent-region metrics; `NaN` when the view has no masked pixel.
    pub psnr_masked: f64,
    pub ssim_masked: f64,
    pub floater_energy: f64,
    pub render_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
}

fn nanmean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for x in v.filter(|x| x.is_finite()) {
        s += x;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn mean(&self) -> ViewMetrics {
        let v = &self.views;
        ViewMetrics {
            view: usize::MAX,
            psnr: nanmean(v.iter().map(|m| m.psnr)),
            ssim: nanmean(v.iter().map(|m| m.ssim)),
            psnr_masked: nanmean(v.iter().map(|m| m.psnr_masked)),
            ssim_masked: nanmean(v.iter().map(|m| m.ssim_masked)),
            floater_energy: nanmean(v.iter().map(|m| m.floater_energy)),
            render_ms: nanmean(v.iter().map(|m| m.render_ms)),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,psnr,ssim,psnr_transparent,ssim_transparent,floater_energy,render_ms\n");
        let row = |s: &mut String, name: &str, m: &ViewMetrics| {
            let _ = writeln!(
                s,
                "{name},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}",
                m.psnr, m.ssim, m.psnr_masked, m.ssim_masked, m.floater_energy, m.render_ms
            );
        };
        for m in &self.views {
            row(&mut s, &m.view.to_string(), m);
        }
        row(&mut s, "mean", &self.mean());
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} | {:>8} {:>7} | {:>8} {:>7} | {:>8} | {:>9}",
            "view", "PSNR", "SSIM", "PSNR-T", "SSIM-T", "floater", "ms"
        );
        let _ = writeln!(s, "{}", "-".repeat(76));
        let row = |s: &mut String, name: &str, m: &ViewMetrics| {
            let _ = writeln!(
                s,
                "{name:>6} | {:>8.3} {:>7.4} | {:>8.3} {:>7.4} | {:>8.5} | {:>9.2}",
                m.psnr, m.ssim, m.psnr_masked, m.ssim_masked, m.floater_energy, m.render_ms
            );
        };
        for m in &self.views {
            row(&mut s, &m.view.to_string(), m);
        }
        let _ = writeln!(s, "{}", "-".repeat(76));
        row(&mut s, "mean", &self.mean());
        s
    }
}

/// Renders each view and scores it. Masked metrics are `NaN` for views
/// without a mask (or with an empty one); floater energy is `NaN` without
/// oracle depths.
pub fn evaluate<'a>(
    scene: &Scene,
    views: impl IntoIterator<Item = &'a View>,
    options: &RenderOptions,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for v in views {
        let start = Instant::now();
        let out = render(scene, &v.camera, options)?.outputs;
        let render_ms = start.elapsed().as_secs_f64() * 1e3;
        let masked = |f: fn(&Image, &Image, Option<&Image>) -> Result<f64>| match &v.mask {
            Some(m) => match f(&out.color, &v.image, Some(m)) {
                Err(Error::EmptyRegion) => Ok(f64::NAN),
                r => r,
            },
            None => Ok(f64::NAN),
        };
        let floater = match (&v.mask, &v.glass_depth, &v.background_depth) {
            (Some(m), Some(g), Some(b)) => floater_energy(scene, &v.camera, g, b, m, options.opacity_model)?,
            _ => f64::NAN,
        };
        report.views.push(ViewMetrics {
            view: v.index,
            psnr: psnr(&out.color, &v.image, None)?,
            ssim: ssim(&out.color, &v.image, None)?,
            psnr_masked: masked(psnr)?,
            ssim_masked: masked(ssim)?,
            floater_energy: floater,
            render_ms,
        });
    }
    Ok(report)
}

/// Share of masked pixels whose deferred surface depth lies within
/// `tolerance × (background − glass)` of the glass depth, and share whose
/// volumetric depth lies that close to the background depth. Pixels without
/// a finite slab are skipped.
pub fn depth_agreement(
    outputs: &RenderOutputs,
    glass_depth: &Image,
    background_depth: &Image,
    mask: &Image,
    tolerance: f64,
) -> Result<(f64, f64)> {
    check(&outputs.surface_depth, glass_depth, Some(mask))?;
    check(&outputs.volumetric_depth, background_depth, None)?;
    let (mut surf, mut vol, mut n) = (0usize, 0usize, 0usize);
    for pix in 0..mask.pixel_count() {
        let (g, b) = (glass_depth.pixel(pix)[0], background_depth.pixel(pix)[0]);
        if mask.pixel(pix)[0] <= 0.5 || !(g.is_finite() && b.is_finite() && b > g) {
            continue;
        }
        let tol = tolerance * (b - g);
        n += 1;
        surf += usize::from((outputs.surface_depth.pixel(pix)[0] - g).abs() <= tol);
        vol += usize::from((outputs.volumetric_depth.pixel(pix)[0] - b).abs() <= tol);
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok((surf as f64 / n as f64, vol as f64 / n as f64))
}

/// Mean aggregated optical opacity `A_α` inside and outside the mask
/// (`NaN` for an empty side).
pub fn mask_opacity(outputs: &RenderOutputs, mask: &Image) -> Result<(f64, f64)> {
    let a = &outputs.gbuffer.alpha;
    if a.len() != mask.pixel_count() {
        return Err(Error::DimensionMismatch("mask vs G-buffer".into()));
    }
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (pix, v) in a.iter().enumerate() {
        if mask.pixel(pix)[0] > 0.5 {
            si += v;
            ni += 1;
        } else {
            so += v;
            no += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok((mean(si, ni), mean(so, no)))
}

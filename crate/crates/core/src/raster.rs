//! Surfel projection, ray–surfel kernel evaluation and the two blending
//! passes: volumetric compositing with the effective opacity `σα`, and
//! first-surface aggregation with the occupancy `σ`.
//!
//! Surfels are sorted once per view by camera-space center depth (ties by
//! index). Per pixel, fragments are visited in that order and carry their own
//! ray intersection depth.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::Result;
use crate::scene::{activate, surfel_frame, Activated, Frame, Scene, FEATURE_DIM};
use crate::sh;

/// Kernel support in standard deviations along each tangent axis.
pub const KERNEL_CUTOFF_SIGMA: f64 = 3.0;
/// Fragments with a kernel value below this are dropped.
pub const MIN_KERNEL_VALUE: f64 = 1.0 / 255.0;
/// Blending stops once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Rays closer than this to parallel with the surfel plane miss it.
pub const PARALLEL_EPS: f64 = 1e-8;
/// Pixels whose total first-hit probability is below this count as background.
pub const SURFACE_EPS: f64 = 1e-4;
/// Floor on accumulated weight when normalizing depths.
pub const WEIGHT_FLOOR: f64 = 1e-8;

const TILE: usize = 8;

/// How occupancy and optical opacity enter the two passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OpacityModel {
    /// Independent `σ` (first-surface pass) and `α` (volumetric pass uses `σα`).
    #[default]
    Factorized,
    /// Single shared opacity: `σ ≡ α`, and the volumetric pass uses it alone.
    Tied,
}

/// A camera ray with the factor converting ray distance to camera depth.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
    /// `dir · forward`; depth = `t * depth_scale`.
    pub depth_scale: f64,
}

impl Ray {
    pub fn through_pixel(camera: &Camera, px: usize, py: usize) -> Self {
        let dir = camera.ray_dir(px, py);
        Ray {
            origin: camera.center(),
            dir,
            depth_scale: dir.dot(&camera.forward()),
        }
    }
}

/// Ray–surfel intersection in tangent-plane units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelHit {
    /// Kernel value `exp(-(u² + v²) / 2)`.
    pub g: f64,
    /// Camera-space depth of the hit point.
    pub depth: f64,
    /// Ray parameter of the hit.
    pub t: f64,
    /// Hit coordinates in units of the surfel scales.
    pub u: f64,
    pub v: f64,
}

/// Intersects a ray with a surfel plane and evaluates its 2D Gaussian.
///
/// Returns `None` for near-parallel rays, hits behind the camera, and hits
/// outside the `±3σ` square support.
pub fn intersect_kernel(
    position: &Vector3<f64>,
    frame: &Frame,
    scale: [f64; 2],
    ray: &Ray,
) -> Option<KernelHit> {
    let denom = ray.dir.dot(&frame.n);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let q = position - ray.origin;
    let t = q.dot(&frame.n) / denom;
    let depth = t * ray.depth_scale;
    if !(t > 0.0) || !(depth > 0.0) {
        return None;
    }
    let e = ray.dir * t - q;
    let u = e.dot(&frame.tu) / scale[0];
    let v = e.dot(&frame.tv) / scale[1];
    if u.abs() > KERNEL_CUTOFF_SIGMA || v.abs() > KERNEL_CUTOFF_SIGMA {
        return None;
    }
    Some(KernelHit {
        g: (-0.5 * (u * u + v * v)).exp(),
        depth,
        t,
        u,
        v,
    })
}

/// Transmission-branch radiance of one surfel seen along `dir`:
/// `max(Σ sh_k Y_k(dir) + 0.5, 0)` per channel.
pub fn sh_color(coeffs: &[[f64; 3]], dir: [f64; 3]) -> ([f64; 3], [bool; 3]) {
    let degree = sh::degree_for_count(coeffs.len()).expect("sh coefficient count");
    let mut basis = [0.0; sh::coeff_count(sh::MAX_DEGREE)];
    sh::eval_basis(degree, dir, &mut basis);
    let mut c = [0.5; 3];
    for (k, coef) in coeffs.iter().enumerate() {
        for ch in 0..3 {
            c[ch] += coef[ch] * basis[k];
        }
    }
    let mut clamped = [false; 3];
    for ch in 0..3 {
        if c[ch] < 0.0 {
            c[ch] = 0.0;
            clamped[ch] = true;
        }
    }
    (c, clamped)
}

/// Per-view, activated and projected state of one surfel.
#[derive(Clone, Debug)]
pub struct ViewSurfel {
    /// Index into `Scene::surfels`.
    pub index: usize,
    pub position: Vector3<f64>,
    pub frame: Frame,
    pub act: Activated,
    /// Occupancy used by first-surface aggregation.
    pub sigma: f64,
    /// Factor such that the volumetric opacity is `sigma * alpha_vol * G`.
    pub alpha_vol: f64,
    /// Optical opacity aggregated into the G-buffer.
    pub alpha_attr: f64,
    pub feature: [f64; FEATURE_DIM],
    pub color: [f64; 3],
    pub color_clamped: [bool; 3],
    /// Unit direction from the camera center to the surfel center.
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
    pub center_depth: f64,
    pub removed_reflection: bool,
    /// Inclusive pixel bounds `(x0, y0, x1, y1)`.
    pub bbox: [usize; 4],
}

/// All surfels that can touch the image, sorted front to back by center depth.
#[derive(Clone, Debug)]
pub struct PreparedView {
    pub surfels: Vec<ViewSurfel>,
    pub model: OpacityModel,
}

/// Activates, colours and culls every surfel for one camera, then sorts.
pub fn prepare_view(scene: &Scene, camera: &Camera, model: OpacityModel) -> Result<PreparedView> {
    let center = camera.center();
    let mut out = Vec::with_capacity(scene.surfels.len());
    for (index, s) in scene.surfels.iter().enumerate() {
        let act = activate(s, index)?;
        let frame = surfel_frame(s.rotation)?;
        let position = Vector3::from(s.position);
        let Some(bbox) = screen_bounds(&position, &frame, act.scale, camera) else {
            continue;
        };
        let to = position - center;
        let view_dist = to.norm();
        let view_dir = if view_dist > 0.0 { to / view_dist } else { camera.forward() };
        let (color, color_clamped) = sh_color(&s.sh_color, view_dir.into());
        let (sigma, alpha_vol, alpha_attr) = match model {
            OpacityModel::Factorized => (act.sigma, act.alpha, act.alpha),
            OpacityModel::Tied => (act.alpha, 1.0, act.alpha),
        };
        out.push(ViewSurfel {
            index,
            position,
            frame,
            act,
            sigma,
            alpha_vol,
            alpha_attr,
            feature: s.material_feature,
            color,
            color_clamped,
            view_dir,
            view_dist,
            center_depth: camera.world_to_camera(&position).z,
            removed_reflection: scene.reflection_removed.get(index).copied().unwrap_or(false),
            bbox,
        });
    }
    out.sort_by(|a, b| {
        a.center_depth
            .total_cmp(&b.center_depth)
            .then(a.index.cmp(&b.index))
    });
    Ok(PreparedView { surfels: out, model })
}

/// Conservative pixel bounds of the `±3σ` square, or `None` if it cannot be seen.
fn screen_bounds(
    position: &Vector3<f64>,
    frame: &Frame,
    scale: [f64; 2],
    camera: &Camera,
) -> Option<[usize; 4]> {
    let a = frame.tu * (KERNEL_CUTOFF_SIGMA * scale[0]);
    let b = frame.tv * (KERNEL_CUTOFF_SIGMA * scale[1]);
    let corners = [position + a + b, position + a - b, position - a + b, position - a - b];
    let cam: Vec<Vector3<f64>> = corners.iter().map(|p| camera.world_to_camera(p)).collect();
    if cam.iter().all(|c| c.z <= 0.0) {
        return None;
    }
    let (w, h) = (camera.width as f64, camera.height as f64);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, -f64::INFINITY, -f64::INFINITY);
    if cam.iter().any(|c| c.z <= 1e-9) {
        (x0, y0, x1, y1) = (0.0, 0.0, w, h);
    } else {
        for c in &cam {
            let u = camera.fx * c.x / c.z + camera.cx;
            let v = camera.fy * c.y / c.z + camera.cy;
            x0 = x0.min(u);
            x1 = x1.max(u);
            y0 = y0.min(v);
            y1 = y1.max(v);
        }
    }
    // Pixel centers sit at integer + 0.5; one pixel of margin.
    let lo_x = (x0 - 1.5).floor().max(0.0);
    let lo_y = (y0 - 1.5).floor().max(0.0);
    let hi_x = (x1 + 0.5).ceil().min(w - 1.0);
    let hi_y = (y1 + 0.5).ceil().min(h - 1.0);
    if !(lo_x <= hi_x && lo_y <= hi_y) {
        return None;
    }
    Some([lo_x as usize, lo_y as usize, hi_x as usize, hi_y as usize])
}

/// One surfel's contribution candidate at one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    /// Index into `PreparedView::surfels`.
    pub slot: u32,
    pub g: f64,
    pub depth: f64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
    /// `±1`: orientation making the normal face the camera.
    pub flip: f64,
}

/// Per-pixel, front-to-back fragment sequences.
///
/// Lists end once the volumetric transmittance drops below
/// [`TRANSMITTANCE_EPS`]; the first-surface pass always terminates no later,
/// because `σG ≥ σαG`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FragmentList {
    pub width: usize,
    pub height: usize,
    pub offsets: Vec<usize>,
    pub fragments: Vec<Fragment>,
}

impl FragmentList {
    #[inline]
    pub fn pixel(&self, index: usize) -> &[Fragment] {
        &self.fragments[self.offsets[index]..self.offsets[index + 1]]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

fn push_fragment(view: &PreparedView, slot: usize, ray: &Ray, frags: &mut Vec<Fragment>, trans: &mut f64) -> bool {
    let s = &view.surfels[slot];
    let Some(hit) = intersect_kernel(&s.position, &s.frame, s.act.scale, ray) else {
        return false;
    };
    if hit.g < MIN_KERNEL_VALUE {
        return false;
    }
    let flip = if ray.dir.dot(&s.frame.n) > 0.0 { -1.0 } else { 1.0 };
    frags.push(Fragment {
        slot: slot as u32,
        g: hit.g,
        depth: hit.depth,
        t: hit.t,
        u: hit.u,
        v: hit.v,
        flip,
    });
    *trans *= 1.0 - s.sigma * s.alpha_vol * hit.g;
    *trans < TRANSMITTANCE_EPS
}

/// Builds per-pixel fragment lists using screen tiles, parallel over rows.
pub fn build_fragments(view: &PreparedView, camera: &Camera) -> FragmentList {
    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, s) in view.surfels.iter().enumerate() {
        let [x0, y0, x1, y1] = s.bbox;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }
    let rows: Vec<(Vec<usize>, Vec<Fragment>)> = (0..h)
        .into_par_iter()
        .map(|py| {
            let mut counts = Vec::with_capacity(w);
            let mut frags = Vec::new();
            for px in 0..w {
                let ray = Ray::through_pixel(camera, px, py);
                let bin = &bins[(py / TILE) * tiles_x + px / TILE];
                let start = frags.len();
                let mut trans = 1.0;
                for &slot in bin {
                    let [x0, y0, x1, y1] = view.surfels[slot as usize].bbox;
                    if px < x0 || px > x1 || py < y0 || py > y1 {
                        continue;
                    }
                    if push_fragment(view, slot as usize, &ray, &mut frags, &mut trans) {
                        break;
                    }
                }
                counts.push(frags.len() - start);
            }
            (counts, frags)
        })
        .collect();
    assemble(w, h, rows)
}

/// Straightforward variant without tiling or bounds culling.
pub fn build_fragments_naive(view: &PreparedView, camera: &Camera) -> FragmentList {
    let (w, h) = (camera.width, camera.height);
    let mut counts = Vec::with_capacity(w * h);
    let mut frags = Vec::new();
    for py in 0..h {
        for px in 0..w {
            let ray = Ray::through_pixel(camera, px, py);
            let start = frags.len();
            let mut trans = 1.0;
            for slot in 0..view.surfels.len() {
                if push_fragment(view, slot, &ray, &mut frags, &mut trans) {
                    break;
                }
            }
            counts.push(frags.len() - start);
        }
    }
    assemble(w, h, vec![(counts, frags)])
}

fn assemble(width: usize, height: usize, rows: Vec<(Vec<usize>, Vec<Fragment>)>) -> FragmentList {
    let total: usize = rows.iter().map(|r| r.1.len()).sum();
    let mut offsets = Vec::with_capacity(width * height + 1);
    let mut fragments = Vec::with_capacity(total);
    offsets.push(0);
    for (counts, frags) in rows {
        for c in counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        fragments.extend(frags);
    }
    FragmentList {
        width,
        height,
        offsets,
        fragments,
    }
}

/// Output of the volumetric pass.
#[derive(Clone, Debug)]
pub struct VolumetricResult {
    /// Transmitted radiance `C_trans`, RGB per pixel.
    pub color: Vec<[f64; 3]>,
    /// `Σ w d / max(W, 1e-8)`.
    pub depth: Vec<f64>,
    /// Accumulated weight `W = Σ w`.
    pub weight: Vec<f64>,
    /// Transmittance before each fragment (aligned with the fragment list).
    pub prefix: Vec<f64>,
    /// Fragments consumed per pixel.
    pub used: Vec<u32>,
}

/// Front-to-back compositing with `w_i = σ_i α_i G_i Π_{j<i}(1 − σ_j α_j G_j)`.
pub fn volumetric_forward(frags: &FragmentList, view: &PreparedView) -> VolumetricResult {
    let n = frags.pixel_count();
    let mut out = VolumetricResult {
        color: vec![[0.0; 3]; n],
        depth: vec![0.0; n],
        weight: vec![0.0; n],
        prefix: vec![0.0; frags.fragments.len()],
        used: vec![0; n],
    };
    for pix in 0..n {
        let base = frags.offsets[pix];
        let mut trans = 1.0;
        let mut c = [0.0; 3];
        let (mut d, mut wsum) = (0.0, 0.0);
        let mut used = 0;
        for (k, f) in frags.pixel(pix).iter().enumerate() {
            let s = &view.surfels[f.slot as usize];
            let a = s.sigma * s.alpha_vol * f.g;
            let w = a * trans;
            out.prefix[base + k] = trans;
            for ch in 0..3 {
                c[ch] += w * s.color[ch];
            }
            d += w * f.depth;
            wsum += w;
            trans *= 1.0 - a;
            used += 1;
            if trans < TRANSMITTANCE_EPS {
                break;
            }
        }
        out.color[pix] = c;
        out.weight[pix] = wsum;
        out.depth[pix] = d / wsum.max(WEIGHT_FLOOR);
        out.used[pix] = used;
    }
    out
}

/// Per-pixel expected first-surface attributes.
#[derive(Clone, Debug)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    /// Expected normal, renormalized where `P > SURFACE_EPS`.
    pub normal: Vec<[f64; 3]>,
    /// `Σ p n` before renormalization.
    pub normal_sum: Vec<[f64; 3]>,
    pub roughness: Vec<f64>,
    pub feature: Vec<[f64; FEATURE_DIM]>,
    pub scatter: Vec<[f64; 3]>,
    pub tau: Vec<f64>,
    /// Aggregated optical opacity of the first surface.
    pub alpha: Vec<f64>,
    /// `Σ p d / max(P, 1e-8)`.
    pub depth: Vec<f64>,
    /// Total first-hit probability `P = Σ p`.
    pub prob: Vec<f64>,
    /// Aggregated reflection-removal flag (edits).
    pub removed: Vec<f64>,
    /// `Π_{j<i}(1 − σ_j G_j)` before each fragment.
    pub prefix: Vec<f64>,
    pub used: Vec<u32>,
}

impl GBuffer {
    #[inline]
    pub fn has_surface(&self, pix: usize) -> bool {
        self.prob[pix] > SURFACE_EPS
    }
}

/// First-surface aggregation with `p_i = σ_i G_i Π_{j<i}(1 − σ_j G_j)`.
pub fn deferred_aggregate(frags: &FragmentList, view: &PreparedView) -> GBuffer {
    let n = frags.pixel_count();
    let mut gb = GBuffer {
        width: frags.width,
        height: frags.height,
        normal: vec![[0.0; 3]; n],
        normal_sum: vec![[0.0; 3]; n],
        roughness: vec![0.0; n],
        feature: vec![[0.0; FEATURE_DIM]; n],
        scatter: vec![[0.0; 3]; n],
        tau: vec![0.0; n],
        alpha: vec![0.0; n],
        depth: vec![0.0; n],
        prob: vec![0.0; n],
        removed: vec![0.0; n],
        prefix: vec![0.0; frags.fragments.len()],
        used: vec![0; n],
    };
    for pix in 0..n {
        let base = frags.offsets[pix];
        let mut trans = 1.0;
        let mut nsum = Vector3::zeros();
        let mut feat = [0.0; FEATURE_DIM];
        let mut sc = [0.0; 3];
        let (mut rough, mut tau, mut alpha, mut dnum, mut prob, mut removed) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut used = 0;
        for (k, f) in frags.pixel(pix).iter().enumerate() {
            let s = &view.surfels[f.slot as usize];
            let occ = s.sigma * f.g;
            let p = occ * trans;
            gb.prefix[base + k] = trans;
            nsum += s.frame.n * (p * f.flip);
            rough += p * s.act.roughness;
            for (a, z) in feat.iter_mut().zip(&s.feature) {
                *a += p * z;
            }
            for ch in 0..3 {
                sc[ch] += p * s.act.scatter[ch];
            }
            tau += p * s.act.tau;
            alpha += p * s.alpha_attr;
            dnum += p * f.depth;
            prob += p;
            if s.removed_reflection {
                removed += p;
            }
            trans *= 1.0 - occ;
            used += 1;
            if trans < TRANSMITTANCE_EPS {
                break;
            }
        }
        gb.normal_sum[pix] = nsum.into();
        let len = nsum.norm();
        gb.normal[pix] = if prob > SURFACE_EPS && len > 0.0 {
            (nsum / len).into()
        } else {
            nsum.into()
        };
        gb.roughness[pix] = rough;
        gb.feature[pix] = feat;
        gb.scatter[pix] = sc;
        gb.tau[pix] = tau;
        gb.alpha[pix] = alpha;
        gb.depth[pix] = dnum / prob.max(WEIGHT_FLOOR);
        gb.prob[pix] = prob;
        gb.removed[pix] = removed;
        gb.used[pix] = used;
    }
    gb
}

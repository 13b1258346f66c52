//! Naive per-pixel renderer used as an oracle for the production rasterizer.
//!
//! Every pixel loops over every surfel. Ray–surfel hits are found by solving
//! the 3×3 system `o + t d = μ + a s_u t_u + b s_v t_v` directly, and frames
//! come from nalgebra's quaternion rotation rather than the closed form used
//! in production.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::camera::Camera;
use crate::error::Result;
use crate::raster::{OpacityModel, KERNEL_CUTOFF_SIGMA, MIN_KERNEL_VALUE, PARALLEL_EPS, SURFACE_EPS, TRANSMITTANCE_EPS, WEIGHT_FLOOR};
use crate::scene::{activate, Scene, FEATURE_DIM};
use crate::sh;

#[derive(Clone, Debug)]
pub struct ReferencePixel {
    pub c_trans: [f64; 3],
    pub weight: f64,
    pub volumetric_depth: f64,
    pub prob: f64,
    pub normal: [f64; 3],
    pub roughness: f64,
    pub feature: [f64; FEATURE_DIM],
    pub scatter: [f64; 3],
    pub tau: f64,
    pub alpha: f64,
    pub surface_depth: f64,
    /// `(surfel index, volumetric weight, first-hit probability)` per fragment.
    pub weights: Vec<(usize, f64, f64)>,
}

struct Prepared {
    index: usize,
    mu: Vector3<f64>,
    rot: Matrix3<f64>,
    scale: [f64; 2],
    sigma: f64,
    alpha_vol: f64,
    alpha_attr: f64,
    color: [f64; 3],
    roughness: f64,
    tau: f64,
    scatter: [f64; 3],
    feature: [f64; FEATURE_DIM],
    key: f64,
}

/// Renders every pixel independently.
pub fn render_reference(scene: &Scene, camera: &Camera, model: OpacityModel) -> Result<Vec<ReferencePixel>> {
    let center = camera.center();
    let mut list = Vec::new();
    for (index, s) in scene.surfels.iter().enumerate() {
        let act = activate(s, index)?;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(s.rotation[0], s.rotation[1], s.rotation[2], s.rotation[3]));
        let rot = q.to_rotation_matrix().into_inner();
        let mu = Vector3::from(s.position);
        let dir = (mu - center).normalize();
        let mut basis = vec![0.0; s.sh_color.len()];
        sh::eval_basis(s.sh_degree(), [dir.x, dir.y, dir.z], &mut basis);
        let mut color = [0.5; 3];
        for (b, coef) in basis.iter().zip(&s.sh_color) {
            for c in 0..3 {
                color[c] += b * coef[c];
            }
        }
        let (sigma, alpha_vol, alpha_attr) = match model {
            OpacityModel::Factorized => (act.sigma, act.alpha, act.alpha),
            OpacityModel::Tied => (act.alpha, 1.0, act.alpha),
        };
        list.push(Prepared {
            index,
            mu,
            rot,
            scale: act.scale,
            sigma,
            alpha_vol,
            alpha_attr,
            color: color.map(|v| v.max(0.0)),
            roughness: act.roughness,
            tau: act.tau,
            scatter: act.scatter,
            feature: s.material_feature,
            key: (camera.rotation * mu + camera.translation).z,
        });
    }
    list.sort_by(|a, b| a.key.partial_cmp(&b.key).unwrap().then(a.index.cmp(&b.index)));

    let fwd = camera.forward();
    let mut out = Vec::with_capacity(camera.pixel_count());
    for py in 0..camera.height {
        for px in 0..camera.width {
            let d = camera.ray_dir(px, py);
            let mut pix = ReferencePixel {
                c_trans: [0.0; 3],
                weight: 0.0,
                volumetric_depth: 0.0,
                prob: 0.0,
                normal: [0.0; 3],
                roughness: 0.0,
                feature: [0.0; FEATURE_DIM],
                scatter: [0.0; 3],
                tau: 0.0,
                alpha: 0.0,
                surface_depth: 0.0,
                weights: Vec::new(),
            };
            let (mut tv, mut td) = (1.0, 1.0);
            let (mut vd, mut sd) = (0.0, 0.0);
            let mut nsum = Vector3::zeros();
            for s in &list {
                let tu_axis = s.rot.column(0).into_owned();
                let tv_axis = s.rot.column(1).into_owned();
                let n = s.rot.column(2).into_owned();
                if d.dot(&n).abs() < PARALLEL_EPS {
                    continue;
                }
                // [d, −s_u t_u, −s_v t_v] (t, a, b)ᵀ = μ − o
                let m = Matrix3::from_columns(&[d, -tu_axis * s.scale[0], -tv_axis * s.scale[1]]);
                let Some(sol) = m.lu().solve(&(s.mu - center)) else {
                    continue;
                };
                let (t, a, b) = (sol.x, sol.y, sol.z);
                let depth = t * d.dot(&fwd);
                if t <= 0.0 || depth <= 0.0 || a.abs() > KERNEL_CUTOFF_SIGMA || b.abs() > KERNEL_CUTOFF_SIGMA {
                    continue;
                }
                let g = (-(a * a + b * b) / 2.0).exp();
                if g < MIN_KERNEL_VALUE {
                    continue;
                }
                let wv = s.sigma * s.alpha_vol * g * tv;
                let p = if td >= TRANSMITTANCE_EPS { s.sigma * g * td } else { 0.0 };
                for c in 0..3 {
                    pix.c_trans[c] += wv * s.color[c];
                    pix.scatter[c] += p * s.scatter[c];
                }
                pix.weight += wv;
                vd += wv * depth;
                let facing = if d.dot(&n) > 0.0 { -n } else { n };
                nsum += facing * p;
                pix.roughness += p * s.roughness;
                pix.tau += p * s.tau;
                pix.alpha += p * s.alpha_attr;
                for k in 0..FEATURE_DIM {
                    pix.feature[k] += p * s.feature[k];
                }
                sd += p * depth;
                pix.prob += p;
                pix.weights.push((s.index, wv, p));
                tv *= 1.0 - s.sigma * s.alpha_vol * g;
                td *= 1.0 - s.sigma * g;
                if tv < TRANSMITTANCE_EPS {
                    break;
                }
            }
            pix.volumetric_depth = vd / pix.weight.max(WEIGHT_FLOOR);
            pix.surface_depth = sd / pix.prob.max(WEIGHT_FLOOR);
            let len = nsum.norm();
            pix.normal = if pix.prob > SURFACE_EPS && len > 0.0 { (nsum / len).into() } else { nsum.into() };
            out.push(pix);
        }
    }
    Ok(out)
}

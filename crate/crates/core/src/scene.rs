//! Surfel primitive, parameter activations and the scene container.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::edit::EditFrame;
use crate::error::{Error, Result};
use crate::sh;
use crate::shading::ShadingParams;

pub const FEATURE_DIM: usize = 8;
pub const DEFAULT_SH_DEGREE: usize = 2;
/// Activated `[0, 1]` attributes are clipped to `[EPS, 1 - EPS]`.
pub const ACTIVATION_EPS: f64 = 1e-6;

/// One 2D Gaussian surfel in raw (pre-activation) parameterization.
///
/// The same type doubles as a gradient or optimizer-moment container, since
/// those share the parameter shapes exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSurfel {
    pub position: [f64; 3],
    /// Quaternion `(w, x, y, z)`; normalized on use.
    pub rotation: [f64; 4],
    pub log_scale: [f64; 2],
    pub occupancy_raw: f64,
    pub opacity_raw: f64,
    /// `(degree + 1)^2` RGB coefficients of the transmission-branch radiance.
    pub sh_color: Vec<[f64; 3]>,
    pub roughness_raw: f64,
    pub material_feature: [f64; FEATURE_DIM],
    pub scatter_color_raw: [f64; 3],
    pub transmissivity_raw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Occupancy,
    Opacity,
    ShColor,
    Roughness,
    Material,
    ScatterColor,
    Transmissivity,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 10] = [
        ParamGroup::Position,
        ParamGroup::Rotation,
        ParamGroup::Scale,
        ParamGroup::Occupancy,
        ParamGroup::Opacity,
        ParamGroup::ShColor,
        ParamGroup::Roughness,
        ParamGroup::Material,
        ParamGroup::ScatterColor,
        ParamGroup::Transmissivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Scale => "scale",
            ParamGroup::Occupancy => "occupancy",
            ParamGroup::Opacity => "opacity",
            ParamGroup::ShColor => "sh_color",
            ParamGroup::Roughness => "roughness",
            ParamGroup::Material => "material_feature",
            ParamGroup::ScatterColor => "scatter_color",
            ParamGroup::Transmissivity => "transmissivity",
        }
    }
}

impl GaussianSurfel {
    /// Surfel at `position` with default raw attributes: every logistic
    /// attribute at its midpoint and a small random material feature.
    pub fn new<R: Rng + ?Sized>(
        position: [f64; 3],
        rotation: [f64; 4],
        scale: [f64; 2],
        sh_degree: usize,
        rng: &mut R,
    ) -> Self {
        let feature = Normal::new(0.0, 0.01).unwrap();
        let mut material_feature = [0.0; FEATURE_DIM];
        for z in &mut material_feature {
            *z = feature.sample(rng);
        }
        Self {
            position,
            rotation,
            log_scale: [scale[0].ln(), scale[1].ln()],
            occupancy_raw: 0.0,
            opacity_raw: 0.0,
            sh_color: vec![[0.0; 3]; sh::coeff_count(sh_degree)],
            roughness_raw: 0.0,
            material_feature,
            scatter_color_raw: [0.0; 3],
            transmissivity_raw: 0.0,
        }
    }

    /// All-zero container with the same shape (for gradients and moments).
    pub fn zeros_like(&self) -> Self {
        Self {
            position: [0.0; 3],
            rotation: [0.0; 4],
            log_scale: [0.0; 2],
            occupancy_raw: 0.0,
            opacity_raw: 0.0,
            sh_color: vec![[0.0; 3]; self.sh_color.len()],
            roughness_raw: 0.0,
            material_feature: [0.0; FEATURE_DIM],
            scatter_color_raw: [0.0; 3],
            transmissivity_raw: 0.0,
        }
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Position => &self.position,
            ParamGroup::Rotation => &self.rotation,
            ParamGroup::Scale => &self.log_scale,
            ParamGroup::Occupancy => std::slice::from_ref(&self.occupancy_raw),
            ParamGroup::Opacity => std::slice::from_ref(&self.opacity_raw),
            ParamGroup::ShColor => self.sh_color.as_flattened(),
            ParamGroup::Roughness => std::slice::from_ref(&self.roughness_raw),
            ParamGroup::Material => &self.material_feature,
            ParamGroup::ScatterColor => &self.scatter_color_raw,
            ParamGroup::Transmissivity => std::slice::from_ref(&self.transmissivity_raw),
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::Position => &mut self.position,
            ParamGroup::Rotation => &mut self.rotation,
            ParamGroup::Scale => &mut self.log_scale,
            ParamGroup::Occupancy => std::slice::from_mut(&mut self.occupancy_raw),
            ParamGroup::Opacity => std::slice::from_mut(&mut self.opacity_raw),
            ParamGroup::ShColor => self.sh_color.as_flattened_mut(),
            ParamGroup::Roughness => std::slice::from_mut(&mut self.roughness_raw),
            ParamGroup::Material => &mut self.material_feature,
            ParamGroup::ScatterColor => &mut self.scatter_color_raw,
            ParamGroup::Transmissivity => std::slice::from_mut(&mut self.transmissivity_raw),
        }
    }

    pub fn param_count(&self) -> usize {
        ParamGroup::ALL.iter().map(|&g| self.group(g).len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        ParamGroup::ALL
            .iter()
            .all(|&g| self.group(g).iter().all(|v| v.is_finite()))
    }

    /// Adds `other` scaled by `s` into `self`, group by group.
    pub fn add_scaled(&mut self, other: &GaussianSurfel, s: f64) {
        for g in ParamGroup::ALL {
            for (a, b) in self.group_mut(g).iter_mut().zip(other.group(g)) {
                *a += s * b;
            }
        }
    }

    pub fn sh_degree(&self) -> usize {
        sh::degree_for_count(self.sh_color.len()).unwrap_or(0)
    }
}

/// Logistic squashing clipped to `[EPS, 1 - EPS]`; returns value and slope
/// (zero where the clip is active).
#[inline]
pub fn sigmoid_clamped(x: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-x).exp());
    if s < ACTIVATION_EPS {
        (ACTIVATION_EPS, 0.0)
    } else if s > 1.0 - ACTIVATION_EPS {
        (1.0 - ACTIVATION_EPS, 0.0)
    } else {
        (s, s * (1.0 - s))
    }
}

/// Inverse of the logistic map, with the target clipped into the valid range.
#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(ACTIVATION_EPS, 1.0 - ACTIVATION_EPS);
    (p / (1.0 - p)).ln()
}

/// Activated attributes of one surfel together with the slope of each
/// activation (for the backward pass).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activated {
    pub sigma: f64,
    pub alpha: f64,
    pub roughness: f64,
    pub tau: f64,
    pub scatter: [f64; 3],
    pub scale: [f64; 2],
    pub d_sigma: f64,
    pub d_alpha: f64,
    pub d_roughness: f64,
    pub d_tau: f64,
    pub d_scatter: [f64; 3],
}

/// Logistic map for occupancy, opacity, roughness, transmissivity and
/// scatter colour; exponential map for scales.
pub fn activate(surfel: &GaussianSurfel, index: usize) -> Result<Activated> {
    for g in ParamGroup::ALL {
        if surfel.group(g).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSurfel {
                index,
                field: g.name(),
            });
        }
    }
    let (sigma, d_sigma) = sigmoid_clamped(surfel.occupancy_raw);
    let (alpha, d_alpha) = sigmoid_clamped(surfel.opacity_raw);
    let (roughness, d_roughness) = sigmoid_clamped(surfel.roughness_raw);
    let (tau, d_tau) = sigmoid_clamped(surfel.transmissivity_raw);
    let mut scatter = [0.0; 3];
    let mut d_scatter = [0.0; 3];
    for c in 0..3 {
        (scatter[c], d_scatter[c]) = sigmoid_clamped(surfel.scatter_color_raw[c]);
    }
    Ok(Activated {
        sigma,
        alpha,
        roughness,
        tau,
        scatter,
        scale: [surfel.log_scale[0].exp(), surfel.log_scale[1].exp()],
        d_sigma,
        d_alpha,
        d_roughness,
        d_tau,
        d_scatter,
    })
}

/// Orthonormal tangent frame `(t_u, t_v, n)` of a surfel in world space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub tu: Vector3<f64>,
    pub tv: Vector3<f64>,
    pub n: Vector3<f64>,
}

const MIN_QUAT_NORM: f64 = 1e-12;

/// Columns of the rotation matrix of the normalized quaternion.
pub fn surfel_frame(rotation: [f64; 4]) -> Result<Frame> {
    let norm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > MIN_QUAT_NORM) || !norm.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "quaternion {rotation:?} cannot be normalized"
        )));
    }
    let [w, x, y, z] = rotation.map(|v| v / norm);
    Ok(Frame {
        tu: Vector3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y + w * z),
            2.0 * (x * z - w * y),
        ),
        tv: Vector3::new(
            2.0 * (x * y - w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z + w * x),
        ),
        n: Vector3::new(
            2.0 * (x * z + w * y),
            2.0 * (y * z - w * x),
            1.0 - 2.0 * (x * x + y * y),
        ),
    })
}

/// Pulls gradients on the frame columns back to the raw quaternion.
pub fn frame_backward(
    rotation: [f64; 4],
    d_tu: &Vector3<f64>,
    d_tv: &Vector3<f64>,
    d_n: &Vector3<f64>,
) -> [f64; 4] {
    let norm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = rotation.map(|v| v / norm);
    let [w, x, y, z] = q;
    // G[row][col] = dL/dR[row][col]; columns of R are (tu, tv, n).
    let g = [
        [d_tu.x, d_tv.x, d_n.x],
        [d_tu.y, d_tv.y, d_n.y],
        [d_tu.z, d_tv.z, d_n.z],
    ];
    let contract = |m: [[f64; 3]; 3]| -> f64 {
        let mut s = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                s += g[r][c] * m[r][c];
            }
        }
        2.0 * s
    };
    let dq = [
        contract([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]]),
        contract([[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]]),
        contract([[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]]),
        contract([[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]]),
    ];
    // Through the normalization q = r / |r|.
    let dot: f64 = (0..4).map(|i| dq[i] * q[i]).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (dq[i] - q[i] * dot) / norm;
    }
    out
}

/// Surfels plus shading parameters; the unit of rendering, training and
/// checkpointing.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub surfels: Vec<GaussianSurfel>,
    pub shading: ShadingParams,
    pub iteration: u64,
    pub sh_degree: usize,
    /// Per-surfel composition-time flag: specular removed, attenuation forced to 1.
    pub reflection_removed: Vec<bool>,
    /// Undo records of applied edits, newest last.
    pub edit_journal: Vec<EditFrame>,
}

impl Scene {
    pub fn new(surfels: Vec<GaussianSurfel>, shading: ShadingParams, sh_degree: usize) -> Self {
        let n = surfels.len();
        Self {
            surfels,
            shading,
            iteration: 0,
            sh_degree,
            reflection_removed: vec![false; n],
            edit_journal: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "sh degree {} exceeds {}",
                self.sh_degree,
                sh::MAX_DEGREE
            )));
        }
        if self.reflection_removed.len() != self.surfels.len() {
            return Err(Error::Contract(
                "edit flags out of sync with surfels".into(),
            ));
        }
        let k = sh::coeff_count(self.sh_degree);
        for (i, s) in self.surfels.iter().enumerate() {
            if s.sh_color.len() != k {
                return Err(Error::InvalidParameter(format!(
                    "surfel {i} has {} sh coefficients, expected {k}",
                    s.sh_color.len()
                )));
            }
            activate(s, i)?;
            surfel_frame(s.rotation)?;
        }
        self.shading.validate()
    }

    /// Appends a surfel with cleared edit flags.
    pub fn push(&mut self, surfel: GaussianSurfel) {
        self.surfels.push(surfel);
        self.reflection_removed.push(false);
    }

    /// Keeps surfels whose entry in `keep` is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.surfels.len());
        let mut it = keep.iter();
        self.surfels.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.reflection_removed.retain(|_| *it.next().unwrap());
    }

    /// Axis-aligned bounds of surfel centers.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut it = self.surfels.iter();
        let first = it.next()?.position;
        let (mut lo, mut hi) = (first, first);
        for s in it {
            for k in 0..3 {
                lo[k] = lo[k].min(s.position[k]);
                hi[k] = hi[k].max(s.position[k]);
            }
        }
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn surfel() -> GaussianSurfel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        GaussianSurfel::new([0.0; 3], [1.0, 0.0, 0.0, 0.0], [1.0, 1.0], 2, &mut rng)
    }

    #[test]
    fn activation_examples() {
        let mut s = surfel();
        let a = activate(&s, 0).unwrap();
        assert_eq!(a.sigma, 0.5);
        s.opacity_raw = 60.0;
        s.log_scale = [0.0, 2f64.ln()];
        let a = activate(&s, 0).unwrap();
        assert_eq!(a.alpha, 1.0 - ACTIVATION_EPS);
        assert!(a.alpha < 1.0);
        assert_eq!(a.scale[0], 1.0);
        assert!((a.scale[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_raw_names_surfel() {
        let mut s = surfel();
        s.transmissivity_raw = f64::NAN;
        match activate(&s, 7) {
            Err(Error::NonFiniteSurfel { index, field }) => {
                assert_eq!(index, 7);
                assert_eq!(field, "transmissivity");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frame_examples() {
        let f = surfel_frame([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.n, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(f.tu, Vector3::new(1.0, 0.0, 0.0));
        let h = std::f64::consts::FRAC_PI_4;
        let f = surfel_frame([h.cos(), h.sin(), 0.0, 0.0]).unwrap();
        assert!((f.n - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        assert!(surfel_frame([0.0; 4]).is_err());
    }

    #[test]
    fn activation_slope_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: f64 = rng.gen_range(-8.0..8.0);
            let (_, d) = sigmoid_clamped(x);
            let h = 1e-5;
            let fd = (sigmoid_clamped(x + h).0 - sigmoid_clamped(x - h).0) / (2.0 * h);
            assert!((fd - d).abs() <= 1e-6 * d.abs().max(1e-12), "x={x}");
        }
    }

    #[test]
    fn frame_backward_matches_central_differences() {
        let q = [0.7, -0.2, 0.4, 0.3];
        let (a, b, c) = (
            Vector3::new(0.3, -1.0, 0.5),
            Vector3::new(0.2, 0.1, -0.7),
            Vector3::new(-0.4, 0.9, 0.25),
        );
        let loss = |q: [f64; 4]| {
            let f = surfel_frame(q).unwrap();
            f.tu.dot(&a) + f.tv.dot(&b) + f.n.dot(&c)
        };
        let g = frame_backward(q, &a, &b, &c);
        for i in 0..4 {
            let (mut qp, mut qm) = (q, q);
            qp[i] += 1e-6;
            qm[i] -= 1e-6;
            let fd = (loss(qp) - loss(qm)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for p in [0.01, 0.3, 0.5, 0.9] {
            assert!((sigmoid_clamped(logit(p)).0 - p).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn frame_is_orthonormal_right_handed(
            w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0
        ) {
            prop_assume!(w * w + x * x + y * y + z * z > 1e-4);
            let f = surfel_frame([w, x, y, z]).unwrap();
            let m = nalgebra::Matrix3::from_columns(&[f.tu, f.tv, f.n]);
            let err = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-6);
            prop_assert!((f.n - f.tu.cross(&f.tv)).norm() < 1e-6);
            prop_assert!((f.n.norm() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn activation_is_monotone(a in -10.0f64..10.0, step in 1e-3f64..2.0) {
            prop_assert!(sigmoid_clamped(a + step).0 >= sigmoid_clamped(a).0);
            prop_assert!((a + step).exp() > a.exp());
        }
    }
}

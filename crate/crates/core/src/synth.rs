//! Ray-traced synthetic scenes with exact ground truth: a thin glass patch in
//! front of a checkerboard, lit by an environment, seen from cameras on an arc.
//!
//! Light through the glass travels in a straight line. Reflectance follows
//! Schlick's approximation; the transmitted part is
//! `(1 − R)(τ · background + (1 − τ) · scatter)`.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::shading::{env_eval, ENV_COEFFS};

#[derive(Clone, Debug, PartialEq)]
pub enum GlassShape {
    /// Axis-aligned rectangle in the plane `z = center.z`, facing `−z`.
    Quad { center: [f64; 3], half_extent: [f64; 2] },
    /// Section of a vertical cylinder (axis along `y`) bulging toward `−z`.
    Cylinder {
        center: [f64; 3],
        radius: f64,
        half_angle_deg: f64,
        half_height: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnvKind {
    /// Low-order SH environment drawn from the seed, prefiltered by roughness.
    Sh,
    /// Bright vertical stripes around the `y` axis over a dark base.
    Stripes { frequency: f64, contrast: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_cameras: usize,
    pub arc_deg: f64,
    pub camera_radius: f64,
    pub camera_height: f64,
    pub fov_deg: f64,
    pub supersample: usize,
    pub glass: GlassShape,
    pub f0: f64,
    pub roughness: f64,
    pub tau: f64,
    pub scatter: [f64; 3],
    pub background_z: f64,
    pub background_half_size: f64,
    pub checker_size: f64,
    pub checker_a: [f64; 3],
    pub checker_b: [f64; 3],
    pub env: EnvKind,
    pub env_strength: f64,
    /// Every n-th view is held out for testing.
    pub test_every: usize,
    pub init_glass_points: usize,
    pub init_background_points: usize,
    pub init_random_points: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            n_cameras: 24,
            arc_deg: 60.0,
            camera_radius: 3.0,
            camera_height: 0.4,
            fov_deg: 45.0,
            supersample: 3,
            glass: GlassShape::Quad {
                center: [0.0, 0.0, 0.0],
                half_extent: [0.5, 0.5],
            },
            f0: 0.08,
            roughness: 0.1,
            tau: 0.85,
            scatter: [0.55, 0.75, 0.7],
            background_z: 2.0,
            background_half_size: 5.0,
            checker_size: 0.25,
            checker_a: [0.9, 0.85, 0.7],
            checker_b: [0.15, 0.2, 0.35],
            env: EnvKind::Sh,
            env_strength: 1.0,
            test_every: 8,
            init_glass_points: 600,
            init_background_points: 1500,
            init_random_points: 300,
            seed: 0,
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "width",
    "height",
    "n_cameras",
    "arc_deg",
    "camera_radius",
    "camera_height",
    "fov_deg",
    "supersample",
    "glass",
    "glass_center",
    "glass_half_extent",
    "cylinder_radius",
    "cylinder_half_angle_deg",
    "cylinder_half_height",
    "f0",
    "roughness",
    "tau",
    "scatter",
    "background_z",
    "background_half_size",
    "checker_size",
    "checker_a",
    "checker_b",
    "env",
    "env_strength",
    "stripe_frequency",
    "stripe_contrast",
    "test_every",
    "init_glass_points",
    "init_background_points",
    "init_random_points",
    "seed",
];

impl SceneSpec {
    /// A cylindrical glass section under a high-contrast striped environment,
    /// giving strong spatial variation of the specular layer.
    pub fn high_variance() -> Self {
        Self {
            glass: GlassShape::Cylinder {
                center: [0.0, 0.0, 0.6],
                radius: 0.8,
                half_angle_deg: 40.0,
                half_height: 0.5,
            },
            f0: 0.25,
            roughness: 0.05,
            env: EnvKind::Stripes {
                frequency: 9.0,
                contrast: 2.5,
            },
            ..Self::default()
        }
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(SPEC_KEYS)?;
        let base = match kv.raw("glass") {
            Some("cylinder") => Self::high_variance(),
            Some("quad") | None => Self::default(),
            Some(other) => return Err(Error::InvalidSpec(format!("unknown glass shape `{other}`"))),
        };
        let mut s = base;
        s.width = kv.get_or("width", s.width)?;
        s.height = kv.get_or("height", s.height)?;
        s.n_cameras = kv.get_or("n_cameras", s.n_cameras)?;
        s.arc_deg = kv.get_or("arc_deg", s.arc_deg)?;
        s.camera_radius = kv.get_or("camera_radius", s.camera_radius)?;
        s.camera_height = kv.get_or("camera_height", s.camera_height)?;
        s.fov_deg = kv.get_or("fov_deg", s.fov_deg)?;
        s.supersample = kv.get_or("supersample", s.supersample)?;
        match &mut s.glass {
            GlassShape::Quad { center, half_extent } => {
                if let Some(c) = kv.get_vec3("glass_center")? {
                    *center = c;
                }
                if let Some(h) = kv.get_vec("glass_half_extent", 2)? {
                    *half_extent = [h[0], h[1]];
                }
            }
            GlassShape::Cylinder {
                center,
                radius,
                half_angle_deg,
                half_height,
            } => {
                if let Some(c) = kv.get_vec3("glass_center")? {
                    *center = c;
                }
                *radius = kv.get_or("cylinder_radius", *radius)?;
                *half_angle_deg = kv.get_or("cylinder_half_angle_deg", *half_angle_deg)?;
                *half_height = kv.get_or("cylinder_half_height", *half_height)?;
            }
        }
        s.f0 = kv.get_or("f0", s.f0)?;
        s.roughness = kv.get_or("roughness", s.roughness)?;
        s.tau = kv.get_or("tau", s.tau)?;
        s.scatter = kv.get_vec3("scatter")?.unwrap_or(s.scatter);
        s.background_z = kv.get_or("background_z", s.background_z)?;
        s.background_half_size = kv.get_or("background_half_size", s.background_half_size)?;
        s.checker_size = kv.get_or("checker_size", s.checker_size)?;
        s.checker_a = kv.get_vec3("checker_a")?.unwrap_or(s.checker_a);
        s.checker_b = kv.get_vec3("checker_b")?.unwrap_or(s.checker_b);
        match kv.raw("env") {
            Some("sh") => s.env = EnvKind::Sh,
            Some("stripes") => {
                if s.env == EnvKind::Sh {
                    s.env = EnvKind::Stripes {
                        frequency: 9.0,
                        contrast: 2.5,
                    };
                }
            }
            Some(other) => return Err(Error::InvalidSpec(format!("unknown env `{other}`"))),
            None => {}
        }
        if let EnvKind::Stripes { frequency, contrast } = &mut s.env {
            *frequency = kv.get_or("stripe_frequency", *frequency)?;
            *contrast = kv.get_or("stripe_contrast", *contrast)?;
        }
        s.env_strength = kv.get_or("env_strength", s.env_strength)?;
        s.test_every = kv.get_or("test_every", s.test_every)?;
        s.init_glass_points = kv.get_or("init_glass_points", s.init_glass_points)?;
        s.init_background_points = kv.get_or("init_background_points", s.init_background_points)?;
        s.init_random_points = kv.get_or("init_random_points", s.init_random_points)?;
        s.seed = kv.get_or("seed", s.seed)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let v3 = |v: [f64; 3]| format!("{}, {}, {}", v[0], v[1], v[2]);
        kv.set("width", self.width);
        kv.set("height", self.height);
        kv.set("n_cameras", self.n_cameras);
        kv.set("arc_deg", self.arc_deg);
        kv.set("camera_radius", self.camera_radius);
        kv.set("camera_height", self.camera_height);
        kv.set("fov_deg", self.fov_deg);
        kv.set("supersample", self.supersample);
        match &self.glass {
            GlassShape::Quad { center, half_extent } => {
                kv.set("glass", "quad");
                kv.set("glass_center", v3(*center));
                kv.set("glass_half_extent", format!("{}, {}", half_extent[0], half_extent[1]));
            }
            GlassShape::Cylinder {
                center,
                radius,
                half_angle_deg,
                half_height,
            } => {
                kv.set("glass", "cylinder");
                kv.set("glass_center", v3(*center));
                kv.set("cylinder_radius", radius);
                kv.set("cylinder_half_angle_deg", half_angle_deg);
                kv.set("cylinder_half_height", half_height);
            }
        }
        kv.set("f0", self.f0);
        kv.set("roughness", self.roughness);
        kv.set("tau", self.tau);
        kv.set("scatter", v3(self.scatter));
        kv.set("background_z", self.background_z);
        kv.set("background_half_size", self.background_half_size);
        kv.set("checker_size", self.checker_size);
        kv.set("checker_a", v3(self.checker_a));
        kv.set("checker_b", v3(self.checker_b));
        match &self.env {
            EnvKind::Sh => kv.set("env", "sh"),
            EnvKind::Stripes { frequency, contrast } => {
                kv.set("env", "stripes");
                kv.set("stripe_frequency", frequency);
                kv.set("stripe_contrast", contrast);
            }
        }
        kv.set("env_strength", self.env_strength);
        kv.set("test_every", self.test_every);
        kv.set("init_glass_points", self.init_glass_points);
        kv.set("init_background_points", self.init_background_points);
        kv.set("init_random_points", self.init_random_points);
        kv.set("seed", self.seed);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.width == 0 || self.height == 0 || self.n_cameras == 0 || self.supersample == 0 {
            return bad("image size, camera count and supersampling must be positive".into());
        }
        if self.test_every == 0 {
            return bad("test_every must be positive".into());
        }
        for (name, v) in [("f0", self.f0), ("tau", self.tau), ("roughness", self.roughness)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad(format!("field of view {} degrees", self.fov_deg));
        }
        if !(self.checker_size > 0.0 && self.background_half_size > 0.0) {
            return bad("background size and checker size must be positive".into());
        }
        let (zmin, zmax) = self.glass_z_range();
        if !(self.background_z > zmax) {
            return bad("background must lie behind the glass".into());
        }
        if let GlassShape::Cylinder {
            radius,
            half_angle_deg,
            half_height,
            ..
        } = self.glass
        {
            if !(radius > 0.0 && half_height > 0.0 && half_angle_deg > 0.0 && half_angle_deg < 90.0) {
                return bad("cylinder section parameters".into());
            }
        }
        for cam in self.cameras()? {
            let c = cam.center();
            if !(c.z < zmin) {
                return bad(format!("camera at z = {} is not in front of the glass", c.z));
            }
            if let GlassShape::Cylinder { center, radius, .. } = self.glass {
                let dx = c.x - center[0];
                let dz = c.z - center[2];
                if (dx * dx + dz * dz).sqrt() <= radius {
                    return bad("camera inside the glass cylinder".into());
                }
            }
        }
        Ok(())
    }

    fn glass_z_range(&self) -> (f64, f64) {
        match self.glass {
            GlassShape::Quad { center, .. } => (center[2], center[2]),
            GlassShape::Cylinder {
                center,
                radius,
                half_angle_deg,
                ..
            } => (
                center[2] - radius,
                center[2] - radius * half_angle_deg.to_radians().cos(),
            ),
        }
    }

    /// Cameras evenly spaced on a horizontal arc, all looking at the origin.
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let half = 0.5 * self.arc_deg.to_radians();
        (0..self.n_cameras)
            .map(|i| {
                let f = if self.n_cameras == 1 {
                    0.5
                } else {
                    i as f64 / (self.n_cameras - 1) as f64
                };
                let th = -half + 2.0 * half * f;
                let eye = Vector3::new(
                    self.camera_radius * th.sin(),
                    self.camera_height,
                    -self.camera_radius * th.cos(),
                );
                Camera::look_at(
                    eye,
                    Vector3::zeros(),
                    Vector3::new(0.0, 1.0, 0.0),
                    self.fov_deg,
                    self.width,
                    self.height,
                )
            })
            .collect()
    }

    pub fn is_test_view(&self, index: usize) -> bool {
        index % self.test_every == self.test_every - 1
    }
}

/// Schlick reflectance for the cosine between the normal and the view direction.
#[inline]
pub fn schlick(f0: f64, cos_theta: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - cos_theta.clamp(0.0, 1.0)).powi(5)
}

/// Ray tracer for one [`SceneSpec`].
#[derive(Clone, Debug)]
pub struct Oracle {
    pub spec: SceneSpec,
    pub env_coeffs: Vec<[f64; 3]>,
}

/// Result of tracing one ray.
#[derive(Clone, Copy, Debug)]
struct Sample {
    reflection: [f64; 3],
    transmission: [f64; 3],
    glass_t: Option<f64>,
    background_t: Option<f64>,
}

impl Oracle {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_E7F1);
        let mut env_coeffs = vec![[0.0; 3]; ENV_COEFFS];
        // DC gives mean radiance 0.6 (Y00 = 1 / (2√π)).
        env_coeffs[0] = [0.6 * 2.0 * std::f64::consts::PI.sqrt(); 3];
        for (k, c) in env_coeffs.iter_mut().enumerate().skip(1) {
            let l = (k as f64).sqrt().floor();
            let amp = 0.5 / (1.0 + l);
            for v in c.iter_mut() {
                *v = rng.gen_range(-amp..amp);
            }
        }
        for c in env_coeffs.iter_mut() {
            for v in c.iter_mut() {
                *v *= spec.env_strength;
            }
        }
        Ok(Self { spec, env_coeffs })
    }

    /// Environment radiance seen along `r` after reflection off the glass.
    pub fn environment(&self, r: &Vector3<f64>, roughness: f64) -> [f64; 3] {
        match self.spec.env {
            EnvKind::Sh => env_eval(&self.env_coeffs, r, roughness),
            EnvKind::Stripes { frequency, contrast } => {
                let phi = r.x.atan2(-r.z);
                let s = 0.5 * (1.0 + (frequency * phi).sin());
                let band = s.powi(4);
                let v = self.spec.env_strength * (0.1 + contrast * band);
                [v, v * 0.95, v * 0.9]
            }
        }
    }

    fn checker(&self, p: &Vector3<f64>) -> [f64; 3] {
        let cs = self.spec.checker_size;
        let parity = ((p.x / cs).floor() as i64 + (p.y / cs).floor() as i64).rem_euclid(2);
        if parity == 0 {
            self.spec.checker_a
        } else {
            self.spec.checker_b
        }
    }

    fn hit_background(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, [f64; 3])> {
        if d.z <= 1e-12 {
            return None;
        }
        let t = (self.spec.background_z - o.z) / d.z;
        if t <= 0.0 {
            return None;
        }
        let p = o + d * t;
        let h = self.spec.background_half_size;
        if p.x.abs() > h || p.y.abs() > h {
            return None;
        }
        Some((t, self.checker(&p)))
    }

    /// First glass hit: `(t, outward normal)`.
    fn hit_glass(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self.spec.glass {
            GlassShape::Quad { center, half_extent } => {
                if d.z.abs() < 1e-12 {
                    return None;
                }
                let t = (center[2] - o.z) / d.z;
                if t <= 0.0 {
                    return None;
                }
                let p = o + d * t;
                if (p.x - center[0]).abs() > half_extent[0] || (p.y - center[1]).abs() > half_extent[1] {
                    return None;
                }
                Some((t, Vector3::new(0.0, 0.0, -1.0)))
            }
            GlassShape::Cylinder {
                center,
                radius,
                half_angle_deg,
                half_height,
            } => {
                let (ox, oz) = (o.x - center[0], o.z - center[2]);
                let a = d.x * d.x + d.z * d.z;
                if a < 1e-14 {
                    return None;
                }
                let b = 2.0 * (ox * d.x + oz * d.z);
                let c = ox * ox + oz * oz - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let cos_max = half_angle_deg.to_radians().cos();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    if t <= 0.0 {
                        continue;
                    }
                    let p = o + d * t;
                    let n = Vector3::new(p.x - center[0], 0.0, p.z - center[2]) / radius;
                    // The section faces −z within the half angle.
                    if -n.z >= cos_max && (p.y - center[1]).abs() <= half_height {
                        return Some((t, n));
                    }
                }
                None
            }
        }
    }

    fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Sample {
        let bg = self.hit_background(o, d);
        let bg_rad = match bg {
            Some((_, c)) => c,
            None => self.environment(d, 0.0),
        };
        let s = &self.spec;
        match self.hit_glass(o, d) {
            None => Sample {
                reflection: [0.0; 3],
                transmission: bg_rad,
                glass_t: None,
                background_t: bg.map(|b| b.0),
            },
            Some((t, n)) => {
                let n = if n.dot(d) > 0.0 { -n } else { n };
                let cos = -n.dot(d);
                let r_f = schlick(s.f0, cos);
                let refl_dir = d - n * (2.0 * d.dot(&n));
                let env = self.environment(&refl_dir, s.roughness);
                Sample {
                    reflection: env.map(|e| r_f * e),
                    transmission: std::array::from_fn(|c| {
                        (1.0 - r_f) * (s.tau * bg_rad[c] + (1.0 - s.tau) * s.scatter[c])
                    }),
                    glass_t: Some(t),
                    background_t: bg.map(|b| b.0),
                }
            }
        }
    }

    /// Traces one view with box-filtered supersampling. Mask and depths use
    /// the pixel-center ray.
    pub fn trace_reference(&self, camera: &Camera) -> Result<ReferenceFrame> {
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        let ss = self.spec.supersample;
        let o = camera.center();
        let fwd = camera.forward();
        let rows: Vec<Vec<([f64; 3], [f64; 3], f64, f64)>> = (0..h)
            .into_par_iter()
            .map(|py| {
                (0..w)
                    .map(|px| {
                        let mut refl = [0.0; 3];
                        let mut trans = [0.0; 3];
                        for j in 0..ss {
                            for i in 0..ss {
                                let u = px as f64 + (i as f64 + 0.5) / ss as f64;
                                let v = py as f64 + (j as f64 + 0.5) / ss as f64;
                                let smp = self.trace(&o, &camera.ray_dir_at(u, v));
                                for c in 0..3 {
                                    refl[c] += smp.reflection[c];
                                    trans[c] += smp.transmission[c];
                                }
                            }
                        }
                        let n = (ss * ss) as f64;
                        let d = camera.ray_dir(px, py);
                        let center = self.trace(&o, &d);
                        let depth = |t: Option<f64>| t.map_or(f64::INFINITY, |t| t * d.dot(&fwd));
                        (
                            refl.map(|v| v / n),
                            trans.map(|v| v / n),
                            depth(center.glass_t),
                            depth(center.background_t),
                        )
                    })
                    .collect()
            })
            .collect();
        let mut frame = ReferenceFrame {
            image: Image::new(w, h, 3),
            mask: Image::new(w, h, 1),
            reflection: Image::new(w, h, 3),
            transmission: Image::new(w, h, 3),
            glass_depth: Image::new(w, h, 1),
            background_depth: Image::new(w, h, 1),
            camera: camera.clone(),
        };
        for (py, row) in rows.into_iter().enumerate() {
            for (px, (refl, trans, gd, bd)) in row.into_iter().enumerate() {
                let pix = py * w + px;
                frame.reflection.pixel_mut(pix).copy_from_slice(&refl);
                frame.transmission.pixel_mut(pix).copy_from_slice(&trans);
                let img = frame.image.pixel_mut(pix);
                for c in 0..3 {
                    img[c] = refl[c] + trans[c];
                }
                frame.mask.data_mut()[pix] = if gd.is_finite() { 1.0 } else { 0.0 };
                frame.glass_depth.data_mut()[pix] = gd;
                frame.background_depth.data_mut()[pix] = bd;
            }
        }
        Ok(frame)
    }

    /// Initialization points: samples on the glass, on the visible part of
    /// the background, and uniformly inside the slab between them.
    pub fn init_points(&self) -> Vec<InitPoint> {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x1417_9017);
        let mut pts = Vec::new();
        for _ in 0..s.init_glass_points {
            let p = match s.glass {
                GlassShape::Quad { center, half_extent } => Vector3::new(
                    center[0] + rng.gen_range(-half_extent[0]..half_extent[0]),
                    center[1] + rng.gen_range(-half_extent[1]..half_extent[1]),
                    center[2],
                ),
                GlassShape::Cylinder {
                    center,
                    radius,
                    half_angle_deg,
                    half_height,
                } => {
                    let a = half_angle_deg.to_radians();
                    let phi = rng.gen_range(-a..a);
                    Vector3::new(
                        center[0] + radius * phi.sin(),
                        center[1] + rng.gen_range(-half_height..half_height),
                        center[2] - radius * phi.cos(),
                    )
                }
            };
            let c: [f64; 3] = std::array::from_fn(|k| s.tau * 0.5 + (1.0 - s.tau) * s.scatter[k]);
            pts.push(InitPoint {
                position: p.into(),
                color: c,
                kind: PointKind::Glass,
            });
        }
        // Extent of the background seen by the cameras.
        let reach = (s.background_z + s.camera_radius) * (0.5 * s.fov_deg.to_radians()).tan()
            + s.camera_radius * (0.5 * s.arc_deg.to_radians()).sin() * (1.0 + s.background_z / s.camera_radius);
        let hx = reach.min(s.background_half_size);
        let hy = ((s.background_z + s.camera_radius) * (0.5 * s.fov_deg.to_radians()).tan()
            + s.camera_height.abs() * (1.0 + s.background_z / s.camera_radius))
            .min(s.background_half_size);
        for _ in 0..s.init_background_points {
            let p = Vector3::new(rng.gen_range(-hx..hx), rng.gen_range(-hy..hy), s.background_z);
            pts.push(InitPoint {
                position: p.into(),
                color: self.checker(&p),
                kind: PointKind::Background,
            });
        }
        let (_, zmax) = s.glass_z_range();
        for _ in 0..s.init_random_points {
            let p = Vector3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(zmax..s.background_z),
            );
            pts.push(InitPoint {
                position: p.into(),
                color: [0.5; 3],
                kind: PointKind::Random,
            });
        }
        pts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointKind {
    Glass,
    Background,
    Random,
}

impl PointKind {
    pub fn name(self) -> &'static str {
        match self {
            PointKind::Glass => "glass",
            PointKind::Background => "background",
            PointKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "glass" => Some(PointKind::Glass),
            "background" => Some(PointKind::Background),
            "random" => Some(PointKind::Random),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
    pub kind: PointKind,
}

/// Oracle output for one camera.
#[derive(Clone, Debug)]
pub struct ReferenceFrame {
    pub image: Image,
    /// 1 where the pixel-center ray hits glass.
    pub mask: Image,
    pub reflection: Image,
    pub transmission: Image,
    /// Camera depth of the glass hit; infinite where there is none.
    pub glass_depth: Image,
    pub background_depth: Image,
    pub camera: Camera,
}

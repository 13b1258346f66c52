//! Central finite-difference validation of the analytic backward pass.
//!
//! With gating enabled the objective is not the gradient of the forward loss
//! (the gate is a partial stop-gradient). The numeric side therefore evaluates
//! `C̃ = (1 − g₀) C_trans(θ₀) + g₀ C_trans(θ)` with `g₀` and `C_trans(θ₀)`
//! frozen at the base point, whose true gradient is the gated one.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backward::{backward, GradientBundle};
use crate::camera::Camera;
use crate::error::Result;
use crate::image::Image;
use crate::losses::{view_objective, LossComponents, LossWeights};
use crate::render::{render, FrozenGate, RenderOptions};
use crate::scene::{GaussianSurfel, ParamGroup, Scene};
use crate::shading::ShadingParams;

/// Single-view objective: rendered colour vs `target`, plus optional mask term.
#[derive(Clone, Debug)]
pub struct Objective {
    pub target: Image,
    pub mask: Option<Image>,
    pub weights: LossWeights,
    pub options: RenderOptions,
}

impl Objective {
    pub fn evaluate(&self, scene: &Scene, camera: &Camera) -> Result<LossComponents> {
        let r = render(scene, camera, &self.options)?;
        Ok(view_objective(&r.outputs, camera, &self.target, self.mask.as_ref(), &self.weights)?.0)
    }

    /// Loss and analytic gradient.
    pub fn gradient(&self, scene: &Scene, camera: &Camera) -> Result<(LossComponents, GradientBundle)> {
        let r = render(scene, camera, &self.options)?;
        let (loss, grads) = view_objective(&r.outputs, camera, &self.target, self.mask.as_ref(), &self.weights)?;
        Ok((loss, backward(scene, &r, &grads)?))
    }

    /// Copy whose forward value has the gated gradient, linearized at `scene`.
    pub fn frozen_at(&self, scene: &Scene, camera: &Camera) -> Result<Objective> {
        let mut base_opts = self.options.clone();
        base_opts.frozen_gate = None;
        let r = render(scene, camera, &base_opts)?;
        let mut out = self.clone();
        out.options.frozen_gate = Some(FrozenGate {
            gate: r.outputs.gate,
            c_trans: r.outputs.c_trans,
        });
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Maximum allowed `|a − n| / max(|a|, |n|, abs_floor)`.
    pub tolerance: f64,
    /// Analytic and numeric both below this count as a zero gradient.
    pub zero_tol: f64,
    /// Denominator floor of the relative error. Central differences of an
    /// O(1) loss at `h = 1e-5` carry roundoff near `1e-11`, so gradients
    /// much smaller than this floor are compared absolutely.
    pub abs_floor: f64,
    /// Check at most this many evenly spaced scalars per group.
    pub max_per_group: Option<usize>,
    /// Allowed share of scalars skipped as non-smooth.
    pub max_nonsmooth_fraction: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            zero_tol: 1e-8,
            abs_floor: 1e-7,
            max_per_group: None,
            max_nonsmooth_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    /// Both analytic and numeric below `zero_tol`.
    pub zero: usize,
    /// Finite differences at `h` and `h/2` disagree, and still disagree at
    /// `h/10` and `h/20`: a kink or cutoff sits at the base point, so the
    /// scalar is not scored.
    pub nonsmooth: usize,
    pub failures: usize,
    pub max_rel: f64,
    /// `(scalar label, analytic, numeric)` of the largest scored error.
    pub worst: Option<(String, f64, f64)>,
    pub pass: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.pass)
    }

    pub fn max_rel(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel).fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "finite differences: step {:e}, tolerance {:e}", self.step, self.tolerance);
        let _ = writeln!(
            s,
            "{:<20} {:>7} {:>6} {:>9} {:>8} {:>12}  {}",
            "group", "checked", "zero", "nonsmooth", "failures", "max rel err", "result"
        );
        for g in &self.groups {
            let _ = writeln!(
                s,
                "{:<20} {:>7} {:>6} {:>9} {:>8} {:>12.3e}  {}",
                g.name,
                g.checked,
                g.zero,
                g.nonsmooth,
                g.failures,
                g.max_rel,
                if g.pass { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Surfel(usize, ParamGroup, usize),
    Shading(usize, usize),
}

fn slot_mut(scene: &mut Scene, slot: Slot) -> &mut f64 {
    match slot {
        Slot::Surfel(i, g, k) => &mut scene.surfels[i].group_mut(g)[k],
        Slot::Shading(b, k) => &mut scene.shading.slices_mut()[b][k],
    }
}

fn slot_grad(g: &GradientBundle, slot: Slot) -> f64 {
    match slot {
        Slot::Surfel(i, gr, k) => g.surfels[i].group(gr)[k],
        Slot::Shading(b, k) => g.shading.slices()[b][k],
    }
}

const SHADING_GROUPS: [(&str, &[usize]); 4] = [
    ("env_sh", &[0]),
    ("head_layer1", &[1, 2]),
    ("head_layer2", &[3, 4]),
    ("head_layer3", &[5, 6]),
];

fn groups(scene: &Scene) -> Vec<(String, Vec<Slot>)> {
    let mut out = Vec::new();
    for g in ParamGroup::ALL {
        let mut slots = Vec::new();
        for (i, s) in scene.surfels.iter().enumerate() {
            for k in 0..s.group(g).len() {
                slots.push(Slot::Surfel(i, g, k));
            }
        }
        out.push((g.name().to_string(), slots));
    }
    let sizes: Vec<usize> = scene.shading.slices().iter().map(|s| s.len()).collect();
    for (name, blocks) in SHADING_GROUPS {
        let slots = blocks
            .iter()
            .flat_map(|&b| (0..sizes[b]).map(move |k| Slot::Shading(b, k)))
            .collect();
        out.push((name.to_string(), slots));
    }
    out
}

fn label(slot: Slot) -> String {
    match slot {
        Slot::Surfel(i, g, k) => format!("surfel {i} {}[{k}]", g.name()),
        Slot::Shading(b, k) => format!("shading block {b}[{k}]"),
    }
}

/// Compares analytic gradients of `objective` with central differences for
/// every scalar parameter (or an evenly spaced subset per group).
pub fn finite_diff_check(
    scene: &Scene,
    camera: &Camera,
    objective: &Objective,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, analytic) = objective.gradient(scene, camera)?;
    let frozen = objective.frozen_at(scene, camera)?;
    let mut work = scene.clone();
    let eval = |work: &mut Scene, slot: Slot, delta: f64, base: f64| -> Result<f64> {
        *slot_mut(work, slot) = base + delta;
        let v = frozen.evaluate(work, camera)?.total;
        *slot_mut(work, slot) = base;
        Ok(v)
    };
    let h = opts.step;
    let mut report = GradCheckReport {
        groups: Vec::new(),
        step: h,
        tolerance: opts.tolerance,
    };
    for (name, slots) in groups(scene) {
        let chosen: Vec<Slot> = match opts.max_per_group {
            Some(m) if slots.len() > m && m > 0 => {
                (0..m).map(|j| slots[j * slots.len() / m]).collect()
            }
            _ => slots,
        };
        let mut gr = GroupReport {
            name,
            ..Default::default()
        };
        for slot in chosen {
            gr.checked += 1;
            let base = *slot_mut(&mut work, slot);
            let a = slot_grad(&analytic, slot);
            let fp = eval(&mut work, slot, h, base)?;
            let fm = eval(&mut work, slot, -h, base)?;
            let n = (fp - fm) / (2.0 * h);
            let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(opts.abs_floor);
            if a.abs() <= opts.zero_tol && n.abs() <= opts.zero_tol {
                gr.zero += 1;
                continue;
            }
            let mut err = rel(a, n);
            let mut numeric = n;
            if err > opts.tolerance {
                let mut central = |step: f64| -> Result<f64> {
                    Ok((eval(&mut work, slot, step, base)? - eval(&mut work, slot, -step, base)?) / (2.0 * step))
                };
                let mut coarse = n;
                let mut fine = central(0.5 * h)?;
                if rel(coarse, fine) > opts.tolerance || rel(a, fine) > opts.tolerance {
                    // A jump inside ±h, possibly straddled by both stencils:
                    // retry an order of magnitude closer.
                    coarse = central(0.1 * h)?;
                    fine = central(0.05 * h)?;
                    if rel(coarse, fine) > opts.tolerance {
                        gr.nonsmooth += 1;
                        continue;
                    }
                }
                // Richardson extrapolation removes the O(h²) term.
                for candidate in [fine, (4.0 * fine - coarse) / 3.0] {
                    if rel(a, candidate) < err {
                        err = rel(a, candidate);
                        numeric = candidate;
                    }
                }
            }
            if err > opts.tolerance {
                gr.failures += 1;
            }
            if err > gr.max_rel {
                gr.max_rel = err;
                gr.worst = Some((label(slot), a, numeric));
            }
        }
        let allowed = ((gr.checked as f64) * opts.max_nonsmooth_fraction).floor().max(1.0) as usize;
        gr.pass = gr.failures == 0 && gr.nonsmooth <= allowed;
        report.groups.push(gr);
    }
    Ok(report)
}

pub fn random_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 && n < 1.0 {
            return q.map(|v| v / n);
        }
    }
}

/// Random surfel in the box `[-1, 1]² × [-0.6, 0.6]` with every raw
/// attribute drawn away from saturation.
pub fn random_surfel(rng: &mut impl Rng, sh_degree: usize) -> GaussianSurfel {
    let pos = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.6..0.6)];
    let scale = [rng.gen_range(0.1..0.45), rng.gen_range(0.1..0.45)];
    let mut s = GaussianSurfel::new(pos, random_quaternion(rng), scale, sh_degree, rng);
    s.occupancy_raw = rng.gen_range(-1.5..2.5);
    s.opacity_raw = rng.gen_range(-2.0..2.0);
    for c in s.sh_color.iter_mut() {
        for v in c.iter_mut() {
            *v = rng.gen_range(-0.4..0.4);
        }
    }
    s.roughness_raw = rng.gen_range(-2.0..2.0);
    for z in s.material_feature.iter_mut() {
        *z = rng.gen_range(-1.0..1.0);
    }
    for v in s.scatter_color_raw.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    s.transmissivity_raw = rng.gen_range(-2.0..2.0);
    s
}

/// `n` random surfels (SH degree 2) with randomized environment and head
/// biases, seeded.
pub fn random_scene(seed: u64, n: usize) -> Scene {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let surfels = (0..n).map(|_| random_surfel(&mut r, 2)).collect();
    let mut shading = ShadingParams::init(&mut r);
    for c in shading.env.iter_mut().skip(1) {
        for v in c.iter_mut() {
            *v = r.gen_range(-0.3..0.3);
        }
    }
    for b in [&mut shading.b1, &mut shading.b2, &mut shading.b3] {
        for v in b.iter_mut() {
            *v = r.gen_range(-0.2..0.2);
        }
    }
    Scene::new(surfels, shading, 2)
}

/// Seeded check problem: random scene, camera, target and mask at `size²`.
pub fn random_problem(seed: u64, surfels: usize, size: usize, gate_k: f64) -> Result<(Scene, Camera, Objective)> {
    let scene = random_scene(seed, surfels);
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let eye = Vector3::new(r.gen_range(-0.8..0.8), r.gen_range(-0.5..0.5), -3.0);
    let camera = Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0), 45.0, size, size)?;
    let objective = Objective {
        target: Image::from_fn(size, size, 3, |_, _, _| r.gen_range(0.0..1.0)),
        mask: Some(Image::from_fn(size, size, 1, |x, y, _| if (x + y) % 3 == 0 { 1.0 } else { 0.0 })),
        weights: LossWeights::default(),
        options: RenderOptions {
            gate_k,
            ..RenderOptions::default()
        },
    };
    Ok((scene, camera, objective))
}

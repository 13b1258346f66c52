//! Scene editing on surfel attributes, with an undo journal stored alongside
//! the scene.

use crate::camera::Camera;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{build_fragments, deferred_aggregate, prepare_view, OpacityModel};
use crate::scene::{logit, sigmoid_clamped, Scene, ACTIVATION_EPS};

/// A surfel is selected by a mask when it contributes more than this
/// first-hit probability to some masked pixel.
pub const MASK_SELECT_PROB: f64 = 0.1;

#[derive(Clone, Debug)]
pub enum Selection {
    All,
    /// Axis-aligned world box on surfel centers.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Pixels with mask value > 0.5 seen from `camera`.
    Mask { mask: Image, camera: Camera },
}

#[derive(Clone, Debug, PartialEq)]
pub enum EditOp {
    /// Multiplies activated roughness.
    RoughnessScale(f64),
    SetTau(f64),
    /// Composition-time flag: specular off, attenuation forced to 1.
    RemoveReflection,
    /// Per-channel multiplier on the activated scatter colour.
    Tint([f64; 3]),
    /// Sets the activated optical opacity.
    SetOpacity(f64),
}

#[derive(Clone, Debug)]
pub struct EditSpec {
    pub selection: Selection,
    pub ops: Vec<EditOp>,
}

/// Raw values of one surfel before an edit.
#[derive(Clone, Debug, PartialEq)]
pub struct EditEntry {
    pub index: usize,
    pub roughness_raw: f64,
    pub transmissivity_raw: f64,
    pub scatter_color_raw: [f64; 3],
    pub opacity_raw: f64,
    pub reflection_removed: bool,
}

/// Undo record of one applied edit.
#[derive(Clone, Debug, PartialEq)]
pub struct EditFrame {
    pub surfel_count: usize,
    pub description: String,
    pub entries: Vec<EditEntry>,
}

#[derive(Clone, Debug, Default)]
pub struct EditReport {
    pub selected: usize,
    pub warnings: Vec<String>,
}

/// Indices of the surfels covered by `selection`, ascending.
pub fn select(scene: &Scene, selection: &Selection) -> Result<Vec<usize>> {
    let picked: Vec<usize> = match selection {
        Selection::All => (0..scene.len()).collect(),
        Selection::Box { min, max } => scene
            .surfels
            .iter()
            .enumerate()
            .filter(|(_, s)| (0..3).all(|k| s.position[k] >= min[k] && s.position[k] <= max[k]))
            .map(|(i, _)| i)
            .collect(),
        Selection::Mask { mask, camera } => {
            if mask.width() != camera.width || mask.height() != camera.height {
                return Err(Error::DimensionMismatch("selection mask vs camera".into()));
            }
            let view = prepare_view(scene, camera, OpacityModel::Factorized)?;
            let frags = build_fragments(&view, camera);
            let gb = deferred_aggregate(&frags, &view);
            let mut hit = vec![false; scene.len()];
            for pix in 0..camera.pixel_count() {
                if mask.pixel(pix)[0] <= 0.5 {
                    continue;
                }
                let base = frags.offsets[pix];
                for (k, f) in frags.pixel(pix).iter().take(gb.used[pix] as usize).enumerate() {
                    let s = &view.surfels[f.slot as usize];
                    if s.sigma * f.g * gb.prefix[base + k] > MASK_SELECT_PROB {
                        hit[s.index] = true;
                    }
                }
            }
            hit.iter().enumerate().filter(|(_, h)| **h).map(|(i, _)| i).collect()
        }
    };
    if picked.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(picked)
}

fn clamp_target(name: &str, v: f64, warnings: &mut Vec<String>) -> f64 {
    let c = v.clamp(ACTIVATION_EPS, 1.0 - ACTIVATION_EPS);
    if c != v {
        let w = format!("{name} target {v} clamped to {c}");
        log::warn!("{w}");
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
    c
}

fn describe(ops: &[EditOp]) -> String {
    ops.iter()
        .map(|op| match op {
            EditOp::RoughnessScale(f) => format!("roughness_scale={f}"),
            EditOp::SetTau(v) => format!("set_tau={v}"),
            EditOp::RemoveReflection => "remove_reflection".to_string(),
            EditOp::Tint(t) => format!("tint={},{},{}", t[0], t[1], t[2]),
            EditOp::SetOpacity(v) => format!("set_opacity={v}"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Applies `spec` and records an undo frame in the scene's journal.
pub fn apply_edit(scene: &mut Scene, spec: &EditSpec) -> Result<EditReport> {
    if spec.ops.is_empty() {
        return Err(Error::InvalidParameter("edit has no operations".into()));
    }
    for op in &spec.ops {
        let bad = match op {
            EditOp::RoughnessScale(f) => !(f.is_finite() && *f >= 0.0),
            EditOp::SetTau(v) | EditOp::SetOpacity(v) => !v.is_finite(),
            EditOp::Tint(t) => t.iter().any(|v| !(v.is_finite() && *v >= 0.0)),
            EditOp::RemoveReflection => false,
        };
        if bad {
            return Err(Error::InvalidParameter(format!("invalid edit operation {op:?}")));
        }
    }
    if scene.reflection_removed.len() != scene.len() {
        return Err(Error::Contract("edit flags out of sync with surfels".into()));
    }
    let indices = select(scene, &spec.selection)?;
    let mut report = EditReport {
        selected: indices.len(),
        warnings: Vec::new(),
    };
    let mut entries = Vec::with_capacity(indices.len());
    for &i in &indices {
        let s = &mut scene.surfels[i];
        entries.push(EditEntry {
            index: i,
            roughness_raw: s.roughness_raw,
            transmissivity_raw: s.transmissivity_raw,
            scatter_color_raw: s.scatter_color_raw,
            opacity_raw: s.opacity_raw,
            reflection_removed: scene.reflection_removed[i],
        });
        for op in &spec.ops {
            match *op {
                EditOp::RoughnessScale(f) => {
                    let rho = sigmoid_clamped(s.roughness_raw).0;
                    s.roughness_raw = logit(clamp_target("roughness", rho * f, &mut report.warnings));
                }
                EditOp::SetTau(v) => {
                    s.transmissivity_raw = logit(clamp_target("transmissivity", v, &mut report.warnings));
                }
                EditOp::RemoveReflection => scene.reflection_removed[i] = true,
                EditOp::Tint(t) => {
                    for c in 0..3 {
                        let cur = sigmoid_clamped(s.scatter_color_raw[c]).0;
                        s.scatter_color_raw[c] = logit(clamp_target("scatter colour", cur * t[c], &mut report.warnings));
                    }
                }
                EditOp::SetOpacity(v) => {
                    s.opacity_raw = logit(clamp_target("opacity", v, &mut report.warnings));
                }
            }
        }
    }
    scene.edit_journal.push(EditFrame {
        surfel_count: scene.len(),
        description: describe(&spec.ops),
        entries,
    });
    Ok(report)
}

/// Reverts the most recent edit.
pub fn undo_edit(scene: &mut Scene) -> Result<EditFrame> {
    let Some(frame) = scene.edit_journal.last() else {
        return Err(Error::InvalidParameter("no edit to undo".into()));
    };
    if frame.surfel_count != scene.len() {
        return Err(Error::Contract(format!(
            "edit was recorded on {} surfels but the scene now has {}",
            frame.surfel_count,
            scene.len()
        )));
    }
    let frame = scene.edit_journal.pop().expect("checked above");
    for e in &frame.entries {
        let s = &mut scene.surfels[e.index];
        s.roughness_raw = e.roughness_raw;
        s.transmissivity_raw = e.transmissivity_raw;
        s.scatter_color_raw = e.scatter_color_raw;
        s.opacity_raw = e.opacity_raw;
        scene.reflection_removed[e.index] = e.reflection_removed;
    }
    Ok(frame)
}

/// Reads the operation list of an edit file. Recognized keys:
/// `roughness_scale`, `set_tau`, `remove_reflection`, `tint`, `set_opacity`.
/// Selection keys (`select`, `box_min`, `box_max`, `mask`, `camera`) are
/// left to the caller.
pub fn parse_ops(kv: &KeyValues) -> Result<Vec<EditOp>> {
    let mut ops = Vec::new();
    if let Some(f) = kv.get::<f64>("roughness_scale")? {
        ops.push(EditOp::RoughnessScale(f));
    }
    if let Some(v) = kv.get::<f64>("set_tau")? {
        ops.push(EditOp::SetTau(v));
    }
    if kv.get_bool("remove_reflection")?.unwrap_or(false) {
        ops.push(EditOp::RemoveReflection);
    }
    if let Some(t) = kv.get_vec3("tint")? {
        ops.push(EditOp::Tint(t));
    }
    if let Some(v) = kv.get::<f64>("set_opacity")? {
        ops.push(EditOp::SetOpacity(v));
    }
    Ok(ops)
}

/// Box selection from `box_min`/`box_max` keys, if present.
pub fn parse_box(kv: &KeyValues) -> Result<Option<Selection>> {
    match (kv.get_vec3("box_min")?, kv.get_vec3("box_max")?) {
        (Some(min), Some(max)) => Ok(Some(Selection::Box { min, max })),
        (None, None) => Ok(None),
        _ => Err(Error::InvalidParameter("box selection needs both box_min and box_max".into())),
    }
}

//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "RTSP"                      magic
//! u32   version               (= 1)
//! u64   surfel count N
//! u32   sh degree D           (K = (D + 1)^2 coefficients)
//! u32   material feature dim F
//! f32   position              N × 3
//! f32   rotation              N × 4   (w, x, y, z)
//! f32   log_scale             N × 2
//! f32   occupancy_raw         N
//! f32   opacity_raw           N
//! f32   sh_color              N × K × 3
//! f32   roughness_raw         N
//! f32   material_feature      N × F
//! f32   scatter_color_raw     N × 3
//! f32   transmissivity_raw    N
//! u64   shading length S, then f32 × S
//!         (env 25 × 3, w1, b1, w2, b2, w3, b3; weights row-major (out, in))
//! u64   iteration
//! u8    reflection_removed    N
//! u64   edit journal length J, then J frames:
//!         u64 surfel count, u32 byte length + UTF-8 description,
//!         u64 entry count E, then E × (u64 index, f64 roughness_raw,
//!         f64 transmissivity_raw, f64 × 3 scatter_color_raw,
//!         f64 opacity_raw, u8 reflection_removed)
//! ```
//!
//! Parameters are stored as `f32`, so a loaded scene is the saved one rounded
//! to single precision; save → load → save is byte-identical.

use std::path::Path;

use crate::edit::{EditEntry, EditFrame};
use crate::error::{Error, Result};
use crate::scene::{GaussianSurfel, Scene, FEATURE_DIM};
use crate::sh;
use crate::shading::ShadingParams;

pub const MAGIC: &[u8; 4] = b"RTSP";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        // Every counted element takes at least one byte.
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Format(format!("{what} count {n} exceeds file size")));
        }
        Ok(n as usize)
    }
}

pub fn to_bytes(scene: &Scene) -> Result<Vec<u8>> {
    scene.validate()?;
    let n = scene.len();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(n as u64);
    w.u32(scene.sh_degree as u32);
    w.u32(FEATURE_DIM as u32);
    let s = &scene.surfels;
    s.iter().flat_map(|x| x.position).for_each(|v| w.f32(v));
    s.iter().flat_map(|x| x.rotation).for_each(|v| w.f32(v));
    s.iter().flat_map(|x| x.log_scale).for_each(|v| w.f32(v));
    s.iter().for_each(|x| w.f32(x.occupancy_raw));
    s.iter().for_each(|x| w.f32(x.opacity_raw));
    s.iter().flat_map(|x| x.sh_color.iter().flatten().copied()).for_each(|v| w.f32(v));
    s.iter().for_each(|x| w.f32(x.roughness_raw));
    s.iter().flat_map(|x| x.material_feature).for_each(|v| w.f32(v));
    s.iter().flat_map(|x| x.scatter_color_raw).for_each(|v| w.f32(v));
    s.iter().for_each(|x| w.f32(x.transmissivity_raw));
    w.u64(scene.shading.param_count() as u64);
    for block in scene.shading.slices() {
        block.iter().for_each(|&v| w.f32(v));
    }
    w.u64(scene.iteration);
    scene.reflection_removed.iter().for_each(|&b| w.u8(b as u8));
    w.u64(scene.edit_journal.len() as u64);
    for f in &scene.edit_journal {
        w.u64(f.surfel_count as u64);
        w.u32(f.description.len() as u32);
        w.0.extend_from_slice(f.description.as_bytes());
        w.u64(f.entries.len() as u64);
        for e in &f.entries {
            w.u64(e.index as u64);
            w.f64(e.roughness_raw);
            w.f64(e.transmissivity_raw);
            e.scatter_color_raw.iter().for_each(|&v| w.f64(v));
            w.f64(e.opacity_raw);
            w.u8(e.reflection_removed as u8);
        }
    }
    Ok(w.0)
}

pub fn from_bytes(buf: &[u8]) -> Result<Scene> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = r.len("surfel")?;
    let degree = r.u32()? as usize;
    if degree > sh::MAX_DEGREE {
        return Err(Error::Format(format!("sh degree {degree}")));
    }
    let fdim = r.u32()? as usize;
    if fdim != FEATURE_DIM {
        return Err(Error::Format(format!("feature dimension {fdim}, expected {FEATURE_DIM}")));
    }
    let k = sh::coeff_count(degree);
    let template = GaussianSurfel {
        position: [0.0; 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scale: [0.0; 2],
        occupancy_raw: 0.0,
        opacity_raw: 0.0,
        sh_color: vec![[0.0; 3]; k],
        roughness_raw: 0.0,
        material_feature: [0.0; FEATURE_DIM],
        scatter_color_raw: [0.0; 3],
        transmissivity_raw: 0.0,
    };
    let mut s = vec![template; n];
    for x in s.iter_mut() {
        for v in &mut x.position {
            *v = r.f32()?;
        }
    }
    for x in s.iter_mut() {
        for v in &mut x.rotation {
            *v = r.f32()?;
        }
    }
    for x in s.iter_mut() {
        for v in &mut x.log_scale {
            *v = r.f32()?;
        }
    }
    for x in s.iter_mut() {
        x.occupancy_raw = r.f32()?;
    }
    for x in s.iter_mut() {
        x.opacity_raw = r.f32()?;
    }
    for x in s.iter_mut() {
        for v in x.sh_color.iter_mut().flatten() {
            *v = r.f32()?;
        }
    }
    for x in s.iter_mut() {
        x.roughness_raw = r.f32()?;
    }
    for x in s.iter_mut() {
        for v in &mut x.material_feature {
            *v = r.f32()?;
        }
    }
    for x in s.iter_mut() {
        for v in &mut x.scatter_color_raw {
            *v = r.f32()?;
        }
    }
    for x in s.iter_mut() {
        x.transmissivity_raw = r.f32()?;
    }
    let mut shading = ShadingParams::zeros();
    let len = r.len("shading")?;
    if len != shading.param_count() {
        return Err(Error::Format(format!(
            "shading block has {len} values, expected {}",
            shading.param_count()
        )));
    }
    for block in shading.slices_mut() {
        for v in block.iter_mut() {
            *v = r.f32()?;
        }
    }
    let mut scene = Scene::new(s, shading, degree);
    scene.iteration = r.u64()?;
    for i in 0..n {
        scene.reflection_removed[i] = r.u8()? != 0;
    }
    let frames = r.len("edit frame")?;
    for _ in 0..frames {
        let surfel_count = r.u64()? as usize;
        let dlen = r.u32()? as usize;
        let description = String::from_utf8(r.take(dlen)?.to_vec())
            .map_err(|_| Error::Format("edit description is not UTF-8".into()))?;
        let count = r.len("edit entry")?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let index = r.u64()? as usize;
            let roughness_raw = r.f64()?;
            let transmissivity_raw = r.f64()?;
            let scatter_color_raw = [r.f64()?, r.f64()?, r.f64()?];
            let opacity_raw = r.f64()?;
            let reflection_removed = r.u8()? != 0;
            if index >= surfel_count {
                return Err(Error::Format(format!("edit entry index {index} out of range")));
            }
            entries.push(EditEntry {
                index,
                roughness_raw,
                transmissivity_raw,
                scatter_color_raw,
                opacity_raw,
                reflection_removed,
            });
        }
        scene.edit_journal.push(EditFrame {
            surfel_count,
            description,
            entries,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    scene.validate().map_err(|e| Error::Format(format!("invalid contents: {e}")))?;
    Ok(scene)
}

pub fn save(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(scene)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// The scene as it would be after a save/load cycle.
pub fn quantize(scene: &Scene) -> Result<Scene> {
    from_bytes(&to_bytes(scene)?)
}

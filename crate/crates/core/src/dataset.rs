//! Multi-view datasets on disk and in memory.
//!
//! Directory layout:
//!
//! ```text
//! cameras.txt        one camera per line:
//!                    index fx fy cx cy width height r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2
//!                    (world-to-camera rotation row-major, then translation; `#` comments)
//! split.txt          `index train|test` per line (optional: every 8th view is test)
//! images/NNN.png     RGB target
//! masks/NNN.png      transparent-region mask, white = transparent (optional)
//! points.txt         `x y z r g b kind` initialization points (optional)
//! spec.txt           scene spec of a synthetic dataset (optional)
//! layers/NNN_reflection.png, layers/NNN_transmission.png
//! depths/NNN_glass.{png,f32}, depths/NNN_background.{png,f32}
//! ```
//!
//! Layers and depths are written for synthetic data only. Depth PNGs are
//! normalized per image for viewing; the `.f32` files hold camera depths,
//! infinite where the ray misses.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::camera::Camera;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::synth::{InitPoint, Oracle, PointKind, ReferenceFrame, SceneSpec};

/// Default hold-out rule: every eighth view.
pub const TEST_EVERY: usize = 8;

#[derive(Clone, Debug)]
pub struct View {
    pub index: usize,
    pub camera: Camera,
    pub image: Image,
    pub mask: Option<Image>,
    pub glass_depth: Option<Image>,
    pub background_depth: Option<Image>,
    pub test: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub views: Vec<View>,
    pub points: Vec<InitPoint>,
    pub spec: Option<SceneSpec>,
}

impl Dataset {
    /// Ray-traces every camera of `spec` into an in-memory dataset.
    pub fn synthesize(spec: &SceneSpec) -> Result<Self> {
        let oracle = Oracle::new(spec.clone())?;
        let frames = synthesize_frames(&oracle)?;
        Ok(Self::from_frames(spec, &oracle, frames))
    }

    fn from_frames(spec: &SceneSpec, oracle: &Oracle, frames: Vec<ReferenceFrame>) -> Self {
        let views = frames
            .into_iter()
            .enumerate()
            .map(|(index, f)| View {
                index,
                camera: f.camera,
                image: f.image,
                mask: Some(f.mask),
                glass_depth: Some(f.glass_depth),
                background_depth: Some(f.background_depth),
                test: spec.is_test_view(index),
            })
            .collect();
        Self {
            views,
            points: oracle.init_points(),
            spec: Some(spec.clone()),
        }
    }

    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| !v.test)
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.test)
    }

    /// Checks that every image, mask and depth matches its camera.
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidParameter("dataset has no views".into()));
        }
        for v in &self.views {
            v.camera.validate()?;
            let (w, h) = (v.camera.width, v.camera.height);
            let check = |img: &Image, what: &str, ch: usize| {
                if img.width() != w || img.height() != h || img.channels() != ch {
                    Err(Error::DimensionMismatch(format!(
                        "view {}: {what} is {}x{}x{}, camera expects {w}x{h}x{ch}",
                        v.index,
                        img.width(),
                        img.height(),
                        img.channels()
                    )))
                } else {
                    Ok(())
                }
            };
            check(&v.image, "image", 3)?;
            if let Some(m) = &v.mask {
                check(m, "mask", 1)?;
            }
            if let Some(d) = &v.glass_depth {
                check(d, "glass depth", 1)?;
            }
            if let Some(d) = &v.background_depth {
                check(d, "background depth", 1)?;
            }
        }
        Ok(())
    }

    /// Loads a dataset directory (see the module docs for the layout).
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cameras = load_cameras(dir.join("cameras.txt"))?;
        let split = match read_optional(&dir.join("split.txt"))? {
            Some(text) => Some(parse_split(&text, &dir.join("split.txt"))?),
            None => None,
        };
        let mut views = Vec::with_capacity(cameras.len());
        for (index, camera) in cameras {
            let image = Image::load_png(dir.join(format!("images/{index:03}.png")), 3)?;
            let mask_path = dir.join(format!("masks/{index:03}.png"));
            let mask = if mask_path.exists() {
                Some(Image::load_png(&mask_path, 1)?.map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
            } else {
                None
            };
            let depth = |name: &str| -> Result<Option<Image>> {
                let p = dir.join(format!("depths/{index:03}_{name}.f32"));
                if p.exists() {
                    Image::load_raw_f32(&p).map(Some)
                } else {
                    Ok(None)
                }
            };
            let test = match &split {
                Some(s) => *s.iter().find(|(i, _)| *i == index).map(|(_, t)| t).ok_or_else(|| {
                    Error::Format(format!("split.txt has no entry for view {index}"))
                })?,
                None => index % TEST_EVERY == TEST_EVERY - 1,
            };
            views.push(View {
                index,
                camera,
                image,
                mask,
                glass_depth: depth("glass")?,
                background_depth: depth("background")?,
                test,
            });
        }
        let points = match read_optional(&dir.join("points.txt"))? {
            Some(text) => parse_points(&text, &dir.join("points.txt"))?,
            None => Vec::new(),
        };
        let spec = match read_optional(&dir.join("spec.txt"))? {
            Some(text) => Some(SceneSpec::from_kv(&KeyValues::parse(&text)?)?),
            None => None,
        };
        let ds = Self { views, points, spec };
        ds.validate()?;
        Ok(ds)
    }
}

fn synthesize_frames(oracle: &Oracle) -> Result<Vec<ReferenceFrame>> {
    oracle
        .spec
        .cameras()?
        .iter()
        .map(|c| oracle.trace_reference(c))
        .collect()
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn format_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}:{line}: {msg}", path.display()))
}

/// Reads a camera file; also the importer for externally calibrated captures.
pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<(usize, Camera)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, path)
}

pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<(usize, Camera)>> {
    let mut out: Vec<(usize, Camera)> = Vec::new();
    for (line, l) in data_lines(text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 19 {
            return Err(format_err(path, line, format!("expected 19 fields, got {}", fields.len())));
        }
        let index: usize = fields[0].parse().map_err(|_| format_err(path, line, "bad view index"))?;
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(path, line, format!("bad number `{}`", fields[i])))
        };
        let size = |i: usize| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| format_err(path, line, format!("bad image size `{}`", fields[i])))
        };
        let r: Vec<f64> = (7..16).map(num).collect::<Result<_>>()?;
        let camera = Camera {
            fx: num(1)?,
            fy: num(2)?,
            cx: num(3)?,
            cy: num(4)?,
            width: size(5)?,
            height: size(6)?,
            rotation: Matrix3::from_row_slice(&r),
            translation: Vector3::new(num(16)?, num(17)?, num(18)?),
        };
        camera.validate().map_err(|e| format_err(path, line, e))?;
        if out.iter().any(|(i, _)| *i == index) {
            return Err(format_err(path, line, format!("duplicate view {index}")));
        }
        out.push((index, camera));
    }
    if out.is_empty() {
        return Err(Error::Format(format!("{}: no cameras", path.display())));
    }
    Ok(out)
}

pub fn format_cameras(cameras: &[(usize, Camera)]) -> String {
    let mut s = String::from(
        "# index fx fy cx cy width height r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2\n\
         # world-to-camera rotation (row-major) and translation; camera looks down +z\n",
    );
    for (i, c) in cameras {
        let _ = write!(s, "{i} {} {} {} {} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height);
        for r in 0..3 {
            for k in 0..3 {
                let _ = write!(s, " {}", c.rotation[(r, k)]);
            }
        }
        let t = &c.translation;
        let _ = writeln!(s, " {} {} {}", t.x, t.y, t.z);
    }
    s
}

fn parse_split(text: &str, path: &Path) -> Result<Vec<(usize, bool)>> {
    data_lines(text)
        .map(|(line, l)| {
            let mut it = l.split_whitespace();
            let index = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format_err(path, line, "bad view index"))?;
            let test = match it.next() {
                Some("test") => true,
                Some("train") => false,
                other => return Err(format_err(path, line, format!("expected train/test, got {other:?}"))),
            };
            Ok((index, test))
        })
        .collect()
}

fn parse_points(text: &str, path: &Path) -> Result<Vec<InitPoint>> {
    data_lines(text)
        .map(|(line, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 6 && f.len() != 7 {
                return Err(format_err(path, line, "expected `x y z r g b [kind]`"));
            }
            let v: Vec<f64> = f[..6]
                .iter()
                .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| format_err(path, line, "bad number"))?;
            let kind = match f.get(6) {
                Some(k) => PointKind::parse(k).ok_or_else(|| format_err(path, line, format!("unknown kind `{k}`")))?,
                None => PointKind::Random,
            };
            Ok(InitPoint {
                position: [v[0], v[1], v[2]],
                color: [v[3], v[4], v[5]],
                kind,
            })
        })
        .collect()
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn depth_preview(d: &Image) -> Image {
    let finite = d.data().iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    d.map(|v| if v.is_finite() { 1.0 - 0.9 * (v - lo) / span } else { 0.0 })
}

/// Writes `spec` ray-traced from every camera as a dataset directory.
/// Output is a deterministic function of the spec (including its seed).
pub fn emit_dataset(spec: &SceneSpec, out: impl AsRef<Path>) -> Result<Dataset> {
    let out = out.as_ref();
    for sub in ["images", "masks", "layers", "depths"] {
        let p = out.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(p, e))?;
    }
    let oracle = Oracle::new(spec.clone())?;
    let frames = synthesize_frames(&oracle)?;
    let mut split = String::new();
    for (i, f) in frames.iter().enumerate() {
        f.image.save_png(out.join(format!("images/{i:03}.png")))?;
        f.mask.save_png(out.join(format!("masks/{i:03}.png")))?;
        f.reflection.save_png(out.join(format!("layers/{i:03}_reflection.png")))?;
        f.transmission.save_png(out.join(format!("layers/{i:03}_transmission.png")))?;
        for (name, d) in [("glass", &f.glass_depth), ("background", &f.background_depth)] {
            depth_preview(d).save_png(out.join(format!("depths/{i:03}_{name}.png")))?;
            d.save_raw_f32(out.join(format!("depths/{i:03}_{name}.f32")))?;
        }
        let _ = writeln!(split, "{i} {}", if spec.is_test_view(i) { "test" } else { "train" });
    }
    let cams: Vec<(usize, Camera)> = frames.iter().enumerate().map(|(i, f)| (i, f.camera.clone())).collect();
    write(out.join("cameras.txt"), format_cameras(&cams))?;
    write(out.join("split.txt"), split)?;
    let mut pts = String::from("# x y z r g b kind\n");
    for p in oracle.init_points() {
        let [x, y, z] = p.position;
        let [r, g, b] = p.color;
        let _ = writeln!(pts, "{x} {y} {z} {r} {g} {b} {}", p.kind.name());
    }
    write(out.join("points.txt"), pts)?;
    write(out.join("spec.txt"), spec.to_kv().to_text())?;
    Ok(Dataset::from_frames(spec, &oracle, frames))
}

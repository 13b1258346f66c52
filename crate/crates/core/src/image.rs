//! Dense float images and 8-bit PNG / raw-float file helpers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, interleaved-channel image of `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "buffer of {} samples for {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Sample with coordinates clamped to the image (replicate padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, f64> {
        let stride = self.width * self.channels;
        self.data.chunks_mut(stride.max(1))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Single channel `c` as its own image.
    pub fn channel(&self, c: usize) -> Image {
        Image::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixel_count() * 3);
        for i in 0..self.pixel_count() {
            let p = self.pixel(i);
            for c in 0..3 {
                let v = if self.channels == 1 { p[0] } else { p[c.min(self.channels - 1)] };
                out.push(quantize(v));
            }
        }
        out
    }

    /// Writes an 8-bit PNG; one-channel images become grayscale.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let result = if self.channels == 1 {
            let buf: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
            image::save_buffer(
                path,
                &buf,
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::L8,
            )
        } else {
            image::save_buffer(
                path,
                &self.to_rgb8(),
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::Rgb8,
            )
        };
        result.map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Loads a PNG as RGB (`channels == 3`) or luma (`channels == 1`) in `[0, 1]`.
    pub fn load_png(path: impl AsRef<Path>, channels: usize) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<f64> = match channels {
            1 => img.to_luma8().into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
            3 => img.to_rgb8().into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
            n => {
                return Err(Error::InvalidParameter(format!(
                    "cannot load png with {n} channels"
                )))
            }
        };
        Image::from_vec(w, h, channels, data)
    }

    /// Raw little-endian `f32` dump: `u32` width, `u32` height, `u32` channels, samples.
    pub fn save_raw_f32(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(12 + self.data.len() * 4);
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw_f32(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = || Error::Format(format!("{}: truncated raw float image", path.display()));
        if bytes.len() < 12 {
            return Err(bad());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (w, h, c) = (word(0), word(4), word(8));
        if bytes.len() != 12 + w * h * c * 4 {
            return Err(bad());
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Image::from_vec(w, h, c, data)
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_float_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.f32");
        let img = Image::from_fn(5, 3, 1, |x, y, _| x as f64 * 0.5 + y as f64);
        img.save_raw_f32(&p).unwrap();
        assert_eq!(Image::load_raw_f32(&p).unwrap(), img);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Image::new(2, 2, 3);
        let b = Image::new(2, 3, 3);
        assert!(matches!(a.check_shape(&b, "x"), Err(Error::DimensionMismatch(_))));
    }
}

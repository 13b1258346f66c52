//! Pinhole camera. Camera space looks down `+z`, image `x` right, `y` down;
//! depth is camera-space `z`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with a symmetric horizontal field of view.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera eye equals target".into()))?;
        let down = -(up - z * up.dot(&z));
        let y = down
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera up is parallel to view".into()))?;
        let x = y.cross(&z);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        let cam = Camera {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            rotation,
            translation: -(rotation * eye),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("empty image size".into()));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        if !(err <= 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "camera rotation not orthonormal (error {err:e})"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite camera translation".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing axis (`+z` of camera space) in world space.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Unit world-space direction through the center of pixel `(px, py)`.
    pub fn ray_dir(&self, px: usize, py: usize) -> Vector3<f64> {
        self.ray_dir_at(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Unit world-space direction through continuous image coordinates.
    pub fn ray_dir_at(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * d).normalize()
    }

    /// Image coordinates and depth of a world point, if in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// Camera-space point at pixel center `(px, py)` with the given depth.
    pub fn unproject_camera(&self, px: f64, py: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (px + 0.5 - self.cx) / self.fx * depth,
            (py + 0.5 - self.cy) / self.fy * depth,
            depth,
        )
    }
}

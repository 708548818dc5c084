//! Pinhole camera model used by the splatting renderer.

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// Look-at pinhole camera. View space is right-handed with x to the right,
/// y down in the image, and z pointing from the camera into the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub up: Vector3<f64>,
    /// Vertical field of view in degrees, in (0, 180).
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    pub fn new(
        position: Vector3<f64>,
        look_at: Vector3<f64>,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Self {
        Camera {
            position,
            look_at,
            up: Vector3::new(0.0, 1.0, 0.0),
            fov_y,
            width,
            height,
            near: 0.05,
        }
    }

    /// Camera on an orbit around `target`: azimuth/elevation in degrees,
    /// azimuth 0 looking down the -z axis toward the target.
    pub fn orbit(
        target: Vector3<f64>,
        radius: f64,
        azimuth_deg: f64,
        elevation_deg: f64,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let az = azimuth_deg.to_radians();
        let el = elevation_deg.to_radians();
        let dir = Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        Camera::new(target + radius * dir, target, fov_y, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(Error::Validation(format!("fov_y {} outside (0,180)", self.fov_y)));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::Validation("camera dimensions must be >= 1".into()));
        }
        if (self.position - self.look_at).norm() < 1e-12 {
            return Err(Error::Validation("camera position equals look_at".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::Validation("near plane must be positive".into()));
        }
        Ok(())
    }

    /// World-to-view rotation: rows are the camera right, down, forward axes.
    pub fn view_rotation(&self) -> Matrix3<f64> {
        let forward = (self.look_at - self.position).normalize();
        let mut up = self.up;
        if forward.cross(&up).norm() < 1e-9 {
            up = Vector3::new(1.0, 0.0, 0.0);
            if forward.cross(&up).norm() < 1e-9 {
                up = Vector3::new(0.0, 0.0, 1.0);
            }
        }
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
    }

    pub fn to_view(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.view_rotation() * (p - self.position)
    }

    /// Focal length in pixels (square pixels, from the vertical FOV).
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y.to_radians()).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 * 0.5, self.height as f64 * 0.5)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera rigid transform `x_c = R x_w + t`.
///
/// Pixel `(i, j)` samples the image plane at coordinates `(i, j)`, so the
/// principal point `(W/2, H/2)` falls exactly on pixel `(W/2, H/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        (fx, fy): (f64, f64),
        (cx, cy): (f64, f64),
        (width, height): (usize, usize),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Identity pose, shared focal, principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            (focal, focal),
            (width as f64 / 2.0, height as f64 / 2.0),
            (width, height),
            Matrix3::identity(),
            Vector3::zeros(),
        )
    }

    pub fn with_pose(mut self, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        self.rotation = rotation;
        self.translation = translation;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("camera has non-finite parameters".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("camera image size must be non-zero".into()));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if ortho > 1e-6 || (self.rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(
                "camera rotation is not a proper rotation matrix".into(),
            ));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> [f64; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }

    /// Unit-depth ray through pixel coordinates `(u, v)` in the camera frame.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

//! Pinhole camera with a rigid world-to-camera transform.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::SceneError;

/// Pinhole camera. `rotation` maps world directions into the camera frame
/// (`+x` right, `+y` down, `+z` forward); `position` is the optical center in
/// world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraPoseJson", into = "CameraPoseJson")]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Wire format: `{"position":[..],"rotation":[[..3x3..]],"fx":..,"fy":..,
/// "cx":..,"cy":..,"width":..,"height":..}`.
#[derive(Serialize, Deserialize)]
struct CameraPoseJson {
    position: [f64; 3],
    rotation: [[f64; 3]; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl From<CameraPose> for CameraPoseJson {
    fn from(c: CameraPose) -> Self {
        let r = c.rotation;
        CameraPoseJson {
            position: c.position.into(),
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl TryFrom<CameraPoseJson> for CameraPose {
    type Error = SceneError;

    fn try_from(j: CameraPoseJson) -> Result<Self, SceneError> {
        let cam = CameraPose {
            position: Vector3::from(j.position),
            rotation: Matrix3::from_fn(|r, c| j.rotation[r][c]),
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            width: j.width,
            height: j.height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Result of projecting a world point. `pixel` is meaningful only when the
/// point is in front of the camera (`depth > 0`).
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub pixel: [f64; 2],
    pub depth: f64,
}

impl Projection {
    #[inline]
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

impl CameraPose {
    pub fn new(
        position: Vector3<f64>,
        rotation: Matrix3<f64>,
        (fx, fy, cx, cy): (f64, f64, f64, f64),
        (width, height): (u32, u32),
    ) -> Result<Self, SceneError> {
        let cam = Self {
            position,
            rotation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let rtr = self.rotation.transpose() * self.rotation;
        let err = (rtr - Matrix3::identity()).abs().max();
        if err > 1e-9 {
            return Err(SceneError::InvalidCamera(format!(
                "rotation not orthonormal (|R^T R - I| = {err:.3e})"
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::InvalidCamera("fx, fy must be > 0".into()));
        }
        if !(self.cx > 0.0 && self.cx < f64::from(self.width)) {
            return Err(SceneError::InvalidCamera("cx out of image bounds".into()));
        }
        if !(self.cy > 0.0 && self.cy < f64::from(self.height)) {
            return Err(SceneError::InvalidCamera("cy out of image bounds".into()));
        }
        Ok(())
    }

    /// World point -> camera frame.
    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.position)
    }

    /// Camera-frame point -> world.
    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation.transpose() * p
    }

    /// Project a world point. Points with `depth <= 0` are behind the camera;
    /// the pixel is NaN in that case, never a crash.
    pub fn project(&self, world: &Vector3<f64>) -> Projection {
        let c = self.world_to_camera(world);
        if c.z > 0.0 {
            Projection {
                pixel: [
                    self.fx * c.x / c.z + self.cx,
                    self.fy * c.y / c.z + self.cy,
                ],
                depth: c.z,
            }
        } else {
            Projection {
                pixel: [f64::NAN, f64::NAN],
                depth: c.z,
            }
        }
    }

    /// Inverse of [`project`](Self::project) at a given camera-frame depth.
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Vector3<f64> {
        let c = Vector3::new(
            (pixel[0] - self.cx) / self.fx * depth,
            (pixel[1] - self.cy) / self.fy * depth,
            depth,
        );
        self.camera_to_world(&c)
    }

    /// Camera forward axis in world coordinates.
    #[inline]
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::new(0.0, 0.0, 1.0)
    }

    /// Geodesic rotation angle to another pose, in radians.
    pub fn rotation_angle_to(&self, other: &CameraPose) -> f64 {
        let rel = self.rotation * other.rotation.transpose();
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    #[inline]
    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Same pose with intrinsics rescaled to a different resolution.
    pub fn scaled_to(&self, width: u32, height: u32) -> CameraPose {
        let sx = f64::from(width) / f64::from(self.width);
        let sy = f64::from(height) / f64::from(self.height);
        CameraPose {
            position: self.position,
            rotation: self.rotation,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// World-to-camera rotation for a camera at `eye` looking at `target` with
/// the world `+y` axis as up reference. Falls back to `+z` as the up
/// reference when the view direction is vertical.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Matrix3<f64> {
    let f = (target - eye).normalize();
    let mut up = Vector3::new(0.0, 1.0, 0.0);
    if f.cross(&up).norm() < 1e-9 {
        up = Vector3::new(0.0, 0.0, 1.0);
    }
    let r = f.cross(&up).normalize();
    let d = f.cross(&r);
    Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()])
}

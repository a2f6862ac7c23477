//! Core geometric data model: the object-box layout, the room shell, cameras,
//! the occupancy grid, and analytic ray casting against all of them.
//!
//! Conventions used throughout the crate:
//!
//! - World frame is right-handed with `+y` up. The floor sits at `y = 0`,
//!   the ceiling at `y = ceiling_height`. Box yaw rotates about `+y`.
//! - Camera frame is `+x` right, `+y` down, `+z` forward. `rotation` maps
//!   world directions into the camera frame.
//! - Depth always means camera-frame `z`, not Euclidean ray length.

mod camera;
mod layout;
mod occupancy;
mod ray;

pub use camera::{look_at, CameraPose, Projection};
pub use layout::{BackgroundShell, OrientedBox, SceneLayout, CLASS_CEILING, CLASS_FLOOR, CLASS_WALL, FIRST_OBJECT_CLASS};
pub(crate) use layout::rotate_y;
pub use occupancy::{build_occupancy, OccupancyGrid};
pub use ray::{
    box_intervals, cast_ray, cast_world_ray, face_axis_sign, intersect_box, intersect_shell,
    pixel_ray, BoxIntersection, Ray, RayHit, SurfaceKind, T_EPS,
};

use thiserror::Error;

/// Validation and schema errors for scene-model types.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid box {index}: {reason}")]
    InvalidBox { index: usize, reason: String },
    #[error("invalid background shell: {0}")]
    InvalidShell(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
}

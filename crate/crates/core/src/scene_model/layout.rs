//! Layout types: oriented boxes, the extruded room shell, and the scene
//! container, with the JSON schema used by every tool in the workspace.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::SceneError;

/// Reserved class id for floor surfaces.
pub const CLASS_FLOOR: u16 = 1;
/// Reserved class id for wall surfaces.
pub const CLASS_WALL: u16 = 2;
/// Reserved class id for ceiling surfaces.
pub const CLASS_CEILING: u16 = 3;
/// Object classes start here; 1..=3 are reserved for the background.
pub const FIRST_OBJECT_CLASS: u16 = 4;

/// Normalize an angle to `[-pi, pi)`.
pub(crate) fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw.rem_euclid(2.0 * PI);
    if a >= PI {
        a -= 2.0 * PI;
    }
    a
}

/// A class-labeled box with full extents `size`, world-frame center
/// `location`, and yaw about the world up axis.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OrientedBox {
    pub class_id: u16,
    pub size: [f64; 3],
    pub location: [f64; 3],
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(class_id: u16, size: [f64; 3], location: [f64; 3], yaw: f64) -> Self {
        Self {
            class_id,
            size,
            location,
            yaw: normalize_yaw(yaw),
        }
    }

    pub fn validate(&self, index: usize) -> Result<(), SceneError> {
        let fail = |reason: &str| SceneError::InvalidBox {
            index,
            reason: reason.to_string(),
        };
        if self.class_id < 1 {
            return Err(fail("class_id must be >= 1"));
        }
        if self.size.iter().any(|s| !(*s > 0.0)) {
            return Err(fail("size components must be > 0"));
        }
        if !self.location.iter().all(|v| v.is_finite()) || !self.yaw.is_finite() {
            return Err(fail("location and yaw must be finite"));
        }
        if !(-PI..PI).contains(&self.yaw) {
            return Err(fail("yaw must be normalized to [-pi, pi)"));
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.location)
    }

    #[inline]
    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::from(self.size) * 0.5
    }

    /// World point -> box-local frame (yaw undone, center at origin).
    #[inline]
    pub fn world_to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center();
        rotate_y(&d, -self.yaw)
    }

    /// Box-local point -> world frame.
    #[inline]
    pub fn local_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.center() + rotate_y(p, self.yaw)
    }

    /// Rotate a world direction into the box-local frame.
    #[inline]
    pub fn dir_to_local(&self, d: &Vector3<f64>) -> Vector3<f64> {
        rotate_y(d, -self.yaw)
    }

    /// Signed 2D distance from an (x, z) point to the box footprint;
    /// zero inside or on the footprint rectangle.
    pub fn footprint_distance(&self, p: Vector2<f64>) -> f64 {
        let local = self.footprint_local(p);
        let h = self.half_extents();
        let dx = (local.x.abs() - h.x).max(0.0);
        let dz = (local.y.abs() - h.z).max(0.0);
        (dx * dx + dz * dz).sqrt()
    }

    pub fn footprint_contains(&self, p: Vector2<f64>) -> bool {
        let local = self.footprint_local(p);
        let h = self.half_extents();
        local.x.abs() <= h.x && local.y.abs() <= h.z
    }

    fn footprint_local(&self, p: Vector2<f64>) -> Vector2<f64> {
        let dx = p.x - self.location[0];
        let dz = p.y - self.location[2];
        let (s, c) = (-self.yaw).sin_cos();
        Vector2::new(c * dx + s * dz, -s * dx + c * dz)
    }
}

/// Rotate about the world `+y` axis.
#[inline]
pub(crate) fn rotate_y(v: &Vector3<f64>, yaw: f64) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x + s * v.z, v.y, -s * v.x + c * v.z)
}

/// Floor polygon extruded to the ceiling: floor at `y = 0`, vertical walls on
/// every polygon edge, flat ceiling at `y = ceiling_height`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackgroundShell {
    /// Counter-clockwise simple polygon in the (x, z) plane.
    pub floor_polygon: Vec<[f64; 2]>,
    pub ceiling_height: f64,
}

impl BackgroundShell {
    pub fn rectangle(width: f64, depth: f64, ceiling_height: f64) -> Self {
        Self {
            floor_polygon: vec![
                [0.0, 0.0],
                [width, 0.0],
                [width, depth],
                [0.0, depth],
            ],
            ceiling_height,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.floor_polygon.len() < 3 {
            return Err(SceneError::InvalidShell("polygon needs >= 3 vertices".into()));
        }
        if !(self.ceiling_height > 0.0) {
            return Err(SceneError::InvalidShell("ceiling_height must be > 0".into()));
        }
        if !self
            .floor_polygon
            .iter()
            .all(|v| v[0].is_finite() && v[1].is_finite())
        {
            return Err(SceneError::InvalidShell("polygon vertices must be finite".into()));
        }
        if self.is_self_intersecting() {
            return Err(SceneError::InvalidShell("polygon is self-intersecting".into()));
        }
        Ok(())
    }

    fn is_self_intersecting(&self) -> bool {
        let n = self.floor_polygon.len();
        let seg = |i: usize| {
            (
                Vector2::from(self.floor_polygon[i]),
                Vector2::from(self.floor_polygon[(i + 1) % n]),
            )
        };
        for i in 0..n {
            for j in (i + 1)..n {
                // Skip adjacent edges (they share an endpoint).
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = seg(i);
                let (c, d) = seg(j);
                if segments_intersect(a, b, c, d) {
                    return true;
                }
            }
        }
        false
    }

    /// Even-odd point-in-polygon in the (x, z) plane.
    pub fn contains_footprint(&self, p: Vector2<f64>) -> bool {
        let mut inside = false;
        let n = self.floor_polygon.len();
        for i in 0..n {
            let a = self.floor_polygon[i];
            let b = self.floor_polygon[(i + 1) % n];
            if (a[1] > p.y) != (b[1] > p.y) {
                let x = a[0] + (p.y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Distance to the nearest polygon edge in the (x, z) plane.
    pub fn boundary_distance(&self, p: Vector2<f64>) -> f64 {
        let n = self.floor_polygon.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = Vector2::from(self.floor_polygon[i]);
            let b = Vector2::from(self.floor_polygon[(i + 1) % n]);
            best = best.min(point_segment_distance(p, a, b));
        }
        best
    }

    /// 3D point strictly inside the extruded volume.
    pub fn contains_point(&self, p: &Vector3<f64>) -> bool {
        p.y > 0.0 && p.y < self.ceiling_height && self.contains_footprint(Vector2::new(p.x, p.z))
    }

    /// Axis-aligned bounds of the shell volume.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut min = Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.floor_polygon {
            min.x = min.x.min(v[0]);
            min.y = min.y.min(v[1]);
            max.x = max.x.max(v[0]);
            max.y = max.y.max(v[1]);
        }
        (
            Vector3::new(min.x, 0.0, min.y),
            Vector3::new(max.x, self.ceiling_height, max.y),
        )
    }

    pub fn centroid(&self) -> Vector2<f64> {
        let n = self.floor_polygon.len() as f64;
        let sum = self
            .floor_polygon
            .iter()
            .fold(Vector2::zeros(), |acc, v| acc + Vector2::from(*v));
        sum / n
    }
}

fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn segments_intersect(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>, d: Vector2<f64>) -> bool {
    let cross = |u: Vector2<f64>, v: Vector2<f64>| u.x * v.y - u.y * v.x;
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// The full scene layout: object boxes plus the background shell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneLayout {
    pub boxes: Vec<OrientedBox>,
    pub shell: BackgroundShell,
    /// Class-id -> human-readable name. Ids 1/2/3 are reserved for
    /// floor/wall/ceiling; object classes start at 4.
    pub class_names: BTreeMap<u16, String>,
}

impl SceneLayout {
    pub fn new(
        boxes: Vec<OrientedBox>,
        shell: BackgroundShell,
        class_names: BTreeMap<u16, String>,
    ) -> Result<Self, SceneError> {
        let layout = Self {
            boxes,
            shell,
            class_names,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.shell.validate()?;
        for (i, b) in self.boxes.iter().enumerate() {
            b.validate(i)?;
            let c = Vector2::new(b.location[0], b.location[2]);
            let inside = self.shell.contains_footprint(c) || self.shell.boundary_distance(c) <= 1e-9;
            if !inside {
                return Err(SceneError::InvalidBox {
                    index: i,
                    reason: "box center outside the shell footprint".into(),
                });
            }
        }
        Ok(())
    }

    /// Class id rendered for a surface (boxes carry their own id).
    pub fn surface_class(&self, kind: &super::SurfaceKind) -> u16 {
        match kind {
            super::SurfaceKind::BoxFace { box_index, .. } => self.boxes[*box_index].class_id,
            super::SurfaceKind::Floor => CLASS_FLOOR,
            super::SurfaceKind::Wall { .. } => CLASS_WALL,
            super::SurfaceKind::Ceiling => CLASS_CEILING,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, SceneError> {
        let layout: SceneLayout = serde_json::from_str(json)
            .map_err(|e| SceneError::InvalidLayout(format!("schema: {e}")))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serialization cannot fail")
    }
}

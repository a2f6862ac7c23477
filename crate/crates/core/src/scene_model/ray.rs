//! Analytic ray casting against the layout: box slab intersections and the
//! extruded-shell background.

use nalgebra::{Vector2, Vector3};

use super::{CameraPose, SceneLayout};

/// Rays in front of the camera start at this parameter; hits closer than
/// this are treated as degenerate and dropped.
pub const T_EPS: f64 = 1e-9;

/// A ray whose direction is scaled so the parameter equals camera-frame
/// depth when built by [`pixel_ray`].
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    #[inline]
    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

/// Ray through a continuous pixel coordinate. The direction has unit
/// camera-frame `z`, so the ray parameter is exactly the depth.
pub fn pixel_ray(camera: &CameraPose, pixel: [f64; 2]) -> Ray {
    let d_cam = Vector3::new(
        (pixel[0] - camera.cx) / camera.fx,
        (pixel[1] - camera.cy) / camera.fy,
        1.0,
    );
    Ray {
        origin: camera.position,
        dir: camera.rotation.transpose() * d_cam,
    }
}

/// Which surface a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    /// Entry face of an object box. Faces are numbered in the box-local
    /// frame: 1:+x 2:-x 3:+y 4:-y 5:+z 6:-z.
    BoxFace { box_index: usize, face: u8 },
    Floor,
    Wall { edge_index: usize },
    Ceiling,
}

impl SurfaceKind {
    #[inline]
    pub fn is_background(&self) -> bool {
        !matches!(self, SurfaceKind::BoxFace { .. })
    }
}

/// One ray-surface intersection. `local_uv` is present only for box faces:
/// coordinates in `[-1, 1]^2` along the face's two in-plane local axes.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub depth: f64,
    pub kind: SurfaceKind,
    pub local_uv: Option<[f64; 2]>,
    pub world_point: Vector3<f64>,
}

/// Full slab intersection of a ray with one box, in front of the origin.
#[derive(Debug, Clone, Copy)]
pub struct BoxIntersection {
    pub t_enter: f64,
    pub t_exit: f64,
    /// Face crossed at `t_enter` (1..=6). Meaningful only when the entry is
    /// in front of the ray origin.
    pub enter_face: u8,
    pub enter_uv: [f64; 2],
}

/// Slab test in the box-local frame. Returns `None` when the ray misses or
/// the whole box is behind the origin.
pub fn intersect_box(b: &super::OrientedBox, ray: &Ray) -> Option<BoxIntersection> {
    let o = b.world_to_local(&ray.origin);
    let d = b.dir_to_local(&ray.dir);
    let h = b.half_extents();

    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0usize;
    let mut near_sign = 1.0f64;

    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a].abs() > h[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let mut t0 = (-h[a] - o[a]) * inv;
        let mut t1 = (h[a] - o[a]) * inv;
        let mut sign = -1.0; // entering through the -axis face
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
            sign = 1.0;
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = a;
            near_sign = sign;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_far <= T_EPS {
        return None;
    }

    // Degenerate: direction parallel to every slab it starts inside.
    if !t_near.is_finite() {
        return None;
    }

    let face = face_index(near_axis, near_sign);
    let hit = o + d * t_near;
    let (a1, a2) = face_plane_axes(near_axis);
    let uv = [hit[a1] / h[a1], hit[a2] / h[a2]];

    Some(BoxIntersection {
        t_enter: t_near,
        t_exit: t_far,
        enter_face: face,
        enter_uv: uv,
    })
}

/// Face numbering: 1:+x 2:-x 3:+y 4:-y 5:+z 6:-z.
#[inline]
fn face_index(axis: usize, sign: f64) -> u8 {
    let base = (axis as u8) * 2;
    if sign > 0.0 {
        base + 1
    } else {
        base + 2
    }
}

/// In-plane axes for a face on `axis`, in cyclic order: x->(y,z), y->(z,x),
/// z->(x,y). Shared by the rasterizer so (u, v) conventions stay fixed.
#[inline]
pub(crate) fn face_plane_axes(axis: usize) -> (usize, usize) {
    ((axis + 1) % 3, (axis + 2) % 3)
}

/// Axis and sign of a face index (inverse of `face_index`).
pub fn face_axis_sign(face: u8) -> (usize, f64) {
    debug_assert!((1..=6).contains(&face));
    let axis = usize::from((face - 1) / 2);
    let sign = if face % 2 == 1 { 1.0 } else { -1.0 };
    (axis, sign)
}

/// Nearest background (floor/wall/ceiling) intersection in front of the
/// origin, if any.
pub fn intersect_shell(layout: &SceneLayout, ray: &Ray) -> Option<(f64, SurfaceKind)> {
    let shell = &layout.shell;
    let mut best: Option<(f64, SurfaceKind)> = None;
    let mut consider = |t: f64, kind: SurfaceKind| {
        if t > T_EPS && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, kind));
        }
    };

    // Floor (y = 0) and ceiling (y = ceiling_height).
    if ray.dir.y.abs() > 1e-15 {
        let t_floor = -ray.origin.y / ray.dir.y;
        let p = ray.point_at(t_floor);
        if shell.contains_footprint(Vector2::new(p.x, p.z)) {
            consider(t_floor, SurfaceKind::Floor);
        }
        let t_ceil = (shell.ceiling_height - ray.origin.y) / ray.dir.y;
        let p = ray.point_at(t_ceil);
        if shell.contains_footprint(Vector2::new(p.x, p.z)) {
            consider(t_ceil, SurfaceKind::Ceiling);
        }
    }

    // Vertical wall quads over each polygon edge.
    let n = shell.floor_polygon.len();
    let o = Vector2::new(ray.origin.x, ray.origin.z);
    let d = Vector2::new(ray.dir.x, ray.dir.z);
    for i in 0..n {
        let a = Vector2::from(shell.floor_polygon[i]);
        let b = Vector2::from(shell.floor_polygon[(i + 1) % n]);
        let e = b - a;
        let den = d.x * e.y - d.y * e.x;
        if den.abs() < 1e-15 {
            continue;
        }
        let ao = a - o;
        let t = (ao.x * e.y - ao.y * e.x) / den;
        let s = (ao.x * d.y - ao.y * d.x) / den;
        if !(0.0..=1.0).contains(&s) {
            continue;
        }
        let y = ray.origin.y + t * ray.dir.y;
        if y < 0.0 || y > shell.ceiling_height {
            continue;
        }
        consider(t, SurfaceKind::Wall { edge_index: i });
    }

    best
}

/// All box entry/exit parameter intervals along the ray, clipped to the
/// front of the origin, with the owning box index. Used by the epipolar
/// masks, where exit depths matter.
pub fn box_intervals(layout: &SceneLayout, ray: &Ray) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for (i, b) in layout.boxes.iter().enumerate() {
        if let Some(hit) = intersect_box(b, ray) {
            let lo = hit.t_enter.max(T_EPS);
            if lo <= hit.t_exit {
                out.push((i, lo, hit.t_exit));
            }
        }
    }
    out
}

/// Casts the ray through `pixel` and returns every box entry hit in front of
/// the camera plus the nearest background hit, sorted by depth (ties broken
/// by ascending box index). The list stops at the background hit: anything
/// behind the floor/wall/ceiling surface is discarded. Only box *entry*
/// faces count; exit faces are not reported.
pub fn cast_ray(layout: &SceneLayout, camera: &CameraPose, pixel: [f64; 2]) -> Vec<RayHit> {
    let ray = pixel_ray(camera, pixel);
    cast_world_ray(layout, &ray)
}

/// [`cast_ray`] on a prebuilt ray (parameter = depth).
pub fn cast_world_ray(layout: &SceneLayout, ray: &Ray) -> Vec<RayHit> {
    let background = intersect_shell(layout, ray);
    let t_bg = background.map_or(f64::INFINITY, |(t, _)| t);

    let mut hits: Vec<RayHit> = Vec::new();
    for (i, b) in layout.boxes.iter().enumerate() {
        if let Some(ix) = intersect_box(b, ray) {
            if ix.t_enter > T_EPS && ix.t_enter <= t_bg {
                hits.push(RayHit {
                    depth: ix.t_enter,
                    kind: SurfaceKind::BoxFace {
                        box_index: i,
                        face: ix.enter_face,
                    },
                    local_uv: Some(ix.enter_uv),
                    world_point: ray.point_at(ix.t_enter),
                });
            }
        }
    }
    hits.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then_with(|| box_index_of(a).cmp(&box_index_of(b)))
    });

    if let Some((t, kind)) = background {
        hits.push(RayHit {
            depth: t,
            kind,
            local_uv: None,
            world_point: ray.point_at(t),
        });
    }
    hits
}

fn box_index_of(h: &RayHit) -> usize {
    match h.kind {
        SurfaceKind::BoxFace { box_index, .. } => box_index,
        _ => usize::MAX,
    }
}

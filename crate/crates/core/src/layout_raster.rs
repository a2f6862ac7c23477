//! Image-based layout conditions: multi-layer semantics/depth and the
//! local/global spatial embeddings, rendered per view.
//!
//! Rays are cast through pixel centers `(x + 0.5, y + 0.5)`. Rendering is
//! a pure per-pixel function, parallelized over rows; results are
//! bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::scene_model::{cast_ray, CameraPose, SceneLayout, SurfaceKind};

/// Per-view condition image. All planes share the resolution `W x H`;
/// `sem`/`depth` hold `layers` values per pixel, `local`/`global` three.
///
/// Storage is planar to match the on-disk layout: `sem` and `depth` are
/// `layers` row-major planes, `local`/`global` are three row-major channel
/// planes. Zero is the empty sentinel in every plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStack {
    pub width: usize,
    pub height: usize,
    pub layers: usize,
    /// Class ids, layer-major: `sem[layer * W * H + y * W + x]`.
    pub sem: Vec<u16>,
    /// Depths in meters, same indexing as `sem`.
    pub depth: Vec<f32>,
    /// Channel planes (u, v, face index), each `W * H`.
    pub local: Vec<f32>,
    /// Channel planes (world x, y, z), each `W * H`.
    pub global: Vec<f32>,
}

impl ConditionStack {
    pub fn zeros(width: usize, height: usize, layers: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            layers,
            sem: vec![0; n * layers],
            depth: vec![0.0; n * layers],
            local: vec![0.0; n * 3],
            global: vec![0.0; n * 3],
        }
    }

    #[inline]
    fn pix(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn sem_at(&self, x: usize, y: usize, layer: usize) -> u16 {
        self.sem[layer * self.width * self.height + self.pix(x, y)]
    }

    #[inline]
    pub fn depth_at(&self, x: usize, y: usize, layer: usize) -> f32 {
        self.depth[layer * self.width * self.height + self.pix(x, y)]
    }

    #[inline]
    pub fn local_at(&self, x: usize, y: usize) -> [f32; 3] {
        let n = self.width * self.height;
        let i = self.pix(x, y);
        [self.local[i], self.local[n + i], self.local[2 * n + i]]
    }

    #[inline]
    pub fn global_at(&self, x: usize, y: usize) -> [f32; 3] {
        let n = self.width * self.height;
        let i = self.pix(x, y);
        [self.global[i], self.global[n + i], self.global[2 * n + i]]
    }

    /// One depth plane as an owned row-major slice.
    pub fn depth_layer(&self, layer: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.depth[layer * n..(layer + 1) * n]
    }

    /// Last nonzero depth per pixel (the background depth when the ray
    /// reached a background surface within the layer budget).
    pub fn last_nonzero_depth(&self, x: usize, y: usize) -> f32 {
        for layer in (0..self.layers).rev() {
            let d = self.depth_at(x, y, layer);
            if d > 0.0 {
                return d;
            }
        }
        0.0
    }

    /// Structural invariants: depth monotone across layers, sem/depth
    /// co-nullity, truncation after a background class, and the local face
    /// channel agreeing with the frontmost class. Expects a full stack
    /// (from [`render_stack`]), not a sem/depth-only render.
    pub fn check_invariants(&self) -> Result<(), String> {
        for y in 0..self.height {
            for x in 0..self.width {
                let mut seen_background = false;
                let mut prev_depth = 0.0f32;
                for l in 0..self.layers {
                    let s = self.sem_at(x, y, l);
                    let d = self.depth_at(x, y, l);
                    if (s == 0) != (d == 0.0) {
                        return Err(format!("sem/depth co-nullity violated at ({x},{y},{l})"));
                    }
                    if seen_background && s != 0 {
                        return Err(format!("layer after background at ({x},{y},{l})"));
                    }
                    if d > 0.0 {
                        if prev_depth > 0.0 && d < prev_depth {
                            return Err(format!("depth not monotone at ({x},{y},{l})"));
                        }
                        prev_depth = d;
                    }
                    if (1..=3).contains(&s) {
                        seen_background = true;
                    }
                }
                let front_face = self.local_at(x, y)[2];
                let is_box_front = self.sem_at(x, y, 0) >= 4;
                if (front_face != 0.0) != is_box_front {
                    return Err(format!("local face channel inconsistent at ({x},{y})"));
                }
            }
        }
        Ok(())
    }
}

/// Renders the multi-layer semantic and depth planes: the first
/// `min(layers, hits)` ray intersections per pixel, everything after the
/// background hit left zero.
pub fn render_sem_depth(
    layout: &SceneLayout,
    camera: &CameraPose,
    layers: usize,
) -> ConditionStack {
    assert!(layers >= 1, "need at least one layer");
    render_stack_inner(layout, camera, layers, false)
}

/// Renders the local/global spatial embeddings of the frontmost box faces.
pub fn render_spatial(layout: &SceneLayout, camera: &CameraPose) -> ConditionStack {
    let mut stack = render_stack_inner(layout, camera, 1, true);
    stack.sem.iter_mut().for_each(|v| *v = 0);
    stack.depth.iter_mut().for_each(|v| *v = 0.0);
    stack
}

/// Full condition stack: semantics, depth, and spatial embeddings in one
/// pass over the pixels.
pub fn render_stack(layout: &SceneLayout, camera: &CameraPose, layers: usize) -> ConditionStack {
    assert!(layers >= 1, "need at least one layer");
    render_stack_inner(layout, camera, layers, true)
}

fn render_stack_inner(
    layout: &SceneLayout,
    camera: &CameraPose,
    layers: usize,
    spatial: bool,
) -> ConditionStack {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let n = w * h;
    let mut stack = ConditionStack::zeros(w, h, layers);

    // Split every plane into rows so each worker writes disjoint slices.
    let sem_rows: Vec<&mut [u16]> = planes_rows(&mut stack.sem, w, h, layers);
    let depth_rows: Vec<&mut [f32]> = planes_rows(&mut stack.depth, w, h, layers);
    let local_rows: Vec<&mut [f32]> = planes_rows(&mut stack.local, w, h, 3);
    let global_rows: Vec<&mut [f32]> = planes_rows(&mut stack.global, w, h, 3);
    debug_assert_eq!(sem_rows.len(), h * layers);
    debug_assert_eq!(local_rows.len(), h * 3);

    // Regroup as per-row bundles: for row y, layer planes y, y+h, y+2h, ...
    struct RowBundle<'a> {
        sem: Vec<&'a mut [u16]>,
        depth: Vec<&'a mut [f32]>,
        local: Vec<&'a mut [f32]>,
        global: Vec<&'a mut [f32]>,
    }
    let mut bundles: Vec<RowBundle> = (0..h)
        .map(|_| RowBundle {
            sem: Vec::with_capacity(layers),
            depth: Vec::with_capacity(layers),
            local: Vec::with_capacity(3),
            global: Vec::with_capacity(3),
        })
        .collect();
    for (i, row) in sem_rows.into_iter().enumerate() {
        bundles[i % h].sem.push(row);
    }
    for (i, row) in depth_rows.into_iter().enumerate() {
        bundles[i % h].depth.push(row);
    }
    for (i, row) in local_rows.into_iter().enumerate() {
        bundles[i % h].local.push(row);
    }
    for (i, row) in global_rows.into_iter().enumerate() {
        bundles[i % h].global.push(row);
    }

    bundles.par_iter_mut().enumerate().for_each(|(y, rows)| {
        for x in 0..w {
            let pixel = [x as f64 + 0.5, y as f64 + 0.5];
            let hits = cast_ray(layout, camera, pixel);
            for (l, hit) in hits.iter().take(layers).enumerate() {
                rows.sem[l][x] = layout.surface_class(&hit.kind);
                rows.depth[l][x] = hit.depth as f32;
            }
            if spatial {
                if let Some(front) = hits.first() {
                    if let (SurfaceKind::BoxFace { face, .. }, Some(uv)) =
                        (&front.kind, front.local_uv)
                    {
                        rows.local[0][x] = uv[0] as f32;
                        rows.local[1][x] = uv[1] as f32;
                        rows.local[2][x] = f32::from(*face);
                        rows.global[0][x] = front.world_point.x as f32;
                        rows.global[1][x] = front.world_point.y as f32;
                        rows.global[2][x] = front.world_point.z as f32;
                    }
                }
            }
        }
    });

    debug_assert_eq!(stack.sem.len(), n * layers);
    stack
}

/// Splits `count` row-major planes of `w*h` into row slices, ordered
/// plane-major: plane 0 rows, then plane 1 rows, ...
fn planes_rows<T>(data: &mut [T], w: usize, h: usize, count: usize) -> Vec<&mut [T]> {
    debug_assert_eq!(data.len(), w * h * count);
    data.chunks_mut(w).collect()
}

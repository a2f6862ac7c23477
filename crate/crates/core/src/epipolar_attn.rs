//! Layout-aware epipolar attention: per-query-cell key masks restricted to
//! the depth intervals where the query ray intersects the layout, plus a
//! reference masked multi-view attention operator.
//!
//! Feature-grid rays go through cell centers with intrinsics rescaled from
//! the camera resolution. A projected depth interval becomes a 2D segment in
//! the target grid; a cell is marked when its center lies within
//! `sqrt(2)/2 + dilation` cells of that segment. That radius-based
//! rasterization is monotone in the segment (sub-segments mark subsets of
//! cells), which is what makes the layout-aware mask a bitwise subset of the
//! plain epipolar mask built from the single interval `(eps, d_max]`.

use rayon::prelude::*;

use crate::scene_model::{box_intervals, intersect_shell, pixel_ray, CameraPose, Ray, SceneLayout};

/// Near limit for epipolar depth sampling.
pub const DEPTH_EPS: f64 = 1e-4;

/// One projected depth interval of the query ray in a target view.
#[derive(Debug, Clone)]
pub struct EpipolarSegment {
    pub view_index: usize,
    pub d_near: f64,
    pub d_far: f64,
    /// Feature-grid cells `(col, row)` marked by this segment.
    pub pixels: Vec<(u16, u16)>,
}

/// Options for mask construction.
#[derive(Debug, Clone, Copy)]
pub struct MaskOptions {
    /// Extra rasterization radius in cells.
    pub dilation: usize,
    /// Include the background (floor/wall/ceiling) hit as a point mark.
    pub include_background: bool,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self {
            dilation: 1,
            include_background: true,
        }
    }
}

/// Per-query-cell, per-target-view key bitsets at feature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutEpipolarMask {
    pub query_view: usize,
    pub num_views: usize,
    /// Query grid (height, width).
    pub resolution: (usize, usize),
    /// Key grid per view (same for all views here, kept explicit).
    pub key_resolutions: Vec<(usize, usize)>,
    words_per_row: usize,
    /// Rows ordered query-cell-major, then target views ascending with the
    /// query view skipped.
    bits: Vec<u64>,
}

impl LayoutEpipolarMask {
    fn empty(query_view: usize, num_views: usize, resolution: (usize, usize)) -> Self {
        let (h, w) = resolution;
        let words_per_row = (h * w).div_ceil(64);
        Self {
            query_view,
            num_views,
            resolution,
            key_resolutions: vec![resolution; num_views],
            words_per_row,
            bits: vec![0; h * w * (num_views - 1) * words_per_row],
        }
    }

    /// Row slot for target view `view` (query view has no row).
    fn slot(&self, view: usize) -> usize {
        debug_assert_ne!(view, self.query_view);
        if view < self.query_view {
            view
        } else {
            view - 1
        }
    }

    fn row_range(&self, query_cell: usize, view: usize) -> std::ops::Range<usize> {
        let row = query_cell * (self.num_views - 1) + self.slot(view);
        row * self.words_per_row..(row + 1) * self.words_per_row
    }

    pub fn get(&self, query_cell: (usize, usize), view: usize, key_cell: (usize, usize)) -> bool {
        let (h, w) = self.resolution;
        let q = query_cell.0 * w + query_cell.1;
        debug_assert!(query_cell.0 < h && query_cell.1 < w);
        let k = key_cell.0 * w + key_cell.1;
        let range = self.row_range(q, view);
        self.bits[range][k / 64] >> (k % 64) & 1 == 1
    }

    /// Key cells of one row, ascending by cell index.
    pub fn row_cells(&self, query_cell: (usize, usize), view: usize) -> Vec<usize> {
        let (_, w) = self.resolution;
        let q = query_cell.0 * w + query_cell.1;
        let range = self.row_range(q, view);
        let words = &self.bits[range];
        let mut out = Vec::new();
        for (wi, word) in words.iter().enumerate() {
            let mut bits = *word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                out.push(wi * 64 + b);
                bits &= bits - 1;
            }
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &LayoutEpipolarMask) -> bool {
        self.bits.len() == other.bits.len()
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(a, b)| a & !b == 0)
    }

    /// Packed row words (row layout documented on the type).
    pub fn raw_words(&self) -> &[u64] {
        &self.bits
    }

    /// Rebuilds a mask from packed words (file IO, synthetic test masks).
    pub fn from_raw_words(
        query_view: usize,
        num_views: usize,
        resolution: (usize, usize),
        bits: Vec<u64>,
    ) -> Self {
        let mut m = Self::empty(query_view, num_views, resolution);
        assert_eq!(bits.len(), m.bits.len());
        m.bits = bits;
        m
    }
}

/// Depth intervals where the query ray overlaps the layout, merged and
/// clipped to the background hit. Exposed for tests and visualization.
pub fn query_ray_intervals(layout: &SceneLayout, ray: &Ray) -> (Vec<(f64, f64)>, Option<f64>) {
    let background = intersect_shell(layout, ray).map(|(t, _)| t);
    let limit = background.unwrap_or(f64::INFINITY);
    let mut intervals: Vec<(f64, f64)> = box_intervals(layout, ray)
        .into_iter()
        .filter_map(|(_, lo, hi)| {
            let lo = lo.max(DEPTH_EPS);
            let hi = hi.min(limit);
            (lo <= hi).then_some((lo, hi))
        })
        .collect();
    intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in intervals {
        match merged.last_mut() {
            Some((_, phi)) if lo <= *phi => *phi = phi.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    (merged, background)
}

/// Layout-aware mask for one query view against all others.
pub fn compute_la_mask(
    layout: &SceneLayout,
    cams: &[CameraPose],
    query_view: usize,
    resolution: (usize, usize),
    dilation: usize,
) -> LayoutEpipolarMask {
    compute_la_mask_with(
        layout,
        cams,
        query_view,
        resolution,
        &MaskOptions {
            dilation,
            ..MaskOptions::default()
        },
    )
}

pub fn compute_la_mask_with(
    layout: &SceneLayout,
    cams: &[CameraPose],
    query_view: usize,
    resolution: (usize, usize),
    opts: &MaskOptions,
) -> LayoutEpipolarMask {
    assert!(cams.len() >= 2, "need at least two views");
    assert!(query_view < cams.len());
    build_mask(cams, query_view, resolution, opts.dilation, |ray| {
        let (intervals, background) = query_ray_intervals(layout, ray);
        let bg_point = if opts.include_background {
            background
        } else {
            None
        };
        (intervals, bg_point)
    })
}

/// Unconstrained epipolar mask: a single depth interval `(eps, d_max]` per
/// query ray, no background point. The layout-aware mask is a subset of
/// this by construction.
pub fn compute_plain_mask(
    cams: &[CameraPose],
    query_view: usize,
    resolution: (usize, usize),
    dilation: usize,
    d_max: f64,
) -> LayoutEpipolarMask {
    assert!(cams.len() >= 2, "need at least two views");
    build_mask(cams, query_view, resolution, dilation, move |_| {
        (vec![(DEPTH_EPS, d_max)], None)
    })
}

/// Upper bound on layout depths from any camera: distance from the farthest
/// camera to the farthest shell corner, padded.
pub fn scene_depth_bound(layout: &SceneLayout, cams: &[CameraPose]) -> f64 {
    let (min, max) = layout.shell.bounds();
    let corners = [
        [min.x, min.y, min.z],
        [min.x, min.y, max.z],
        [min.x, max.y, min.z],
        [min.x, max.y, max.z],
        [max.x, min.y, min.z],
        [max.x, min.y, max.z],
        [max.x, max.y, min.z],
        [max.x, max.y, max.z],
    ];
    let mut bound = 0.0f64;
    for cam in cams {
        for c in corners {
            bound = bound.max((nalgebra::Vector3::from(c) - cam.position).norm());
        }
    }
    bound * 1.01 + 0.1
}

fn build_mask<F>(
    cams: &[CameraPose],
    query_view: usize,
    resolution: (usize, usize),
    dilation: usize,
    intervals_of: F,
) -> LayoutEpipolarMask
where
    F: Fn(&Ray) -> (Vec<(f64, f64)>, Option<f64>) + Sync,
{
    let (h, w) = resolution;
    let query_cam = cams[query_view].scaled_to(w as u32, h as u32);
    let feature_cams: Vec<CameraPose> = cams
        .iter()
        .map(|c| c.scaled_to(w as u32, h as u32))
        .collect();
    let mut mask = LayoutEpipolarMask::empty(query_view, cams.len(), resolution);
    let radius = std::f64::consts::SQRT_2 * 0.5 + dilation as f64;

    let words_per_row = mask.words_per_row;
    let slots = cams.len() - 1;
    let row_words = slots * words_per_row;

    mask.bits
        .par_chunks_mut(row_words)
        .enumerate()
        .for_each(|(q, chunk)| {
            let (r, c) = (q / w, q % w);
            let ray = pixel_ray(&query_cam, [c as f64 + 0.5, r as f64 + 0.5]);
            let (intervals, bg) = intervals_of(&ray);
            if intervals.is_empty() && bg.is_none() {
                return;
            }
            for (j, cam_j) in feature_cams.iter().enumerate() {
                if j == query_view {
                    continue;
                }
                let slot = if j < query_view { j } else { j - 1 };
                let row = &mut chunk[slot * words_per_row..(slot + 1) * words_per_row];
                for (lo, hi) in &intervals {
                    mark_segment(row, cam_j, &ray, *lo, *hi, radius, (h, w));
                }
                if let Some(d_bg) = bg {
                    mark_segment(row, cam_j, &ray, d_bg, d_bg, radius, (h, w));
                }
            }
        });
    mask
}

/// Projects the ray sub-segment `[d0, d1]` into a target feature camera,
/// clips it to the front of that camera, and marks every cell whose center
/// lies within `radius` cells of the projected 2D segment.
fn mark_segment(
    row: &mut [u64],
    cam: &CameraPose,
    ray: &Ray,
    d0: f64,
    d1: f64,
    radius: f64,
    (h, w): (usize, usize),
) {
    const Z_NEAR: f64 = 1e-6;
    let p0 = cam.world_to_camera(&ray.point_at(d0));
    let p1 = cam.world_to_camera(&ray.point_at(d1));

    // Clip [p0, p1] to z > Z_NEAR in the target camera frame.
    let (mut a, mut b) = (p0, p1);
    if a.z <= Z_NEAR && b.z <= Z_NEAR {
        return;
    }
    if a.z <= Z_NEAR {
        let t = (Z_NEAR - a.z) / (b.z - a.z);
        a += (b - a) * t;
    } else if b.z <= Z_NEAR {
        let t = (Z_NEAR - b.z) / (a.z - b.z);
        b += (a - b) * t;
    }

    let project = |p: nalgebra::Vector3<f64>| {
        [
            cam.fx * p.x / p.z + cam.cx,
            cam.fy * p.y / p.z + cam.cy,
        ]
    };
    let pa = project(a);
    let pb = project(b);

    // Cell centers within `radius` of segment [pa, pb].
    let min_x = pa[0].min(pb[0]) - radius - 0.5;
    let max_x = pa[0].max(pb[0]) + radius + 0.5;
    let min_y = pa[1].min(pb[1]) - radius - 0.5;
    let max_y = pa[1].max(pb[1]) + radius + 0.5;
    if max_x < 0.0 || max_y < 0.0 || min_x >= w as f64 || min_y >= h as f64 {
        return;
    }
    let c0 = (min_x.floor().max(0.0)) as usize;
    let c1 = (max_x.ceil().min(w as f64 - 1.0)) as usize;
    let r0 = (min_y.floor().max(0.0)) as usize;
    let r1 = (max_y.ceil().min(h as f64 - 1.0)) as usize;

    let seg = [pb[0] - pa[0], pb[1] - pa[1]];
    let len2 = seg[0] * seg[0] + seg[1] * seg[1];
    let r2 = radius * radius;
    for rr in r0..=r1 {
        let cy = rr as f64 + 0.5;
        for cc in c0..=c1 {
            let cx = cc as f64 + 0.5;
            let dx = cx - pa[0];
            let dy = cy - pa[1];
            let t = if len2 > 0.0 {
                ((dx * seg[0] + dy * seg[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let ex = dx - t * seg[0];
            let ey = dy - t * seg[1];
            if ex * ex + ey * ey <= r2 {
                let k = rr * w + cc;
                row[k / 64] |= 1 << (k % 64);
            }
        }
    }
}

/// Dense multi-view feature grid, cell-major storage (`(row*w + col) * c`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn cell(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, index: usize) -> &mut [f32] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

/// Dense `c x c` projection matrices for queries, keys, and values.
#[derive(Debug, Clone)]
pub struct QkvProjections {
    pub channels: usize,
    pub q: Vec<f32>,
    pub k: Vec<f32>,
    pub v: Vec<f32>,
}

impl QkvProjections {
    pub fn identity(channels: usize) -> Self {
        let mut eye = vec![0.0f32; channels * channels];
        for i in 0..channels {
            eye[i * channels + i] = 1.0;
        }
        Self {
            channels,
            q: eye.clone(),
            k: eye.clone(),
            v: eye,
        }
    }

    fn apply(&self, m: &[f32], x: &[f32], out: &mut [f32]) {
        let c = self.channels;
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for j in 0..c {
                acc += f64::from(m[i * c + j]) * f64::from(x[j]);
            }
            *o = acc as f32;
        }
    }
}

/// Key/value source cells for one query cell: the full own-view grid first,
/// then mask-selected cells of every other view in ascending view order.
pub fn gather_keys(
    mask: &LayoutEpipolarMask,
    query_view: usize,
    query_cell: (usize, usize),
) -> Vec<(usize, usize)> {
    let (h, w) = mask.resolution;
    let mut keys: Vec<(usize, usize)> = (0..h * w).map(|i| (query_view, i)).collect();
    for view in 0..mask.num_views {
        if view == query_view {
            continue;
        }
        for cell in mask.row_cells(query_cell, view) {
            keys.push((view, cell));
        }
    }
    keys
}

/// Scaled-dot-product attention for every cell of the query view, with the
/// key set given by [`gather_keys`]. Deterministic: accumulation runs in key
/// order with f64 accumulators.
pub fn masked_attention(
    features: &[FeatureGrid],
    mask: &LayoutEpipolarMask,
    query_view: usize,
    qkv: &QkvProjections,
) -> FeatureGrid {
    let c = qkv.channels;
    assert!(features.iter().all(|f| f.channels == c));
    assert_eq!(features.len(), mask.num_views);
    let (h, w) = mask.resolution;
    let fq = &features[query_view];
    assert_eq!((fq.height, fq.width), (h, w));

    // Precompute key/value projections for every cell of every view.
    let mut keyed: Vec<FeatureGrid> = Vec::with_capacity(features.len());
    let mut valued: Vec<FeatureGrid> = Vec::with_capacity(features.len());
    for f in features {
        let mut kg = FeatureGrid::zeros(f.height, f.width, c);
        let mut vg = FeatureGrid::zeros(f.height, f.width, c);
        for i in 0..f.cells() {
            let cell = f.cell(i);
            let mut tmp = vec![0.0f32; c];
            qkv.apply(&qkv.k, cell, &mut tmp);
            kg.cell_mut(i).copy_from_slice(&tmp);
            qkv.apply(&qkv.v, cell, &mut tmp);
            vg.cell_mut(i).copy_from_slice(&tmp);
        }
        keyed.push(kg);
        valued.push(vg);
    }

    let scale = 1.0 / (c as f64).sqrt();
    let mut out = FeatureGrid::zeros(h, w, c);
    let out_cells: Vec<&mut [f32]> = out.data.chunks_mut(c).collect();

    out_cells.into_par_iter().enumerate().for_each(|(q, out_cell)| {
        let (r, col) = (q / w, q % w);
        let mut query = vec![0.0f32; c];
        qkv.apply(&qkv.q, fq.cell(q), &mut query);

        let keys = gather_keys(mask, query_view, (r, col));
        let mut logits = Vec::with_capacity(keys.len());
        let mut max_logit = f64::NEG_INFINITY;
        for (view, cell) in &keys {
            let kf = keyed[*view].cell(*cell);
            let mut dot = 0.0f64;
            for i in 0..c {
                dot += f64::from(query[i]) * f64::from(kf[i]);
            }
            let logit = dot * scale;
            max_logit = max_logit.max(logit);
            logits.push(logit);
        }
        let mut denom = 0.0f64;
        for l in &mut logits {
            *l = (*l - max_logit).exp();
            denom += *l;
        }
        let mut acc = vec![0.0f64; c];
        for ((view, cell), weight) in keys.iter().zip(&logits) {
            let vf = valued[*view].cell(*cell);
            let wn = *weight / denom;
            for i in 0..c {
                acc[i] += wn * f64::from(vf[i]);
            }
        }
        for i in 0..c {
            out_cell[i] = acc[i] as f32;
        }
    });
    out
}

/// Softmax weights for one query cell, in [`gather_keys`] order. Shares the
/// logit path with [`masked_attention`]; used by tests to check
/// row-stochasticity and oracle agreement.
pub fn attention_row_weights(
    features: &[FeatureGrid],
    mask: &LayoutEpipolarMask,
    query_view: usize,
    qkv: &QkvProjections,
    query_cell: (usize, usize),
) -> (Vec<(usize, usize)>, Vec<f64>) {
    let c = qkv.channels;
    let (_, w) = mask.resolution;
    let q = query_cell.0 * w + query_cell.1;
    let mut query = vec![0.0f32; c];
    qkv.apply(&qkv.q, features[query_view].cell(q), &mut query);

    let keys = gather_keys(mask, query_view, query_cell);
    let scale = 1.0 / (c as f64).sqrt();
    let mut logits = Vec::with_capacity(keys.len());
    let mut max_logit = f64::NEG_INFINITY;
    for (view, cell) in &keys {
        let kcell = features[*view].cell(*cell);
        let mut keyed = vec![0.0f32; c];
        qkv.apply(&qkv.k, kcell, &mut keyed);
        let mut dot = 0.0f64;
        for i in 0..c {
            dot += f64::from(query[i]) * f64::from(keyed[i]);
        }
        let logit = dot * scale;
        max_logit = max_logit.max(logit);
        logits.push(logit);
    }
    let mut denom = 0.0f64;
    for l in &mut logits {
        *l = (*l - max_logit).exp();
        denom += *l;
    }
    for l in &mut logits {
        *l /= denom;
    }
    (keys, logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_model::{look_at, BackgroundShell, OrientedBox, SceneLayout};
    use nalgebra::Vector3;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn scene() -> SceneLayout {
        let shell = BackgroundShell {
            floor_polygon: vec![[-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]],
            ceiling_height: 2.8,
        };
        let boxes = vec![
            OrientedBox::new(4, [1.2, 1.2, 1.2], [0.0, 0.6, 0.8], 0.3),
            OrientedBox::new(5, [0.8, 1.6, 0.8], [-1.5, 0.8, -0.5], -0.6),
        ];
        SceneLayout::new(boxes, shell, BTreeMap::new()).unwrap()
    }

    fn cam(eye: [f64; 3], target: [f64; 3]) -> CameraPose {
        let eye = Vector3::from(eye);
        CameraPose::new(
            eye,
            look_at(eye, Vector3::from(target)),
            (384.0, 384.0, 256.0, 256.0),
            (512, 512),
        )
        .unwrap()
    }

    fn rig() -> Vec<CameraPose> {
        vec![
            cam([0.0, 1.4, -3.6], [0.0, 0.8, 0.0]),
            cam([1.2, 1.2, -3.2], [0.0, 0.8, 0.0]),
            cam([-1.6, 1.6, -3.0], [0.0, 0.8, 0.0]),
            cam([2.2, 1.0, -2.2], [-0.4, 0.8, 0.0]),
        ]
    }

    #[test]
    fn identical_cameras_mask_contains_own_cell() {
        let s = scene();
        let c = cam([0.0, 1.4, -3.6], [0.0, 0.8, 0.0]);
        let cams = vec![c.clone(), c];
        let mask = compute_la_mask(&s, &cams, 0, (16, 16), 0);
        for r in 0..16 {
            for col in 0..16 {
                // Every ray in a closed room hits at least the background, and
                // with zero relative pose the segment degenerates to the cell.
                assert!(
                    mask.get((r, col), 1, (r, col)),
                    "own cell missing at ({r},{col})"
                );
            }
        }
    }

    #[test]
    fn subset_of_plain_mask_bitwise() {
        let s = scene();
        let cams = rig();
        let d_max = scene_depth_bound(&s, &cams);
        for dilation in [0usize, 1, 2] {
            let la = compute_la_mask(&s, &cams, 0, (32, 32), dilation);
            let plain = compute_plain_mask(&cams, 0, (32, 32), dilation, d_max);
            assert!(la.is_subset_of(&plain), "dilation {dilation}");
            assert!(la.count_ones() > 0);
            assert!(la.count_ones() < plain.count_ones());
        }
    }

    #[test]
    fn stereo_segment_endpoints_match_projection_oracle() {
        // Pure x-translation stereo pair, one box straight ahead.
        let shell = BackgroundShell {
            floor_polygon: vec![[-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]],
            ceiling_height: 2.8,
        };
        let b = OrientedBox::new(4, [1.0, 1.0, 1.0], [0.0, 1.0, 0.0], 0.0);
        let s = SceneLayout::new(vec![b], shell, BTreeMap::new()).unwrap();
        let c0 = cam([0.0, 1.0, -4.0], [0.0, 1.0, 2.0]);
        let mut c1 = c0.clone();
        c1.position += Vector3::new(0.5, 0.0, 0.0);
        let cams = vec![c0.clone(), c1.clone()];

        let res = 32usize;
        let fc0 = c0.scaled_to(res as u32, res as u32);
        let fc1 = c1.scaled_to(res as u32, res as u32);
        // Query: center cell, whose ray passes through the box.
        let q = (res / 2, res / 2);
        let ray = pixel_ray(&fc0, [q.1 as f64 + 0.5, q.0 as f64 + 0.5]);
        let (intervals, _) = query_ray_intervals(&s, &ray);
        assert_eq!(intervals.len(), 1);
        let (d0, d1) = intervals[0];
        assert!((d0 - 3.5).abs() < 1e-6, "entry depth {d0}");
        assert!((d1 - 4.5).abs() < 1e-6, "exit depth {d1}");

        let mask = compute_la_mask(&s, &cams, 0, (res, res), 1);
        for d in [d0, d1, 0.5 * (d0 + d1)] {
            let p = fc1.project(&ray.point_at(d));
            assert!(p.in_front());
            let cell = (
                (p.pixel[1].floor() as usize).min(res - 1),
                (p.pixel[0].floor() as usize).min(res - 1),
            );
            assert!(
                mask.get(q, 1, cell),
                "projected depth {d} cell {cell:?} not in mask"
            );
        }
    }

    #[test]
    fn mask_bits_justified_by_depth_sweep_oracle() {
        // Soundness: every set bit is within dilation+1 cells of the
        // projection of some layout surface point on the query ray.
        let s = scene();
        let cams = rig();
        let res = 24usize;
        let dilation = 1usize;
        let mask = compute_la_mask(&s, &cams, 0, (res, res), dilation);
        let fq = cams[0].scaled_to(res as u32, res as u32);
        let feature: Vec<CameraPose> = cams.iter().map(|c| c.scaled_to(res as u32, res as u32)).collect();

        let mut rng = crate::rng::stream(5, "mask-sweep");
        for _ in 0..40 {
            let r = rng.random_range(0..res);
            let c = rng.random_range(0..res);
            let ray = pixel_ray(&fq, [c as f64 + 0.5, r as f64 + 0.5]);
            let (intervals, bg) = query_ray_intervals(&s, &ray);
            for j in 1..cams.len() {
                let cells = mask.row_cells((r, c), j);
                if cells.is_empty() {
                    continue;
                }
                // Dense projections of layout points along the ray.
                let mut marks: Vec<[f64; 2]> = Vec::new();
                for (lo, hi) in &intervals {
                    let steps = ((hi - lo) / 0.001).ceil().max(1.0) as usize;
                    for k in 0..=steps {
                        let d = lo + (hi - lo) * (k as f64) / (steps as f64);
                        let p = feature[j].project(&ray.point_at(d));
                        if p.in_front() {
                            marks.push(p.pixel);
                        }
                    }
                }
                if let Some(d) = bg {
                    let p = feature[j].project(&ray.point_at(d));
                    if p.in_front() {
                        marks.push(p.pixel);
                    }
                }
                let tol = (dilation + 1) as f64 + 0.71;
                for cell in cells {
                    let (kr, kc) = (cell / res, cell % res);
                    let center = [kc as f64 + 0.5, kr as f64 + 0.5];
                    let ok = marks.iter().any(|m| {
                        let dx = (m[0] - center[0]).abs();
                        let dy = (m[1] - center[1]).abs();
                        dx.max(dy) <= tol
                    });
                    assert!(ok, "unjustified bit at query ({r},{c}) view {j} cell ({kr},{kc})");
                }
            }
        }
    }

    fn random_features(rng: &mut impl Rng, n: usize, h: usize, w: usize, c: usize) -> Vec<FeatureGrid> {
        (0..n)
            .map(|_| {
                let mut g = FeatureGrid::zeros(h, w, c);
                for v in &mut g.data {
                    *v = rng.random_range(-1.0f32..1.0f32);
                }
                g
            })
            .collect()
    }

    fn random_qkv(rng: &mut impl Rng, c: usize) -> QkvProjections {
        let mut m = || {
            (0..c * c)
                .map(|_| rng.random_range(-0.5f32..0.5f32))
                .collect::<Vec<_>>()
        };
        QkvProjections {
            channels: c,
            q: m(),
            k: m(),
            v: m(),
        }
    }

    fn random_mask(rng: &mut impl Rng, n: usize, h: usize, w: usize, query: usize, density: f64) -> LayoutEpipolarMask {
        let words = (h * w).div_ceil(64);
        let mut bits = vec![0u64; h * w * (n - 1) * words];
        for row in 0..h * w * (n - 1) {
            for k in 0..h * w {
                if rng.random_bool(density) {
                    bits[row * words + k / 64] |= 1 << (k % 64);
                }
            }
        }
        LayoutEpipolarMask::from_raw_words(query, n, (h, w), bits)
    }

    #[test]
    fn all_false_mask_reduces_to_self_attention() {
        let mut rng = crate::rng::stream(3, "attn-reduction");
        let (h, w, c) = (4, 4, 4);
        let feats = random_features(&mut rng, 2, h, w, c);
        let qkv = random_qkv(&mut rng, c);
        let empty = random_mask(&mut rng, 2, h, w, 0, 0.0);
        let out = masked_attention(&feats, &empty, 0, &qkv);

        // Reference: single-view full self-attention.
        let solo_mask = LayoutEpipolarMask::from_raw_words(0, 2, (h, w), vec![0; h * w * (h * w).div_ceil(64)]);
        let solo = masked_attention(&[feats[0].clone(), FeatureGrid::zeros(h, w, c)], &solo_mask, 0, &qkv);
        for (a, b) in out.data.iter().zip(&solo.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_features_give_uniform_weights() {
        let (h, w, c) = (3, 3, 4);
        let mut feats = vec![FeatureGrid::zeros(h, w, c); 2];
        for f in &mut feats {
            f.data.iter_mut().for_each(|v| *v = 0.5);
        }
        let mut rng = crate::rng::stream(4, "attn-const");
        let mask = random_mask(&mut rng, 2, h, w, 0, 0.4);
        let qkv = QkvProjections::identity(c);
        let (keys, weights) = attention_row_weights(&feats, &mask, 0, &qkv, (1, 1));
        let expect = 1.0 / keys.len() as f64;
        for wgt in &weights {
            assert!((wgt - expect).abs() < 1e-9);
        }
        let out = masked_attention(&feats, &mask, 0, &qkv);
        for v in &out.data {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_naive_gather_oracle() {
        let mut rng = crate::rng::stream(9, "attn-oracle");
        let (n, h, w, c) = (4, 8, 8, 4);
        let feats = random_features(&mut rng, n, h, w, c);
        let qkv = random_qkv(&mut rng, c);
        let mask = random_mask(&mut rng, n, h, w, 1, 0.15);
        let out = masked_attention(&feats, &mask, 1, &qkv);

        // Naive oracle: matrix-free per-query recomputation.
        let matmul = |m: &[f32], x: &[f32]| -> Vec<f64> {
            (0..c)
                .map(|i| (0..c).map(|j| f64::from(m[i * c + j]) * f64::from(x[j])).sum())
                .collect()
        };
        for q in 0..h * w {
            let (r, col) = (q / w, q % w);
            let query = matmul(&qkv.q, feats[1].cell(q));
            let keys = gather_keys(&mask, 1, (r, col));
            let logits: Vec<f64> = keys
                .iter()
                .map(|(view, cell)| {
                    let kf = matmul(&qkv.k, feats[*view].cell(*cell));
                    query.iter().zip(&kf).map(|(a, b)| a * b).sum::<f64>() / (c as f64).sqrt()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let denom: f64 = exps.iter().sum();
            let mut expect = vec![0.0f64; c];
            for ((view, cell), e) in keys.iter().zip(&exps) {
                let vf = matmul(&qkv.v, feats[*view].cell(*cell));
                for i in 0..c {
                    expect[i] += e / denom * vf[i];
                }
            }
            for i in 0..c {
                assert!(
                    (f64::from(out.cell(q)[i]) - expect[i]).abs() < 1e-6,
                    "query {q} channel {i}"
                );
            }
        }
    }

    #[test]
    fn permuting_other_views_leaves_output_unchanged() {
        let mut rng = crate::rng::stream(12, "attn-permute");
        let (n, h, w, c) = (4, 6, 6, 4);
        let feats = random_features(&mut rng, n, h, w, c);
        let qkv = random_qkv(&mut rng, c);
        let s = scene();
        let cams = rig();
        let mask = compute_la_mask(&s, &cams, 0, (h, w), 1);
        let out = masked_attention(&feats, &mask, 0, &qkv);

        // Swap views 1 and 3 everywhere (features and cameras).
        let permuted_feats = vec![
            feats[0].clone(),
            feats[3].clone(),
            feats[2].clone(),
            feats[1].clone(),
        ];
        let permuted_cams = vec![cams[0].clone(), cams[3].clone(), cams[2].clone(), cams[1].clone()];
        let permuted_mask = compute_la_mask(&s, &permuted_cams, 0, (h, w), 1);
        // Mask rows must be the permutation of the originals.
        for q in 0..h * w {
            let cell = (q / w, q % w);
            assert_eq!(mask.row_cells(cell, 1), permuted_mask.row_cells(cell, 3));
            assert_eq!(mask.row_cells(cell, 3), permuted_mask.row_cells(cell, 1));
            assert_eq!(mask.row_cells(cell, 2), permuted_mask.row_cells(cell, 2));
        }
        let out2 = masked_attention(&permuted_feats, &permuted_mask, 0, &qkv);
        for (a, b) in out.data.iter().zip(&out2.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn geometric_completeness_on_center_ray_hits() {
        // A surface point visible in two views must be reachable through the
        // mask row of its query cell.
        let s = scene();
        let cams = rig();
        let res = 32usize;
        let dilation = 1usize;
        let feature: Vec<CameraPose> = cams.iter().map(|c| c.scaled_to(res as u32, res as u32)).collect();
        let masks: Vec<LayoutEpipolarMask> = (0..cams.len())
            .map(|i| compute_la_mask(&s, &cams, i, (res, res), dilation))
            .collect();

        let mut rng = crate::rng::stream(21, "completeness");
        let mut checked = 0usize;
        for _ in 0..4000 {
            let i = rng.random_range(0..cams.len());
            let r = rng.random_range(0..res);
            let c = rng.random_range(0..res);
            let ray = pixel_ray(&feature[i], [c as f64 + 0.5, r as f64 + 0.5]);
            let hits = crate::scene_model::cast_world_ray(&s, &ray);
            let Some(front) = hits.first() else { continue };
            if front.kind.is_background() {
                continue;
            }
            let p = front.world_point;
            for j in 0..cams.len() {
                if j == i {
                    continue;
                }
                // Visible in j: the frontmost hit along j's ray to P is P.
                let pj = feature[j].project(&p);
                if !pj.in_front()
                    || pj.pixel[0] < 0.0
                    || pj.pixel[1] < 0.0
                    || pj.pixel[0] >= res as f64
                    || pj.pixel[1] >= res as f64
                {
                    continue;
                }
                let hits_j = crate::scene_model::cast_ray(&s, &feature[j], pj.pixel);
                let visible = hits_j
                    .first()
                    .is_some_and(|h| (h.depth - pj.depth).abs() < 2e-3);
                if !visible {
                    continue;
                }
                checked += 1;
                let key = (pj.pixel[1].floor() as usize, pj.pixel[0].floor() as usize);
                let mut found = false;
                'search: for dr in -(dilation as i64)..=dilation as i64 {
                    for dc in -(dilation as i64)..=dilation as i64 {
                        let kr = key.0 as i64 + dr;
                        let kc = key.1 as i64 + dc;
                        if kr < 0 || kc < 0 || kr >= res as i64 || kc >= res as i64 {
                            continue;
                        }
                        if masks[i].get((r, c), j, (kr as usize, kc as usize)) {
                            found = true;
                            break 'search;
                        }
                    }
                }
                assert!(found, "correspondence lost: query view {i} cell ({r},{c}) -> view {j} {key:?}");
            }
        }
        assert!(checked > 500, "too few co-visible samples: {checked}");
    }
}

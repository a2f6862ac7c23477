//! The global colored point cloud accumulated from accepted views, plus the
//! geometric consistency gate that decides whether a generated view may
//! contribute to it.

use std::collections::HashMap;

use image::RgbImage;
use nalgebra::Vector3;

use crate::depth_align::DepthMap;
use crate::grid::Grid;
use crate::scene_model::{CameraPose, SceneLayout};

/// Spatial-hash cell edge for the culling/dedup index.
const INDEX_CELL: f64 = 0.05;

/// Geometric inconsistency threshold: a view is accepted when the mean
/// absolute depth difference over the rendered-valid mask stays below this.
pub const CONSISTENCY_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
    pub source_view: u32,
}

/// Colored metric point set with a uniform-grid spatial index. Bounds, when
/// present, reject points outside the inflated shell volume.
#[derive(Debug, Clone)]
pub struct GlobalPointCloud {
    points: Vec<PointRecord>,
    index: HashMap<(i32, i32, i32), Vec<u32>>,
    bounds: Option<(Vector3<f64>, Vector3<f64>)>,
}

/// Outcome counters for one [`GlobalPointCloud::merge`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub added: usize,
    pub deduplicated: usize,
    pub out_of_bounds: usize,
}

impl GlobalPointCloud {
    /// Cloud bounded to the shell volume inflated by 0.5 m.
    pub fn for_layout(layout: &SceneLayout) -> Self {
        let (min, max) = layout.shell.bounds();
        let pad = Vector3::new(0.5, 0.5, 0.5);
        Self {
            points: Vec::new(),
            index: HashMap::new(),
            bounds: Some((min - pad, max + pad)),
        }
    }

    /// Cloud without bounds checking (tests, ad-hoc tooling).
    pub fn unbounded() -> Self {
        Self {
            points: Vec::new(),
            index: HashMap::new(),
            bounds: None,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[PointRecord] {
        &self.points
    }

    fn cell_of(p: &Vector3<f64>) -> (i32, i32, i32) {
        (
            (p.x / INDEX_CELL).floor() as i32,
            (p.y / INDEX_CELL).floor() as i32,
            (p.z / INDEX_CELL).floor() as i32,
        )
    }

    fn in_bounds(&self, p: &Vector3<f64>) -> bool {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return false;
        }
        match &self.bounds {
            None => true,
            Some((min, max)) => {
                p.x >= min.x && p.y >= min.y && p.z >= min.z && p.x <= max.x && p.y <= max.y && p.z <= max.z
            }
        }
    }

    fn has_neighbor_within(&self, p: &Vector3<f64>, radius: f64) -> bool {
        let r2 = radius * radius;
        let reach = (radius / INDEX_CELL).ceil() as i32;
        let (cx, cy, cz) = Self::cell_of(p);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.index.get(&(cx + dx, cy + dy, cz + dz)) {
                        for id in ids {
                            let q = &self.points[*id as usize].position;
                            if (q - p).norm_squared() <= r2 {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }

    /// Appends points in order. A point is dropped when `dedup_radius > 0`
    /// and any already-present point (including ones added earlier in this
    /// same call) lies within that radius, or when it falls outside the
    /// bounds. Insertion order makes the result deterministic.
    pub fn merge(&mut self, new_points: &[PointRecord], dedup_radius: f64) -> MergeStats {
        let mut stats = MergeStats::default();
        for p in new_points {
            if !self.in_bounds(&p.position) {
                stats.out_of_bounds += 1;
                continue;
            }
            if dedup_radius > 0.0 && self.has_neighbor_within(&p.position, dedup_radius) {
                stats.deduplicated += 1;
                continue;
            }
            let id = self.points.len() as u32;
            self.points.push(*p);
            self.index
                .entry(Self::cell_of(&p.position))
                .or_default()
                .push(id);
            stats.added += 1;
        }
        stats
    }
}

/// Unprojects every `stride`-th valid pixel of a rectified depth map into a
/// colored world-space point list.
pub fn project_pc(
    image: &RgbImage,
    depth: &DepthMap,
    cam: &CameraPose,
    stride: usize,
    source_view: u32,
) -> Vec<PointRecord> {
    assert!(stride >= 1);
    let (w, h) = (depth.width(), depth.height());
    assert_eq!((image.width() as usize, image.height() as usize), (w, h));
    let mut out = Vec::with_capacity(w * h / (stride * stride));
    let mut y = 0;
    while y < h {
        let mut x = 0;
        while x < w {
            if depth.is_valid(x, y) {
                let position = cam.unproject([x as f64 + 0.5, y as f64 + 0.5], depth.at(x, y));
                out.push(PointRecord {
                    position,
                    color: image.get_pixel(x as u32, y as u32).0,
                    source_view,
                });
            }
            x += stride;
        }
        y += stride;
    }
    out
}

/// Mean absolute depth difference over the valid mask (restricted to pixels
/// where both maps carry a value), gated at `threshold`. An empty mask
/// passes with score 0: there is nothing to contradict.
pub fn consistency_check_with_threshold(
    pred_depth: &DepthMap,
    rendered_depth: &DepthMap,
    valid_mask: &Grid<bool>,
    threshold: f64,
) -> (f64, bool) {
    let (w, h) = (pred_depth.width(), pred_depth.height());
    assert_eq!((rendered_depth.width(), rendered_depth.height()), (w, h));
    assert_eq!((valid_mask.width(), valid_mask.height()), (w, h));
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if valid_mask.at(x, y) && pred_depth.is_valid(x, y) && rendered_depth.is_valid(x, y) {
                sum += (pred_depth.at(x, y) - rendered_depth.at(x, y)).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return (0.0, true);
    }
    let score = sum / n as f64;
    (score, score < threshold)
}

/// [`consistency_check_with_threshold`] at the standard 0.02 m gate.
pub fn consistency_check(
    pred_depth: &DepthMap,
    rendered_depth: &DepthMap,
    valid_mask: &Grid<bool>,
) -> (f64, bool) {
    consistency_check_with_threshold(pred_depth, rendered_depth, valid_mask, CONSISTENCY_THRESHOLD)
}

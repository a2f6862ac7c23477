//! Independent verification oracles: brute-force reimplementations used by
//! the test and acceptance suites to check the analytic fast paths. Nothing
//! here calls into the code it exists to check.

use image::RgbImage;
use nalgebra::{Vector2, Vector3};

use crate::depth_align::DepthMap;
use crate::grid::Grid;
use crate::scene_model::{OrientedBox, Ray, SceneLayout};

/// A surface crossing found by dense ray marching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchHit {
    pub depth: f64,
    /// Box index, or `None` for the background boundary.
    pub box_index: Option<usize>,
}

fn inside_box(b: &OrientedBox, p: &Vector3<f64>) -> bool {
    let local = b.world_to_local(p);
    let h = b.half_extents();
    local.x.abs() <= h.x && local.y.abs() <= h.y && local.z.abs() <= h.z
}

fn inside_shell(layout: &SceneLayout, p: &Vector3<f64>) -> bool {
    p.y >= 0.0
        && p.y <= layout.shell.ceiling_height
        && layout.shell.contains_footprint(Vector2::new(p.x, p.z))
}

/// Marches the ray at `step` (1 mm by default in the suites), detecting
/// entries into boxes (outside -> inside flips) and the first background
/// boundary crossing of the shell volume. Each crossing is refined by
/// bisection. Hits after the background crossing are discarded, matching
/// the truncation contract.
pub fn ray_march_hits(layout: &SceneLayout, ray: &Ray, step: f64, t_max: f64) -> Vec<MarchHit> {
    let mut hits: Vec<(f64, usize)> = Vec::new();
    let mut background: Option<f64> = None;

    let refine = |mut lo: f64, mut hi: f64, test: &dyn Fn(f64) -> bool| {
        // Invariant: test(lo) != test(hi); returns the flip point.
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if test(mid) == test(lo) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let mut in_box: Vec<bool> = layout
        .boxes
        .iter()
        .map(|b| inside_box(b, &ray.point_at(1e-9)))
        .collect();
    let in_shell = inside_shell(layout, &ray.point_at(1e-9));

    let steps = (t_max / step).ceil() as usize;
    for k in 1..=steps {
        let t = step * k as f64;
        let p = ray.point_at(t);
        for (i, b) in layout.boxes.iter().enumerate() {
            let now = inside_box(b, &p);
            if now != in_box[i] {
                if now {
                    let t_cross = refine(t - step, t, &|tt| inside_box(b, &ray.point_at(tt)));
                    hits.push((t_cross, i));
                }
                in_box[i] = now;
            }
        }
        let shell_now = inside_shell(layout, &p);
        if shell_now != in_shell {
            let t_cross = refine(t - step, t, &|tt| inside_shell(layout, &ray.point_at(tt)));
            background = Some(t_cross);
            break;
        }
    }

    let limit = background.unwrap_or(f64::INFINITY);
    hits.retain(|(t, _)| *t <= limit + 1e-9);
    hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<MarchHit> = hits
        .into_iter()
        .map(|(depth, i)| MarchHit {
            depth,
            box_index: Some(i),
        })
        .collect();
    if let Some(t) = background {
        out.push(MarchHit {
            depth: t,
            box_index: None,
        });
    }
    out
}

/// Upper marching bound for a scene: its diagonal plus slack, so rays from
/// any interior camera reach the far boundary.
pub fn march_bound(layout: &SceneLayout) -> f64 {
    let (min, max) = layout.shell.bounds();
    (max - min).norm() + 1.0
}

/// Brute-force coarse-to-fine grid search for the inverse-depth affine fit,
/// minimizing the same least-squares objective by direct evaluation.
pub fn grid_search_fit(
    pred: &DepthMap,
    layout_depth_l1: &[f32],
    bg_mask: &Grid<bool>,
    rounds: usize,
) -> (f64, f64) {
    let (w, h) = (pred.width(), pred.height());
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if bg_mask.at(x, y) && pred.is_valid(x, y) {
                let d_l = f64::from(layout_depth_l1[y * w + x]);
                if d_l > 0.0 {
                    samples.push((1.0 / pred.at(x, y), 1.0 / d_l));
                }
            }
        }
    }
    let sse = |s: f64, d: f64| -> f64 {
        samples
            .iter()
            .map(|(x, y)| {
                let r = s * x + d - y;
                r * r
            })
            .sum()
    };

    let (mut s_lo, mut s_hi) = (0.02, 8.0);
    let (mut d_lo, mut d_hi) = (-1.0, 1.0);
    let (mut best_s, mut best_d) = (1.0, 0.0);
    for _ in 0..rounds {
        let mut best = f64::INFINITY;
        for i in 0..=20 {
            let s = s_lo + (s_hi - s_lo) * f64::from(i) / 20.0;
            for j in 0..=20 {
                let d = d_lo + (d_hi - d_lo) * f64::from(j) / 20.0;
                let e = sse(s, d);
                if e < best {
                    best = e;
                    best_s = s;
                    best_d = d;
                }
            }
        }
        let s_span = (s_hi - s_lo) / 10.0;
        let d_span = (d_hi - d_lo) / 10.0;
        s_lo = best_s - s_span;
        s_hi = best_s + s_span;
        d_lo = best_d - d_span;
        d_hi = best_d + d_span;
    }
    (best_s, best_d)
}

/// PSNR in dB over masked pixels (all channels pooled). Infinite when the
/// images agree exactly.
pub fn psnr_masked(a: &RgbImage, b: &RgbImage, mask: &Grid<bool>) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let mut sse = 0.0f64;
    let mut n = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if !mask.at(x as usize, y as usize) {
                continue;
            }
            let pa = a.get_pixel(x, y).0;
            let pb = b.get_pixel(x, y).0;
            for c in 0..3 {
                let d = f64::from(pa[c]) - f64::from(pb[c]);
                sse += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return f64::INFINITY;
    }
    let mse = sse / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// Fraction of masked pixels where every channel agrees within
/// `tol_per_channel` levels.
pub fn image_agreement(a: &RgbImage, b: &RgbImage, mask: &Grid<bool>, tol_per_channel: u8) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let mut agree = 0usize;
    let mut total = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if !mask.at(x as usize, y as usize) {
                continue;
            }
            total += 1;
            let pa = a.get_pixel(x, y).0;
            let pb = b.get_pixel(x, y).0;
            if (0..3).all(|c| pa[c].abs_diff(pb[c]) <= tol_per_channel) {
                agree += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}

/// Pixels within `band` (Chebyshev) of a depth discontinuity: any
/// 8-neighbor pair differing by more than `max(abs_floor, rel * depth)`
/// meters. Forward-splat resampling is ill-defined across depth jumps, so
/// image comparisons exclude these; the relative term keeps smooth grazing
/// surfaces (whose per-pixel gradient grows with depth) out of the band.
pub fn depth_discontinuity_band(
    depth: &DepthMap,
    abs_floor: f64,
    rel: f64,
    band: usize,
) -> Grid<bool> {
    let (w, h) = (depth.width(), depth.height());
    let mut edges = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !depth.is_valid(x, y) {
                edges.set(x, y, true);
                continue;
            }
            let d = depth.at(x, y);
            let threshold = abs_floor.max(rel * d);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !depth.is_valid(nx, ny) || (depth.at(nx, ny) - d).abs() > threshold {
                        edges.set(x, y, true);
                    }
                }
            }
        }
    }
    // Dilate by `band`.
    let mut out = Grid::filled(w, h, false);
    let b = band as i64;
    for y in 0..h {
        for x in 0..w {
            if !edges.at(x, y) {
                continue;
            }
            for dy in -b..=b {
                for dx in -b..=b {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                        out.set(nx as usize, ny as usize, true);
                    }
                }
            }
        }
    }
    out
}

//! Forward warping of condition images into target views and z-buffered
//! point-cloud rendering, both with hard-visibility splatting.

use image::RgbImage;

use crate::depth_align::DepthMap;
use crate::global_pointcloud::GlobalPointCloud;
use crate::grid::Grid;
use crate::scene_model::{CameraPose, Projection};

/// Contributions within this depth of the per-pixel winner are blended by
/// splat weight; anything farther is occluded and discarded.
pub const Z_BLEND: f64 = 0.01;

/// A condition image re-expressed in a target view: color where geometry
/// projected, a coverage mask (false = hole for inpainting), and the splat
/// z-buffer.
#[derive(Debug, Clone)]
pub struct WarpedCondition {
    pub image: RgbImage,
    /// True where at least one splat landed.
    pub mask: Grid<bool>,
    /// Winning (minimum) splat depth per pixel; 0 where uncovered.
    pub depth: Grid<f64>,
}

impl WarpedCondition {
    /// Covered fraction of the image, the overlap measure used for view
    /// selection.
    pub fn coverage(&self) -> f64 {
        let covered = self.mask.data().iter().filter(|m| **m).count();
        covered as f64 / self.mask.len() as f64
    }

    /// The splat z-buffer as a depth map (valid exactly on the mask).
    pub fn depth_map(&self) -> DepthMap {
        let mut out = DepthMap::new(self.mask.width(), self.mask.height());
        for y in 0..self.mask.height() {
            for x in 0..self.mask.width() {
                if self.mask.at(x, y) {
                    out.set(x, y, self.depth.at(x, y));
                }
            }
        }
        out
    }
}

/// Unproject a source pixel at `depth` and project it into the destination
/// view. This is the per-pixel geometric kernel of [`warp_image`].
pub fn reproject_pixel(
    src_cam: &CameraPose,
    dst_cam: &CameraPose,
    pixel: [f64; 2],
    depth: f64,
) -> Projection {
    let world = src_cam.unproject(pixel, depth);
    dst_cam.project(&world)
}

struct SplatBuffer {
    width: usize,
    height: usize,
    min_depth: Vec<f64>,
    acc: Vec<[f64; 4]>, // r, g, b, weight
}

impl SplatBuffer {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            min_depth: vec![f64::INFINITY; width * height],
            acc: vec![[0.0; 4]; width * height],
        }
    }

    #[inline]
    fn lower(&mut self, x: usize, y: usize, depth: f64) {
        let i = y * self.width + x;
        if depth < self.min_depth[i] {
            self.min_depth[i] = depth;
        }
    }

    #[inline]
    fn blend(&mut self, x: usize, y: usize, depth: f64, color: [u8; 3], weight: f64) {
        let i = y * self.width + x;
        if depth <= self.min_depth[i] + Z_BLEND {
            let a = &mut self.acc[i];
            a[0] += weight * f64::from(color[0]);
            a[1] += weight * f64::from(color[1]);
            a[2] += weight * f64::from(color[2]);
            a[3] += weight;
        }
    }

    fn finish(self) -> WarpedCondition {
        let mut image = RgbImage::new(self.width as u32, self.height as u32);
        let mut mask = Grid::filled(self.width, self.height, false);
        let mut depth = Grid::filled(self.width, self.height, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let w = self.acc[i][3];
                if w > 0.0 {
                    let px = image.get_pixel_mut(x as u32, y as u32);
                    for c in 0..3 {
                        px.0[c] = (self.acc[i][c] / w).round().clamp(0.0, 255.0) as u8;
                    }
                    mask.set(x, y, true);
                    depth.set(x, y, self.min_depth[i]);
                }
            }
        }
        WarpedCondition { image, mask, depth }
    }
}

/// Footprint weights below this are dropped: a splat landing on (or within
/// float jitter of) a pixel center touches that pixel alone.
const MIN_TAP_WEIGHT: f64 = 1e-9;

/// The four bilinear taps around a continuous pixel position, with weights.
#[inline]
fn bilinear_taps(p: [f64; 2], width: usize, height: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    let fx = p[0] - 0.5;
    let fy = p[1] - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let wx1 = fx - x0;
    let wy1 = fy - y0;
    let mut taps = [(0usize, 0usize, 0.0f64); 4];
    let mut n = 0;
    for (dy, wy) in [(0i64, 1.0 - wy1), (1, wy1)] {
        for (dx, wx) in [(0i64, 1.0 - wx1), (1, wx1)] {
            let w = wx * wy;
            if w <= MIN_TAP_WEIGHT {
                continue;
            }
            let x = x0 as i64 + dx;
            let y = y0 as i64 + dy;
            if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                continue;
            }
            taps[n] = (x as usize, y as usize, w);
            n += 1;
        }
    }
    taps.into_iter().take(n)
}

/// Forward-warps a source image with per-pixel depth into the destination
/// view. Each valid source pixel is unprojected, transformed, and splatted
/// with a 2x2 bilinear footprint; per destination pixel the nearest depth
/// wins and contributions within [`Z_BLEND`] of it blend by weight.
pub fn warp_image(
    src_image: &RgbImage,
    src_depth: &DepthMap,
    src_cam: &CameraPose,
    dst_cam: &CameraPose,
) -> WarpedCondition {
    let (sw, sh) = (src_image.width() as usize, src_image.height() as usize);
    assert_eq!((src_depth.width(), src_depth.height()), (sw, sh));
    let (dw, dh) = (dst_cam.width as usize, dst_cam.height as usize);

    // Projected positions are needed twice; compute once.
    let mut splats: Vec<(f64, f64, f64, [u8; 3])> = Vec::new();
    for y in 0..sh {
        for x in 0..sw {
            if !src_depth.is_valid(x, y) {
                continue;
            }
            let proj = reproject_pixel(
                src_cam,
                dst_cam,
                [x as f64 + 0.5, y as f64 + 0.5],
                src_depth.at(x, y),
            );
            if !proj.in_front() {
                continue;
            }
            let c = src_image.get_pixel(x as u32, y as u32).0;
            splats.push((proj.pixel[0], proj.pixel[1], proj.depth, c));
        }
    }

    let mut buf = SplatBuffer::new(dw, dh);
    for (px, py, depth, _) in &splats {
        for (x, y, _) in bilinear_taps([*px, *py], dw, dh) {
            buf.lower(x, y, *depth);
        }
    }
    for (px, py, depth, color) in &splats {
        for (x, y, w) in bilinear_taps([*px, *py], dw, dh) {
            buf.blend(x, y, *depth, *color, w);
        }
    }
    buf.finish()
}

/// Depth slack when deciding whether a point survives occlusion by nearby
/// splats. Larger than [`Z_BLEND`] so grazing surfaces do not occlude
/// themselves through their own footprint spread; any leakage this admits is
/// bounded by the same amount.
pub const OCCLUSION_TOL: f64 = 0.08;

/// Projected point splats, shared by the cloud renderers.
struct ProjectedCloud {
    width: usize,
    height: usize,
    /// (pixel x, pixel y, continuous position, depth, point index)
    splats: Vec<(u32, u32, [f64; 2], f64, u32)>,
}

fn project_cloud(pc: &GlobalPointCloud, cam: &CameraPose) -> ProjectedCloud {
    let (dw, dh) = (cam.width as usize, cam.height as usize);
    let mut splats = Vec::with_capacity(pc.len());
    for (i, p) in pc.points().iter().enumerate() {
        let proj = cam.project(&p.position);
        if !proj.in_front() {
            continue;
        }
        let x = proj.pixel[0].floor();
        let y = proj.pixel[1].floor();
        if x < 0.0 || y < 0.0 || x >= dw as f64 || y >= dh as f64 {
            continue;
        }
        splats.push((x as u32, y as u32, proj.pixel, proj.depth, i as u32));
    }
    ProjectedCloud {
        width: dw,
        height: dh,
        splats,
    }
}

/// Min depth over every splat's `(2R+1)^2` block, `R = footprint / 2`.
/// A pixel is covered exactly when some splat reaches it.
fn occlusion_buffer(pc: &ProjectedCloud, reach: i64) -> Vec<f64> {
    let (w, h) = (pc.width as i64, pc.height as i64);
    let mut occ = vec![f64::INFINITY; pc.width * pc.height];
    for (px, py, _, depth, _) in &pc.splats {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let x = *px as i64 + dx;
                let y = *py as i64 + dy;
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let i = (y * w + x) as usize;
                if *depth < occ[i] {
                    occ[i] = *depth;
                }
            }
        }
    }
    occ
}

/// Min depth over center taps that survive the occlusion test.
fn center_depth_buffer(pc: &ProjectedCloud, occ: &[f64]) -> Vec<f64> {
    let w = pc.width;
    let mut center = vec![f64::INFINITY; pc.width * pc.height];
    for (px, py, _, depth, _) in &pc.splats {
        let i = *py as usize * w + *px as usize;
        if *depth <= occ[i] + OCCLUSION_TOL && *depth < center[i] {
            center[i] = *depth;
        }
    }
    center
}

/// Renders the global point cloud with a 1-pixel footprint per point:
/// nearest depth wins per pixel, contributions within [`Z_BLEND`] of it
/// blend by weight. Also serves the consistency gate through
/// [`WarpedCondition::depth_map`].
pub fn render_pointcloud_view(pc: &GlobalPointCloud, cam: &CameraPose) -> WarpedCondition {
    render_pointcloud_view_with(pc, cam, 1)
}

/// [`render_pointcloud_view`] with a configurable square footprint.
///
/// With `footprint > 1` each point also occludes and fills a block of
/// `footprint/2` pixels around its own: per pixel, the winning depth is the
/// nearest *center* tap that no blockier neighbor occludes beyond
/// [`OCCLUSION_TOL`]; pixels without a center tap take the nearest block tap
/// instead. That closes the see-through pinholes of sparse clouds while
/// keeping the unbiased per-pixel depth where real samples exist.
/// `footprint = 1` reproduces the plain z-buffer semantics bit for bit.
pub fn render_pointcloud_view_with(
    pc: &GlobalPointCloud,
    cam: &CameraPose,
    footprint: usize,
) -> WarpedCondition {
    let reach = (footprint / 2) as i64;
    let projected = project_cloud(pc, cam);
    let occ = occlusion_buffer(&projected, reach);
    let center = center_depth_buffer(&projected, &occ);
    let (w, h) = (projected.width, projected.height);
    let points = pc.points();

    // Blend colors: center taps near the center winner; for pixels without
    // surviving center taps, block taps near the occlusion depth.
    let mut acc = vec![[0.0f64; 4]; w * h];
    for (px, py, _, depth, id) in &projected.splats {
        let i = *py as usize * w + *px as usize;
        if center[i].is_finite() && *depth <= center[i] + Z_BLEND {
            let c = points[*id as usize].color;
            acc[i][0] += f64::from(c[0]);
            acc[i][1] += f64::from(c[1]);
            acc[i][2] += f64::from(c[2]);
            acc[i][3] += 1.0;
        }
    }
    if reach > 0 {
        for (px, py, _, depth, id) in &projected.splats {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let x = *px as i64 + dx;
                    let y = *py as i64 + dy;
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let i = (y as usize) * w + x as usize;
                    if center[i].is_finite() || occ[i].is_infinite() {
                        continue;
                    }
                    if *depth <= occ[i] + Z_BLEND {
                        let c = points[*id as usize].color;
                        acc[i][0] += f64::from(c[0]);
                        acc[i][1] += f64::from(c[1]);
                        acc[i][2] += f64::from(c[2]);
                        acc[i][3] += 1.0;
                    }
                }
            }
        }
    }

    let mut image = RgbImage::new(w as u32, h as u32);
    let mut mask = Grid::filled(w, h, false);
    let mut depth = Grid::filled(w, h, 0.0);
    for i in 0..w * h {
        if acc[i][3] > 0.0 {
            let (x, y) = (i % w, i / w);
            let px = image.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                px.0[c] = (acc[i][c] / acc[i][3]).round().clamp(0.0, 255.0) as u8;
            }
            mask.set(x, y, true);
            depth.set(x, y, if center[i].is_finite() { center[i] } else { occ[i] });
        }
    }
    WarpedCondition { image, mask, depth }
}

/// Depth render for the consistency gate, without color work.
///
/// The validity mask covers exactly the pixels a splat landed *in*
/// (surviving the occlusion test); block-filled hole pixels carry no real
/// sample and are excluded rather than reported with interpolated depth.
/// The reported depth is the bilinear-footprint weighted mean of the
/// occlusion-surviving taps around each pixel center, which cancels the
/// sub-pixel sampling bias that a winner-take-all depth has on steep
/// (grazing) surfaces.
pub fn render_pointcloud_depth(
    pc: &GlobalPointCloud,
    cam: &CameraPose,
    footprint: usize,
) -> (crate::depth_align::DepthMap, Grid<bool>) {
    // The gate is the one consumer that must not see leak-through depths:
    // occlude over a wider reach than the render footprint so surfaces
    // whose sample spacing expanded under the viewpoint change still shadow
    // the geometry behind them.
    let reach = if footprint > 1 {
        ((footprint / 2) as i64).max(3)
    } else {
        0
    };
    let projected = project_cloud(pc, cam);
    let occ = occlusion_buffer(&projected, reach);
    let center = center_depth_buffer(&projected, &occ);
    let (w, h) = (projected.width, projected.height);

    let mut acc = vec![(0.0f64, 0.0f64); w * h];
    for (_, _, pos, depth, _) in &projected.splats {
        for (x, y, wgt) in bilinear_taps(*pos, w, h) {
            let i = y * w + x;
            if !center[i].is_finite() {
                continue;
            }
            if *depth <= occ[i] + OCCLUSION_TOL {
                acc[i].0 += wgt * *depth;
                acc[i].1 += wgt;
            }
        }
    }

    let mut depth = crate::depth_align::DepthMap::new(w, h);
    let mut mask = Grid::filled(w, h, false);
    for i in 0..w * h {
        if center[i].is_finite() {
            let (x, y) = (i % w, i / w);
            mask.set(x, y, true);
            let d = if acc[i].1 > MIN_TAP_WEIGHT {
                acc[i].0 / acc[i].1
            } else {
                center[i]
            };
            depth.set(x, y, d);
        }
    }
    (depth, mask)
}

/// Covered fraction of a cloud render (the view-selection overlap measure);
/// single pass, no color or depth output.
pub fn pointcloud_coverage(pc: &GlobalPointCloud, cam: &CameraPose, footprint: usize) -> f64 {
    let reach = (footprint / 2) as i64;
    let projected = project_cloud(pc, cam);
    let occ = occlusion_buffer(&projected, reach);
    let covered = occ.iter().filter(|d| d.is_finite()).count();
    covered as f64 / occ.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global_pointcloud::{GlobalPointCloud, PointRecord};
    use crate::scene_model::look_at;
    use nalgebra::Vector3;

    fn cam(eye: [f64; 3], target: [f64; 3]) -> CameraPose {
        let eye = Vector3::from(eye);
        CameraPose::new(
            eye,
            look_at(eye, Vector3::from(target)),
            (128.0, 128.0, 64.0, 64.0),
            (128, 128),
        )
        .unwrap()
    }

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x * 2) as u8, (y * 2) as u8, ((x + y) % 256) as u8])
        })
    }

    #[test]
    fn identity_pose_warp_is_exact() {
        let c = cam([0.0, 1.0, 0.0], [0.0, 1.0, 5.0]);
        let img = gradient_image(128, 128);
        let mut depth = DepthMap::new(128, 128);
        for y in 0..128 {
            for x in 0..128 {
                depth.set(x, y, 2.0 + 0.01 * (x as f64) + 0.005 * (y as f64));
            }
        }
        let out = warp_image(&img, &depth, &c, &c);
        for y in 0..128usize {
            for x in 0..128usize {
                assert!(out.mask.at(x, y), "source pixel must stay covered");
                assert_eq!(out.image.get_pixel(x as u32, y as u32), img.get_pixel(x as u32, y as u32));
                assert!((out.depth.at(x, y) - depth.at(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_translation_disparity_is_analytic() {
        // Fronto-parallel plane at depth 4, camera translated +x by 0.4:
        // every pixel shifts by -fx * tx / z = -12.8 px (fx = 128).
        let a = cam([0.0, 1.0, 0.0], [0.0, 1.0, 5.0]);
        let mut b = a.clone();
        b.position += a.rotation.transpose() * Vector3::new(0.4, 0.0, 0.0);
        for pixel in [[10.25, 99.5], [64.0, 64.0], [120.0, 3.75]] {
            let p = reproject_pixel(&a, &b, pixel, 4.0);
            assert!(p.in_front());
            assert!((p.pixel[0] - (pixel[0] - 12.8)).abs() < 1e-6);
            assert!((p.pixel[1] - pixel[1]).abs() < 1e-6);
            assert!((p.depth - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        // Two points projecting into the same pixel; the nearer one wins and
        // the farther is discarded (gap larger than the blend tolerance).
        let c = cam([0.0, 1.0, 0.0], [0.0, 1.0, 5.0]);
        let near = c.unproject([40.5, 40.5], 2.0);
        let far = c.unproject([40.5, 40.5], 3.0);
        let mut pc = GlobalPointCloud::unbounded();
        pc.merge(
            &[
                PointRecord { position: far, color: [10, 10, 10], source_view: 0 },
                PointRecord { position: near, color: [200, 200, 200], source_view: 0 },
            ],
            0.0,
        );
        let out = render_pointcloud_view(&pc, &c);
        assert!(out.mask.at(40, 40));
        assert_eq!(out.image.get_pixel(40, 40).0, [200, 200, 200]);
        assert!((out.depth.at(40, 40) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_cloud_renders_empty_mask() {
        let c = cam([0.0, 1.0, 0.0], [0.0, 1.0, 5.0]);
        let out = render_pointcloud_view(&GlobalPointCloud::unbounded(), &c);
        assert!(out.mask.data().iter().all(|m| !m));
        assert_eq!(out.coverage(), 0.0);
    }

    #[test]
    fn single_view_cloud_roundtrip_is_exact() {
        let c = cam([0.3, 1.2, -2.0], [0.0, 1.0, 3.0]);
        let img = gradient_image(128, 128);
        let mut depth = DepthMap::new(128, 128);
        for y in 0..128 {
            for x in 0..128 {
                depth.set(x, y, 3.0 + 0.002 * f64::from(x as u32 + y as u32));
            }
        }
        let pts = crate::global_pointcloud::project_pc(&img, &depth, &c, 1, 0);
        let mut pc = GlobalPointCloud::unbounded();
        pc.merge(&pts, 0.0);
        let out = render_pointcloud_view(&pc, &c);
        for y in 0..128usize {
            for x in 0..128usize {
                assert!(out.mask.at(x, y));
                assert_eq!(
                    out.image.get_pixel(x as u32, y as u32),
                    img.get_pixel(x as u32, y as u32)
                );
            }
        }
    }

    #[test]
    fn warped_colors_are_convex_combinations() {
        let a = cam([0.0, 1.0, 0.0], [0.0, 1.0, 5.0]);
        let mut b = a.clone();
        b.position += Vector3::new(0.17, 0.05, 0.0);
        let img = gradient_image(128, 128);
        let mut depth = DepthMap::new(128, 128);
        for y in 0..128 {
            for x in 0..128 {
                depth.set(x, y, 2.5 + 0.01 * (x as f64));
            }
        }
        let (mut lo, mut hi) = ([255u8; 3], [0u8; 3]);
        for p in img.pixels() {
            for c in 0..3 {
                lo[c] = lo[c].min(p.0[c]);
                hi[c] = hi[c].max(p.0[c]);
            }
        }
        let out = warp_image(&img, &depth, &a, &b);
        let mut covered = 0;
        for y in 0..128usize {
            for x in 0..128usize {
                if out.mask.at(x, y) {
                    covered += 1;
                    let px = out.image.get_pixel(x as u32, y as u32).0;
                    for c in 0..3 {
                        assert!(px[c] >= lo[c] && px[c] <= hi[c]);
                    }
                }
            }
        }
        assert!(covered > 100 * 100, "translation warp should cover most pixels");
    }
}

//! Object-focused camera trajectories: A* over the free-space grid inside a
//! distance band around the target, arc-length pose sampling with look-at
//! orientation, and the deduplicated dense view set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use thiserror::Error;

use crate::rng;
use crate::scene_model::{build_occupancy, look_at, CameraPose, OccupancyGrid, SceneLayout};

/// What a trajectory orbits: an object box, or the room center for empty
/// scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryTarget {
    Box(usize),
    RoomCenter,
}

#[derive(Debug, Clone)]
pub struct TrajectorySpec {
    pub target: TrajectoryTarget,
    /// Ground start position (x, z).
    pub start: Vector2<f64>,
    /// Camera height along this trajectory, fixed once sampled.
    pub height: f64,
    /// Distance band (r_min, r_max) from the target footprint.
    pub distance_band: (f64, f64),
    /// Sampling step along the path, meters.
    pub step: f64,
}

/// An ordered pose chain from one planned trajectory.
#[derive(Debug, Clone)]
pub struct PoseList {
    pub trajectory_id: u32,
    pub target: TrajectoryTarget,
    pub poses: Vec<CameraPose>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("start cell is not free")]
    StartBlocked,
    #[error("distance band unreachable from start")]
    NoPath,
}

/// Distance from a ground point to the target footprint (box rectangle or
/// the room-center point).
fn target_distance(layout: &SceneLayout, target: TrajectoryTarget, p: Vector2<f64>) -> f64 {
    match target {
        TrajectoryTarget::Box(i) => layout.boxes[i].footprint_distance(p),
        TrajectoryTarget::RoomCenter => (layout.shell.centroid() - p).norm(),
    }
}

/// The 3D point trajectory cameras look at.
pub fn target_point(layout: &SceneLayout, target: TrajectoryTarget) -> Vector3<f64> {
    match target {
        TrajectoryTarget::Box(i) => layout.boxes[i].center(),
        TrajectoryTarget::RoomCenter => {
            let c = layout.shell.centroid();
            Vector3::new(c.x, layout.shell.ceiling_height * 0.5, c.y)
        }
    }
}

const NEIGHBORS: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Max-heap entry ordered by lowest cost first, then lowest (row, col).
#[derive(PartialEq)]
struct Open {
    f: f64,
    row: usize,
    col: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.row.cmp(&self.row))
            .then_with(|| other.col.cmp(&self.col))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct BandGraph<'a> {
    grid: &'a OccupancyGrid,
    in_band: Vec<bool>,
}

impl<'a> BandGraph<'a> {
    fn new(grid: &'a OccupancyGrid, layout: &SceneLayout, spec: &TrajectorySpec) -> Self {
        let mut in_band = vec![false; grid.cols() * grid.rows()];
        for (col, row) in grid.free_cells() {
            let d = target_distance(layout, spec.target, grid.cell_center(col, row));
            if d >= spec.distance_band.0 && d <= spec.distance_band.1 {
                in_band[row * grid.cols() + col] = true;
            }
        }
        Self { grid, in_band }
    }

    #[inline]
    fn contains(&self, col: usize, row: usize) -> bool {
        self.in_band[row * self.grid.cols() + col]
    }

    /// 8-connected neighbors restricted to the band, diagonals blocked when
    /// either orthogonal neighbor is not free (no corner cutting).
    fn neighbors(&self, col: usize, row: usize) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(8);
        for (dc, dr) in NEIGHBORS {
            let nc = col as i64 + dc;
            let nr = row as i64 + dr;
            if nc < 0 || nr < 0 || nc >= self.grid.cols() as i64 || nr >= self.grid.rows() as i64 {
                continue;
            }
            let (nc, nr) = (nc as usize, nr as usize);
            if !self.contains(nc, nr) {
                continue;
            }
            if dc != 0 && dr != 0 {
                let side_a = (col as i64 + dc) as usize;
                let side_b = (row as i64 + dr) as usize;
                if !self.grid.is_free(side_a, row) || !self.grid.is_free(col, side_b) {
                    continue;
                }
            }
            let cost = if dc != 0 && dr != 0 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            } * self.grid.cell_size;
            out.push((nc, nr, cost));
        }
        out
    }
}

/// Dijkstra over a cell graph; returns per-cell geodesic distance
/// (INFINITY = unreachable) and predecessors.
fn dijkstra<F>(
    cols: usize,
    rows: usize,
    start: (usize, usize),
    neighbors: F,
) -> (Vec<f64>, Vec<Option<(usize, usize)>>)
where
    F: Fn(usize, usize) -> Vec<(usize, usize, f64)>,
{
    let mut dist = vec![f64::INFINITY; cols * rows];
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; cols * rows];
    let mut heap = BinaryHeap::new();
    dist[start.1 * cols + start.0] = 0.0;
    heap.push(Open {
        f: 0.0,
        row: start.1,
        col: start.0,
    });
    while let Some(Open { f, row, col }) = heap.pop() {
        let i = row * cols + col;
        if f > dist[i] {
            continue;
        }
        for (nc, nr, cost) in neighbors(col, row) {
            let ni = nr * cols + nc;
            let nd = f + cost;
            if nd < dist[ni] - 1e-12 {
                dist[ni] = nd;
                prev[ni] = Some((col, row));
                heap.push(Open {
                    f: nd,
                    row: nr,
                    col: nc,
                });
            }
        }
    }
    (dist, prev)
}

/// Octile-distance heuristic (admissible for 8-connected Euclidean costs).
fn octile(a: (usize, usize), b: (usize, usize), cell: f64) -> f64 {
    let dx = (a.0 as f64 - b.0 as f64).abs();
    let dy = (a.1 as f64 - b.1 as f64).abs();
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    cell * ((hi - lo) + std::f64::consts::SQRT_2 * lo)
}

/// Plans a 2D camera path: A* inside the free cells of the distance band
/// around the target, from the band cell nearest the start to the band cell
/// farthest (geodesically) from it. Returns cell-center waypoints.
pub fn plan_path(
    grid: &OccupancyGrid,
    layout: &SceneLayout,
    spec: &TrajectorySpec,
) -> Result<Vec<Vector2<f64>>, PlanError> {
    let start_cell = grid
        .cell_of(spec.start)
        .filter(|(c, r)| grid.is_free(*c, *r))
        .ok_or(PlanError::StartBlocked)?;

    let band = BandGraph::new(grid, layout, spec);

    // Entry: the start cell itself when inside the band, else the nearest
    // band cell reachable over free space.
    let entry = if band.contains(start_cell.0, start_cell.1) {
        start_cell
    } else {
        let (dist, _) = dijkstra(grid.cols(), grid.rows(), start_cell, |c, r| {
            free_neighbors(grid, c, r)
        });
        let mut best: Option<((usize, usize), f64)> = None;
        for row in 0..grid.rows() {
            for col in 0..grid.cols() {
                if !band.contains(col, row) {
                    continue;
                }
                let d = dist[row * grid.cols() + col];
                if d.is_finite() && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some(((col, row), d));
                }
            }
        }
        best.ok_or(PlanError::NoPath)?.0
    };

    // Goal: band cell maximizing geodesic distance from the entry.
    let (dist, _) = dijkstra(grid.cols(), grid.rows(), entry, |c, r| band.neighbors(c, r));
    let mut goal = entry;
    let mut best = 0.0f64;
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let d = dist[row * grid.cols() + col];
            if d.is_finite() && d > best {
                best = d;
                goal = (col, row);
            }
        }
    }

    // A* entry -> goal with octile heuristic.
    let path_cells = astar(grid, &band, entry, goal).ok_or(PlanError::NoPath)?;
    Ok(path_cells
        .into_iter()
        .map(|(c, r)| grid.cell_center(c, r))
        .collect())
}

fn free_neighbors(grid: &OccupancyGrid, col: usize, row: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(8);
    for (dc, dr) in NEIGHBORS {
        let nc = col as i64 + dc;
        let nr = row as i64 + dr;
        if nc < 0 || nr < 0 || nc >= grid.cols() as i64 || nr >= grid.rows() as i64 {
            continue;
        }
        let (nc, nr) = (nc as usize, nr as usize);
        if !grid.is_free(nc, nr) {
            continue;
        }
        if dc != 0 && dr != 0 && (!grid.is_free(nc, row) || !grid.is_free(col, nr)) {
            continue;
        }
        let cost = if dc != 0 && dr != 0 {
            std::f64::consts::SQRT_2
        } else {
            1.0
        } * grid.cell_size;
        out.push((nc, nr, cost));
    }
    out
}

fn astar(
    grid: &OccupancyGrid,
    band: &BandGraph,
    start: (usize, usize),
    goal: (usize, usize),
) -> Option<Vec<(usize, usize)>> {
    let cols = grid.cols();
    let mut g = vec![f64::INFINITY; cols * grid.rows()];
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; cols * grid.rows()];
    let mut heap = BinaryHeap::new();
    g[start.1 * cols + start.0] = 0.0;
    heap.push(Open {
        f: octile(start, goal, grid.cell_size),
        row: start.1,
        col: start.0,
    });
    while let Some(Open { row, col, .. }) = heap.pop() {
        if (col, row) == goal {
            let mut path = vec![goal];
            let mut cur = goal;
            while let Some(p) = prev[cur.1 * cols + cur.0] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for (nc, nr, cost) in band.neighbors(col, row) {
            let ni = nr * cols + nc;
            let ng = g[row * cols + col] + cost;
            if ng < g[ni] - 1e-12 {
                g[ni] = ng;
                prev[ni] = Some((col, row));
                heap.push(Open {
                    f: ng + octile((nc, nr), goal, grid.cell_size),
                    row: nr,
                    col: nc,
                });
            }
        }
    }
    None
}

/// Path length in meters.
pub fn path_length(path: &[Vector2<f64>]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn point_at_arclength(path: &[Vector2<f64>], s: f64) -> Vector2<f64> {
    let mut remaining = s;
    for w in path.windows(2) {
        let seg = (w[1] - w[0]).norm();
        if remaining <= seg {
            if seg == 0.0 {
                return w[0];
            }
            return w[0] + (w[1] - w[0]) * (remaining / seg);
        }
        remaining -= seg;
    }
    *path.last().unwrap()
}

fn pose_at(
    position2: Vector2<f64>,
    height: f64,
    target: Vector3<f64>,
    template: &CameraPose,
) -> CameraPose {
    let eye = Vector3::new(position2.x, height, position2.y);
    CameraPose {
        position: eye,
        rotation: look_at(eye, target),
        ..template.clone()
    }
}

/// Resamples a planned path at fixed arc-length intervals and builds look-at
/// poses toward the target. Consecutive poses whose rotation differs by more
/// than `angle_cap_deg` are smoothed by inserting midpoints.
pub fn sample_poses(
    path: &[Vector2<f64>],
    spec: &TrajectorySpec,
    layout: &SceneLayout,
    interval: f64,
    angle_cap_deg: f64,
    template: &CameraPose,
) -> Vec<CameraPose> {
    assert!(!path.is_empty(), "path must be nonempty");
    assert!(interval > 0.0);
    let target = target_point(layout, spec.target);
    let total = path_length(path);

    let mut stations: Vec<f64> = Vec::new();
    let mut s = 0.0;
    while s <= total + 1e-9 {
        stations.push(s.min(total));
        s += interval;
    }

    // Cap angular deltas by bisecting in arc length.
    let cap = angle_cap_deg.to_radians();
    let mut i = 0;
    let mut guard = 0;
    while i + 1 < stations.len() && guard < 100_000 {
        guard += 1;
        let a = pose_at(point_at_arclength(path, stations[i]), spec.height, target, template);
        let b = pose_at(
            point_at_arclength(path, stations[i + 1]),
            spec.height,
            target,
            template,
        );
        if a.rotation_angle_to(&b) > cap && stations[i + 1] - stations[i] > 1e-6 {
            stations.insert(i + 1, 0.5 * (stations[i] + stations[i + 1]));
        } else {
            i += 1;
        }
    }

    stations
        .into_iter()
        .map(|s| pose_at(point_at_arclength(path, s), spec.height, target, template))
        .collect()
}

/// Knobs for view-set construction, defaults from the generation recipe.
#[derive(Debug, Clone)]
pub struct ViewSetConfig {
    pub trajectories_per_object: usize,
    pub interval: f64,
    pub distance_band: (f64, f64),
    pub height_range: (f64, f64),
    pub dedup_distance: f64,
    pub dedup_angle_deg: f64,
    pub angle_cap_deg: f64,
    pub cell_size: f64,
    pub clearance: f64,
}

impl Default for ViewSetConfig {
    fn default() -> Self {
        Self {
            trajectories_per_object: 2,
            interval: 0.4,
            distance_band: (0.8, 3.0),
            height_range: (0.8, 2.5),
            dedup_distance: 0.4,
            dedup_angle_deg: 4.0,
            angle_cap_deg: 10.0,
            cell_size: 0.1,
            clearance: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkippedTrajectory {
    pub target: TrajectoryTarget,
    pub reason: String,
}

/// The deduplicated dense view set plus records of skipped trajectories.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub trajectories: Vec<PoseList>,
    pub skipped: Vec<SkippedTrajectory>,
}

impl ViewSet {
    pub fn total_poses(&self) -> usize {
        self.trajectories.iter().map(|t| t.poses.len()).sum()
    }
}

/// Greedy dedup: walking the pooled poses in order, a pose is dropped when
/// some already-kept pose is closer than `dist` AND within `angle_deg`.
/// Returns kept flags aligned with the input order.
pub fn dedup_flags(poses: &[&CameraPose], dist: f64, angle_deg: f64) -> Vec<bool> {
    let angle = angle_deg.to_radians();
    let mut kept_idx: Vec<usize> = Vec::new();
    let mut flags = vec![false; poses.len()];
    for (i, p) in poses.iter().enumerate() {
        let duplicate = kept_idx.iter().any(|&k| {
            let q = poses[k];
            (p.position - q.position).norm() < dist && p.rotation_angle_to(q) < angle
        });
        if !duplicate {
            kept_idx.push(i);
            flags[i] = true;
        }
    }
    flags
}

/// Start position rotated about the room centroid by `fraction` of a turn,
/// nudged in further rotation steps until it lands on a free cell; falls
/// back to the original start.
fn spread_start(
    grid: &OccupancyGrid,
    layout: &SceneLayout,
    start: Vector2<f64>,
    fraction: f64,
) -> Vector2<f64> {
    let c = layout.shell.centroid();
    let offset = start - c;
    for extra in 0..24 {
        let angle = fraction * std::f64::consts::TAU + f64::from(extra) * 0.26;
        let (s, co) = angle.sin_cos();
        let rotated = c + Vector2::new(co * offset.x - s * offset.y, s * offset.x + co * offset.y);
        if grid.point_is_free(rotated) {
            return rotated;
        }
    }
    start
}

/// Builds the dense view set: per object (or the room center when the scene
/// has no boxes), `trajectories_per_object` paths from the initial camera's
/// ground position at independently sampled heights, pooled and
/// deduplicated in trajectory-major order.
pub fn build_view_set(
    layout: &SceneLayout,
    initial_cam: &CameraPose,
    config: &ViewSetConfig,
    seed: u64,
) -> ViewSet {
    let grid = build_occupancy(layout, config.cell_size, config.clearance);
    let start = Vector2::new(initial_cam.position.x, initial_cam.position.z);

    // Object-less scenes orbit the room center instead; twice the usual
    // trajectory count compensates for the single target.
    let targets: Vec<(TrajectoryTarget, usize)> = if layout.boxes.is_empty() {
        vec![(TrajectoryTarget::RoomCenter, config.trajectories_per_object * 2)]
    } else {
        (0..layout.boxes.len())
            .map(|i| (TrajectoryTarget::Box(i), config.trajectories_per_object))
            .collect()
    };

    let mut raw: Vec<PoseList> = Vec::new();
    let mut skipped = Vec::new();
    let mut traj_id = 0u32;
    for (target, count) in targets {
        for k in 0..count {
            let mut height_rng = rng::stream_indexed(seed, "trajectory-height", u64::from(traj_id));
            let height = height_rng.random_range(config.height_range.0..config.height_range.1);
            // Room-center orbits would all trace the same arc from one
            // entry; spread their entries around the centroid so the ring
            // (and the walls behind it) gets swept from every side.
            let traj_start = match target {
                TrajectoryTarget::Box(_) => start,
                TrajectoryTarget::RoomCenter => {
                    spread_start(&grid, layout, start, k as f64 / count as f64)
                }
            };
            let spec = TrajectorySpec {
                target,
                start: traj_start,
                height,
                distance_band: config.distance_band,
                step: config.interval,
            };
            match plan_path(&grid, layout, &spec) {
                Ok(path) => {
                    let poses = sample_poses(
                        &path,
                        &spec,
                        layout,
                        config.interval,
                        config.angle_cap_deg,
                        initial_cam,
                    );
                    raw.push(PoseList {
                        trajectory_id: traj_id,
                        target,
                        poses,
                    });
                }
                Err(e) => skipped.push(SkippedTrajectory {
                    target,
                    reason: format!("trajectory {k}: {e}"),
                }),
            }
            traj_id += 1;
        }
    }

    // Pool in trajectory-major order and dedup greedily.
    let pooled: Vec<&CameraPose> = raw.iter().flat_map(|t| t.poses.iter()).collect();
    let flags = dedup_flags(&pooled, config.dedup_distance, config.dedup_angle_deg);

    let mut trajectories = Vec::new();
    let mut cursor = 0usize;
    for t in &raw {
        let mut kept = Vec::new();
        for p in &t.poses {
            if flags[cursor] {
                kept.push(p.clone());
            }
            cursor += 1;
        }
        if !kept.is_empty() {
            trajectories.push(PoseList {
                trajectory_id: t.trajectory_id,
                target: t.target,
                poses: kept,
            });
        }
    }
    ViewSet {
        trajectories,
        skipped,
    }
}

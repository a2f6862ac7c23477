//! Recursive scene generation: overlap-driven view selection over the dense
//! trajectory set, point-based image conditions from the global cloud, a
//! pluggable multi-view generator, and the per-view consistency gate that
//! decides which generated content feeds back into the cloud.

mod generators;

pub use generators::{
    AdversarialInitGenerator, CopyConditionGenerator, DepthCorruption, ExternalProcessGenerator,
    OracleDepthEstimator, OracleGenerator, SceneOracle,
};

use std::collections::VecDeque;

use image::RgbImage;
use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::depth_align::{rectify_depth, DepthEstimator};
use crate::global_pointcloud::{consistency_check_with_threshold, project_pc, GlobalPointCloud};
use crate::layout_raster::{render_stack, ConditionStack};
use crate::scene_model::{build_occupancy, CameraPose, SceneLayout};
use crate::trajectory::{build_view_set, PoseList, ViewSetConfig};
use crate::view_warp::{
    pointcloud_coverage, render_pointcloud_depth, render_pointcloud_view_with, WarpedCondition,
};

/// Source-view tag for points projected from the initial image.
pub const INIT_VIEW_TAG: u32 = u32::MAX;

/// One multi-view generation call: per view, the point-rendered image
/// condition, the layout condition stack, and the camera.
#[derive(Debug, Clone)]
pub struct GeneratorRequest {
    pub warped: Vec<WarpedCondition>,
    pub stacks: Vec<ConditionStack>,
    pub cameras: Vec<CameraPose>,
}

impl GeneratorRequest {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

#[derive(Debug, Error)]
#[error("generator failure: {0}")]
pub struct GeneratorFailure(pub String);

/// The neural multi-view model lives behind this boundary. Implementations
/// must return one image per requested view at the request resolution.
pub trait MultiViewGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<Vec<RgbImage>, GeneratorFailure>;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Generator(#[from] GeneratorFailure),
}

/// Per-view outcome of the consistency gate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AcceptRecord {
    pub view_index: usize,
    pub score: f64,
    pub accepted: bool,
    /// Pixels the gate compared (rendered-cloud coverage).
    pub gated_pixels: usize,
}

/// One selected batch: the winning trajectory and the view indices handed to
/// the generator (padded by repeating the last index when the trajectory is
/// nearly exhausted).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct BatchRecord {
    pub trajectory_id: u32,
    pub indices: Vec<usize>,
}

/// Everything the loop accumulates; also the return value of
/// [`run_generation`].
pub struct GenerationState {
    pub all_poses: Vec<CameraPose>,
    pub pose_trajectory: Vec<u32>,
    pub queues: Vec<VecDeque<usize>>,
    pub queue_ids: Vec<u32>,
    pub generated: Vec<bool>,
    pub cloud: GlobalPointCloud,
    pub gen_idx: Vec<usize>,
    pub gen_img: Vec<RgbImage>,
    pub log: Vec<AcceptRecord>,
    pub batches: Vec<BatchRecord>,
    pub skipped_trajectories: Vec<String>,
    pub initial_cam: CameraPose,
    pub seed: u64,
}

impl GenerationState {
    /// Flattens a view set into pose storage and per-trajectory queues.
    pub fn from_view_set(
        trajectories: &[PoseList],
        initial_cam: CameraPose,
        layout: &SceneLayout,
        seed: u64,
    ) -> Self {
        let mut all_poses = Vec::new();
        let mut pose_trajectory = Vec::new();
        let mut queues = Vec::new();
        let mut queue_ids = Vec::new();
        for t in trajectories {
            let mut q = VecDeque::with_capacity(t.poses.len());
            for p in &t.poses {
                q.push_back(all_poses.len());
                all_poses.push(p.clone());
                pose_trajectory.push(t.trajectory_id);
            }
            queues.push(q);
            queue_ids.push(t.trajectory_id);
        }
        let generated = vec![false; all_poses.len()];
        Self {
            all_poses,
            pose_trajectory,
            queues,
            queue_ids,
            generated,
            cloud: GlobalPointCloud::for_layout(layout),
            gen_idx: Vec::new(),
            gen_img: Vec::new(),
            log: Vec::new(),
            batches: Vec::new(),
            skipped_trajectories: Vec::new(),
            initial_cam,
            seed,
        }
    }

    pub fn accepted_count(&self) -> usize {
        self.log.iter().filter(|r| r.accepted).count()
    }
}

/// Outcome of one selection round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    Done,
    Batch(BatchRecord),
}

/// Picks the trajectory whose first ungenerated view overlaps the current
/// cloud the most (ties: lower trajectory id) and returns its next
/// `batch_size` consecutive ungenerated indices, padding by repeating the
/// last one. `Done` when every queue is empty, or when every candidate
/// overlap is zero while the cloud already has content.
pub fn select_views(state: &GenerationState, batch_size: usize, footprint: usize) -> Selection {
    let mut best: Option<(usize, f64)> = None; // queue slot, overlap
    for (slot, queue) in state.queues.iter().enumerate() {
        let Some(&head) = queue.front() else { continue };
        let overlap = pointcloud_coverage(&state.cloud, &state.all_poses[head], footprint);
        if best.is_none_or(|(_, b)| overlap > b) {
            best = Some((slot, overlap));
        }
    }
    let Some((slot, overlap)) = best else {
        return Selection::Done;
    };
    if overlap <= 0.0 && !state.cloud.is_empty() {
        return Selection::Done;
    }
    let queue = &state.queues[slot];
    let mut indices: Vec<usize> = queue.iter().take(batch_size).copied().collect();
    while indices.len() < batch_size {
        let last = *indices.last().expect("queue head exists");
        indices.push(last);
    }
    Selection::Batch(BatchRecord {
        trajectory_id: state.queue_ids[slot],
        indices,
    })
}

/// Nearest nonzero condition layer (by depth) at one pixel: the layout
/// structure a depth value most plausibly belongs to. The background hit
/// terminates the layer list, so the last nonzero layer doubles as the
/// background slot.
fn nearest_layer(stack: &ConditionStack, x: usize, y: usize, depth: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for l in 0..stack.layers {
        let d = f64::from(stack.depth_at(x, y, l));
        if d <= 0.0 {
            break;
        }
        let err = (depth - d).abs();
        if best.is_none_or(|(_, b)| err < b) {
            best = Some((l, err));
        }
    }
    best.map(|(l, _)| l)
}

/// Restriction of the consistency gate to pixels where the predicted and
/// rendered depths bucket to the same layout layer. Content on different
/// condition layers (a freshly revealed surface versus geometry behind it)
/// is not comparable: both depths are layout-consistent, they just belong
/// to different structures, and only the generated content decides which
/// layer is the visible one.
pub fn same_layer_mask(
    stack: &ConditionStack,
    pred: &crate::depth_align::DepthMap,
    rendered: &crate::depth_align::DepthMap,
    coverage: &crate::grid::Grid<bool>,
) -> crate::grid::Grid<bool> {
    let mut out = coverage.clone();
    for y in 0..stack.height {
        for x in 0..stack.width {
            if !out.at(x, y) || !pred.is_valid(x, y) || !rendered.is_valid(x, y) {
                continue;
            }
            let a = nearest_layer(stack, x, y, pred.at(x, y));
            let b = nearest_layer(stack, x, y, rendered.at(x, y));
            if a != b {
                out.set(x, y, false);
            }
        }
    }
    out
}

/// Loop configuration with the published defaults.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub views_per_batch: usize,
    pub layers: usize,
    pub stride: usize,
    pub dedup_radius: f64,
    pub consistency_threshold: f64,
    /// Square splat footprint for cloud renders inside the loop; 1 is the
    /// plain z-buffer, 3 closes pinholes of stride-sampled clouds.
    pub splat_footprint: usize,
    pub seed: u64,
    pub view_set: ViewSetConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            views_per_batch: 4,
            layers: 3,
            stride: 2,
            dedup_radius: 0.005,
            consistency_threshold: crate::global_pointcloud::CONSISTENCY_THRESHOLD,
            splat_footprint: 3,
            seed: 0,
            view_set: ViewSetConfig::default(),
        }
    }
}

/// Observation hook for per-batch artifacts (the CLI writes files from it).
pub trait BatchObserver {
    fn on_batch(
        &mut self,
        batch_index: usize,
        batch: &BatchRecord,
        request: &GeneratorRequest,
        images: &[RgbImage],
    );
}

/// Ignores everything.
pub struct NoopObserver;

impl BatchObserver for NoopObserver {
    fn on_batch(&mut self, _: usize, _: &BatchRecord, _: &GeneratorRequest, _: &[RgbImage]) {}
}

/// Runs the full recursive generation loop.
///
/// The initial image seeds the global cloud through the depth estimator and
/// layout rectification; each following batch renders point-based image
/// conditions from the cloud, calls the generator, and gates every generated
/// view by depth consistency before its points may join the cloud. Rejected
/// views keep their images (`gen_img`), they just do not contribute points.
pub fn run_generation(
    layout: &SceneLayout,
    initial_image: &RgbImage,
    initial_cam: &CameraPose,
    generator: &mut dyn MultiViewGenerator,
    estimator: &dyn DepthEstimator,
    config: &GenConfig,
    observer: &mut dyn BatchObserver,
) -> Result<GenerationState, RunError> {
    let grid = build_occupancy(layout, config.view_set.cell_size, config.view_set.clearance);
    let ground = Vector2::new(initial_cam.position.x, initial_cam.position.z);
    if !grid.point_is_free(ground) {
        return Err(RunError::InvalidInput(
            "initial camera is not over free space".into(),
        ));
    }
    if (initial_image.width(), initial_image.height()) != (initial_cam.width, initial_cam.height) {
        return Err(RunError::InvalidInput(format!(
            "initial image {}x{} does not match camera resolution {}x{}",
            initial_image.width(),
            initial_image.height(),
            initial_cam.width,
            initial_cam.height
        )));
    }

    let view_set = build_view_set(layout, initial_cam, &config.view_set, config.seed);
    let mut state =
        GenerationState::from_view_set(&view_set.trajectories, initial_cam.clone(), layout, config.seed);
    state.skipped_trajectories = view_set
        .skipped
        .iter()
        .map(|s| format!("{:?}: {}", s.target, s.reason))
        .collect();

    // Seed the cloud from the initial view (Algorithm lines 4-5).
    let stack0 = render_stack(layout, initial_cam, config.layers);
    let d_rel = estimator.estimate(initial_image, initial_cam);
    let d0 = rectify_depth(&d_rel, &stack0);
    state.cloud.merge(
        &project_pc(initial_image, &d0, initial_cam, config.stride, INIT_VIEW_TAG),
        config.dedup_radius,
    );

    let max_batches = state.all_poses.len() + 1;
    for batch_index in 0..max_batches {
        let batch = match select_views(&state, config.views_per_batch, config.splat_footprint) {
            Selection::Done => break,
            Selection::Batch(b) => b,
        };

        // Condition building for the batch runs in parallel per view.
        let per_view: Vec<(WarpedCondition, ConditionStack)> = batch
            .indices
            .par_iter()
            .map(|idx| {
                let cam = &state.all_poses[*idx];
                (
                    render_pointcloud_view_with(&state.cloud, cam, config.splat_footprint),
                    render_stack(layout, cam, config.layers),
                )
            })
            .collect();
        let request = GeneratorRequest {
            warped: per_view.iter().map(|(w, _)| w.clone()).collect(),
            stacks: per_view.iter().map(|(_, s)| s.clone()).collect(),
            cameras: batch.indices.iter().map(|i| state.all_poses[*i].clone()).collect(),
        };
        let images = generator.generate(&request)?;
        if images.len() != request.len() {
            return Err(RunError::Generator(GeneratorFailure(format!(
                "expected {} images, got {}",
                request.len(),
                images.len()
            ))));
        }
        observer.on_batch(batch_index, &batch, &request, &images);

        let slot = state
            .queue_ids
            .iter()
            .position(|id| *id == batch.trajectory_id)
            .expect("selected trajectory exists");
        for (pos, idx) in batch.indices.iter().enumerate() {
            if state.generated[*idx] {
                continue; // padding repeats the trajectory tail
            }
            state.generated[*idx] = true;
            debug_assert_eq!(state.queues[slot].front(), Some(idx));
            state.queues[slot].pop_front();

            let image = &images[pos];
            state.gen_idx.push(*idx);
            state.gen_img.push(image.clone());

            let cam = &state.all_poses[*idx];
            let d_rel = estimator.estimate(image, cam);
            let d_hat = rectify_depth(&d_rel, &per_view[pos].1);
            let (render_depth, render_mask) =
                render_pointcloud_depth(&state.cloud, cam, config.splat_footprint);
            let gate_mask = same_layer_mask(&per_view[pos].1, &d_hat, &render_depth, &render_mask);
            let gated_pixels = gate_mask.data().iter().filter(|m| **m).count();
            let (score, accepted) = consistency_check_with_threshold(
                &d_hat,
                &render_depth,
                &gate_mask,
                config.consistency_threshold,
            );
            state.log.push(AcceptRecord {
                view_index: *idx,
                score,
                accepted,
                gated_pixels,
            });
            if accepted {
                state.cloud.merge(
                    &project_pc(image, &d_hat, cam, config.stride, *idx as u32),
                    config.dedup_radius,
                );
            }
        }
        state.batches.push(batch);
    }

    Ok(state)
}

//! Run manifest: everything needed to reproduce and audit one `generate`
//! invocation. The timestamp is the only field allowed to differ between
//! reruns with the same seed.

use serde::Serialize;

use layoutmv_core::orchestrator::{AcceptRecord, BatchRecord};
use layoutmv_core::scene_model::CameraPose;

#[derive(Serialize)]
pub struct TrajectorySummary {
    pub trajectory_id: u32,
    /// Box index, or null for room-center orbits.
    pub target_box: Option<usize>,
    pub poses: usize,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub config: super::commands::RunConfigEcho,
    pub generator: String,
    pub initial_camera: CameraPose,
    pub trajectories: Vec<TrajectorySummary>,
    pub skipped_trajectories: Vec<String>,
    pub batches: Vec<BatchRecord>,
    pub gate_log: Vec<AcceptRecord>,
    pub accepted_views: usize,
    pub generated_views: usize,
    pub global_points: usize,
    pub artifacts: Vec<String>,
    /// Unix seconds; excluded from determinism comparisons.
    pub timestamp: u64,
}

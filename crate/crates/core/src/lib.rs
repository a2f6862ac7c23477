//! Deterministic geometry engine for layout-conditioned multi-view indoor
//! scene generation.
//!
//! The crate covers everything around the neural generator, which stays
//! behind the [`orchestrator::MultiViewGenerator`] trait:
//!
//! - [`scene_model`]: oriented-box layouts, the room shell, cameras, and
//!   analytic ray casting against the layout.
//! - [`layout_raster`]: multi-layer semantic/depth condition images and the
//!   local/global spatial embeddings.
//! - [`depth_align`]: inverse-depth least-squares rectification of predicted
//!   depth against the layout.
//! - [`view_warp`]: forward warping of condition images and point-cloud
//!   rendering with z-buffered splats.
//! - [`epipolar_attn`]: layout-constrained epipolar attention masks and a
//!   reference masked attention operator.
//! - [`trajectory`]: occupancy-grid A* camera trajectories and the
//!   deduplicated dense view set.
//! - [`global_pointcloud`]: the colored global point cloud and the geometric
//!   consistency gate.
//! - [`orchestrator`]: the recursive scene-generation loop.
//! - [`fixtures`]: synthetic scenes plus an oracle renderer used as a
//!   stand-in generator in tests and CLI runs.

pub mod depth_align;
pub mod epipolar_attn;
pub mod fixtures;
pub mod formats;
pub mod global_pointcloud;
pub mod grid;
pub mod layout_raster;
pub mod orchestrator;
pub mod rng;
pub mod scene_model;
pub mod trajectory;
pub mod verify;
pub mod view_warp;

pub use depth_align::{DepthEstimator, DepthMap};
pub use grid::Grid;
pub use layout_raster::ConditionStack;
pub use scene_model::{
    BackgroundShell, CameraPose, OccupancyGrid, OrientedBox, RayHit, SceneLayout, SurfaceKind,
};

//! Subcommand implementations.

use std::path::{Path, PathBuf};

use clap::Args;
use image::RgbImage;
use serde_json::json;

use layoutmv_core::depth_align::rectify_depth;
use layoutmv_core::epipolar_attn::{compute_la_mask_with, MaskOptions};
use layoutmv_core::fixtures::{
    fixture_occupancy, fixture_scene, sample_valid_camera, FixtureKind, ViewFilters,
};
use layoutmv_core::formats;
use layoutmv_core::global_pointcloud::GlobalPointCloud;
use layoutmv_core::layout_raster::render_stack;
use layoutmv_core::orchestrator::{
    run_generation, AdversarialInitGenerator, BatchObserver, BatchRecord, CopyConditionGenerator,
    DepthCorruption, ExternalProcessGenerator, GenConfig, GeneratorRequest, MultiViewGenerator,
    OracleDepthEstimator, OracleGenerator, SceneOracle,
};
use layoutmv_core::scene_model::{CameraPose, SceneLayout};
use layoutmv_core::trajectory::{build_view_set, TrajectoryTarget, ViewSetConfig};
use layoutmv_core::view_warp::{render_pointcloud_view_with, warp_image};
use layoutmv_core::rng;

use crate::manifest::{RunManifest, TrajectorySummary};
use crate::{input_err, internal_err, CliError, CliResult, Logger};

fn load_scene(path: &Path) -> Result<SceneLayout, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_err(format!("scene {}: {e}", path.display())))?;
    SceneLayout::from_json(&text).map_err(|e| input_err(format!("scene {}: {e}", path.display())))
}

fn load_camera(path: &Path) -> Result<CameraPose, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_err(format!("camera {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_err(format!("camera {}: {e}", path.display())))
}

fn load_cameras(path: &Path) -> Result<Vec<CameraPose>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_err(format!("cameras {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_err(format!("cameras {}: {e}", path.display())))
}

fn load_image(path: &Path) -> Result<RgbImage, CliError> {
    Ok(image::open(path)
        .map_err(|e| input_err(format!("image {}: {e}", path.display())))?
        .to_rgb8())
}

fn ensure_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path).map_err(|e| internal_err(format!("{}: {e}", path.display())))
}

fn save<T>(r: Result<T, impl std::fmt::Display>, what: &str) -> Result<T, CliError> {
    r.map_err(|e| internal_err(format!("{what}: {e}")))
}

// ---------------------------------------------------------------------------
// rasterize

#[derive(Args)]
pub struct RasterizeArgs {
    #[arg(long)]
    scene: PathBuf,
    /// JSON array of camera objects.
    #[arg(long)]
    cameras: PathBuf,
    /// Condition layer count m.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write sem/depth preview PNGs per view.
    #[arg(long)]
    png_previews: bool,
}

pub fn cmd_rasterize(args: RasterizeArgs, logs: &Logger) -> CliResult {
    if args.layers < 1 {
        return Err(input_err("--layers must be >= 1"));
    }
    let scene = load_scene(&args.scene)?;
    let cameras = load_cameras(&args.cameras)?;
    if cameras.is_empty() {
        return Err(input_err("camera list is empty"));
    }
    ensure_dir(&args.out)?;
    for (i, cam) in cameras.iter().enumerate() {
        let stack = render_stack(&scene, cam, args.layers);
        let path = args.out.join(format!("cond_{i:03}.mvrc"));
        save(formats::write_condition_stack(&path, &stack), "condition write")?;
        if args.png_previews {
            save(
                formats::sem_preview(&stack).save(args.out.join(format!("sem_{i:03}.png"))),
                "sem preview",
            )?;
            save(
                formats::depth_preview(&stack).save(args.out.join(format!("depth_{i:03}.png"))),
                "depth preview",
            )?;
        }
        logs.step(json!({"step": "rasterize", "view": i, "file": path.display().to_string()}));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// align-depth

#[derive(Args)]
pub struct AlignDepthArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Input depth map (MVRC f32, m=1).
    #[arg(long)]
    depth: PathBuf,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_align_depth(args: AlignDepthArgs, logs: &Logger) -> CliResult {
    if args.layers < 2 {
        return Err(input_err("--layers must be >= 2 for fg/bg masks"));
    }
    let scene = load_scene(&args.scene)?;
    let cam = load_camera(&args.camera)?;
    let depth = formats::read_depth(&args.depth)
        .map_err(|e| input_err(format!("depth {}: {e}", args.depth.display())))?;
    if (depth.width(), depth.height()) != (cam.width as usize, cam.height as usize) {
        return Err(input_err("depth resolution does not match the camera"));
    }
    let stack = render_stack(&scene, &cam, args.layers);
    let rectified = rectify_depth(&depth, &stack);
    save(formats::write_depth(&args.out, &rectified), "depth write")?;
    logs.step(json!({
        "step": "align-depth",
        "valid_pixels": rectified.valid_count(),
        "file": args.out.display().to_string(),
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// warp

#[derive(Args)]
pub struct WarpArgs {
    #[arg(long)]
    image: PathBuf,
    /// Source depth (MVRC f32, m=1), typically rectified.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    src_camera: PathBuf,
    #[arg(long)]
    dst_camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_warp(args: WarpArgs, logs: &Logger) -> CliResult {
    let img = load_image(&args.image)?;
    let depth = formats::read_depth(&args.depth)
        .map_err(|e| input_err(format!("depth {}: {e}", args.depth.display())))?;
    let src = load_camera(&args.src_camera)?;
    let dst = load_camera(&args.dst_camera)?;
    if (img.width(), img.height()) != (src.width, src.height) {
        return Err(input_err("image resolution does not match the source camera"));
    }
    ensure_dir(&args.out)?;
    let warped = warp_image(&img, &depth, &src, &dst);
    save(warped.image.save(args.out.join("warped.png")), "warped image")?;
    save(
        formats::write_mask_png(&args.out.join("mask.png"), &warped.mask),
        "mask write",
    )?;
    save(
        formats::write_depth(&args.out.join("depth.mvrc"), &warped.depth_map()),
        "depth write",
    )?;
    logs.step(json!({"step": "warp", "coverage": warped.coverage()}));
    Ok(())
}

// ---------------------------------------------------------------------------
// epimask

#[derive(Args)]
pub struct EpimaskArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long, default_value_t = 0)]
    query_view: usize,
    /// Feature-grid edge (cells); the grid is square.
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 1)]
    dilation: usize,
    /// Skip the background-hit contribution (boxes only).
    #[arg(long)]
    no_background: bool,
    #[arg(long)]
    out: PathBuf,
    /// Emit mask-overlay PNGs for one query cell, as `row,col`.
    #[arg(long)]
    viz_cell: Option<String>,
    #[arg(long)]
    viz_dir: Option<PathBuf>,
}

pub fn cmd_epimask(args: EpimaskArgs, logs: &Logger) -> CliResult {
    let scene = load_scene(&args.scene)?;
    let cameras = load_cameras(&args.cameras)?;
    if cameras.len() < 2 {
        return Err(input_err("need at least two cameras"));
    }
    if args.query_view >= cameras.len() {
        return Err(input_err("--query-view out of range"));
    }
    if args.resolution == 0 {
        return Err(input_err("--resolution must be > 0"));
    }
    let opts = MaskOptions {
        dilation: args.dilation,
        include_background: !args.no_background,
    };
    let mask = compute_la_mask_with(
        &scene,
        &cameras,
        args.query_view,
        (args.resolution, args.resolution),
        &opts,
    );
    save(formats::write_mask(&args.out, &mask), "mask write")?;
    logs.step(json!({
        "step": "epimask",
        "query_view": args.query_view,
        "bits": mask.count_ones(),
        "file": args.out.display().to_string(),
    }));

    if let Some(cell) = &args.viz_cell {
        let dir = args
            .viz_dir
            .clone()
            .ok_or_else(|| input_err("--viz-cell requires --viz-dir"))?;
        let (r, c) = cell
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
            .ok_or_else(|| input_err("--viz-cell must be row,col"))?;
        if r >= args.resolution || c >= args.resolution {
            return Err(input_err("--viz-cell out of grid bounds"));
        }
        ensure_dir(&dir)?;
        write_mask_viz(&scene, &cameras, &mask, args.query_view, (r, c), &dir)?;
    }
    Ok(())
}

/// Query-dot image for the query view plus mask overlays for every other
/// view, drawn over low-resolution semantic renders.
fn write_mask_viz(
    scene: &SceneLayout,
    cameras: &[CameraPose],
    mask: &layoutmv_core::epipolar_attn::LayoutEpipolarMask,
    query_view: usize,
    cell: (usize, usize),
    dir: &Path,
) -> CliResult {
    let (h, w) = mask.resolution;
    let upscale = 8u32;
    let render_base = |cam: &CameraPose| -> RgbImage {
        let probe = cam.scaled_to(w as u32 * upscale, h as u32 * upscale);
        let stack = render_stack(scene, &probe, 1);
        formats::sem_preview(&stack)
    };

    let mut query_img = render_base(&cameras[query_view]);
    paint_cell(&mut query_img, cell, upscale, [255, 32, 32]);
    save(query_img.save(dir.join("query.png")), "viz write")?;

    for (j, cam) in cameras.iter().enumerate() {
        if j == query_view {
            continue;
        }
        let mut img = render_base(cam);
        for key in mask.row_cells(cell, j) {
            paint_cell(&mut img, (key / w, key % w), upscale, [64, 220, 64]);
        }
        save(img.save(dir.join(format!("mask_view_{j}.png"))), "viz write")?;
    }
    Ok(())
}

fn paint_cell(img: &mut RgbImage, cell: (usize, usize), upscale: u32, color: [u8; 3]) {
    let (r, c) = cell;
    for dy in 0..upscale {
        for dx in 0..upscale {
            let x = c as u32 * upscale + dx;
            let y = r as u32 * upscale + dy;
            if x < img.width() && y < img.height() {
                let p = img.get_pixel_mut(x, y);
                for ch in 0..3 {
                    p.0[ch] = ((u16::from(p.0[ch]) + 2 * u16::from(color[ch])) / 3) as u8;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// plan-traj

#[derive(Args)]
pub struct PlanTrajArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Pose sampling interval in meters.
    #[arg(long, default_value_t = 0.4)]
    interval: f64,
    /// Camera template; when absent a valid camera is sampled from the seed.
    #[arg(long)]
    init_camera: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    resolution: u32,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_plan_traj(args: PlanTrajArgs, logs: &Logger) -> CliResult {
    let scene = load_scene(&args.scene)?;
    if args.interval <= 0.0 {
        return Err(input_err("--interval must be > 0"));
    }
    let init = match &args.init_camera {
        Some(path) => load_camera(path)?,
        None => sample_init_camera(&scene, args.seed, args.resolution)?,
    };
    let config = ViewSetConfig {
        interval: args.interval,
        ..ViewSetConfig::default()
    };
    let view_set = build_view_set(&scene, &init, &config, args.seed);

    let mut entries = Vec::new();
    for t in &view_set.trajectories {
        for pose in &t.poses {
            let mut obj = serde_json::to_value(pose)
                .map_err(|e| internal_err(format!("pose serialize: {e}")))?;
            let map = obj.as_object_mut().expect("camera serializes to an object");
            map.insert("trajectory_id".into(), json!(t.trajectory_id));
            map.insert(
                "target_box".into(),
                match t.target {
                    TrajectoryTarget::Box(i) => json!(i),
                    TrajectoryTarget::RoomCenter => serde_json::Value::Null,
                },
            );
            map.insert("seed".into(), json!(args.seed));
            entries.push(obj);
        }
    }
    let body = serde_json::to_string_pretty(&entries)
        .map_err(|e| internal_err(format!("serialize: {e}")))?;
    std::fs::write(&args.out, body).map_err(|e| internal_err(format!("write: {e}")))?;
    logs.step(json!({
        "step": "plan-traj",
        "trajectories": view_set.trajectories.len(),
        "poses": view_set.total_poses(),
        "skipped": view_set.skipped.len(),
    }));
    Ok(())
}

fn sample_init_camera(scene: &SceneLayout, seed: u64, resolution: u32) -> Result<CameraPose, CliError> {
    let grid = fixture_occupancy(scene);
    let mut r = rng::stream(seed, "cli-init-camera");
    sample_valid_camera(scene, &grid, &mut r, resolution, &ViewFilters::default())
        .ok_or_else(|| input_err("no valid initial camera found for this scene"))
}

// ---------------------------------------------------------------------------
// render-pc

#[derive(Args)]
pub struct RenderPcArgs {
    #[arg(long)]
    ply: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Square splat footprint in pixels.
    #[arg(long, default_value_t = 1)]
    footprint: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_render_pc(args: RenderPcArgs, logs: &Logger) -> CliResult {
    let points = formats::read_ply(&args.ply)
        .map_err(|e| input_err(format!("ply {}: {e}", args.ply.display())))?;
    let cam = load_camera(&args.camera)?;
    if args.footprint == 0 {
        return Err(input_err("--footprint must be >= 1"));
    }
    ensure_dir(&args.out)?;
    let mut pc = GlobalPointCloud::unbounded();
    pc.merge(&points, 0.0);
    let wc = render_pointcloud_view_with(&pc, &cam, args.footprint);
    save(wc.image.save(args.out.join("image.png")), "image write")?;
    save(
        formats::write_mask_png(&args.out.join("mask.png"), &wc.mask),
        "mask write",
    )?;
    save(
        formats::write_depth(&args.out.join("depth.mvrc"), &wc.depth_map()),
        "depth write",
    )?;
    logs.step(json!({"step": "render-pc", "points": pc.len(), "coverage": wc.coverage()}));
    Ok(())
}

// ---------------------------------------------------------------------------
// fixture

#[derive(Args)]
pub struct FixtureArgs {
    /// One of: empty_room, one_box, bedroom5, random.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Additionally sample this many filter-passing cameras.
    #[arg(long, default_value_t = 0)]
    emit_cameras: usize,
    #[arg(long)]
    cameras_out: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    resolution: u32,
}

pub fn cmd_fixture(args: FixtureArgs, logs: &Logger) -> CliResult {
    let kind = FixtureKind::parse(&args.kind, args.seed)
        .ok_or_else(|| input_err(format!("unknown fixture kind '{}'", args.kind)))?;
    let scene = fixture_scene(kind);
    std::fs::write(&args.out, scene.to_json())
        .map_err(|e| internal_err(format!("write: {e}")))?;
    logs.step(json!({
        "step": "fixture",
        "kind": args.kind,
        "boxes": scene.boxes.len(),
        "file": args.out.display().to_string(),
    }));

    if args.emit_cameras > 0 {
        let out = args
            .cameras_out
            .clone()
            .ok_or_else(|| input_err("--emit-cameras requires --cameras-out"))?;
        let grid = fixture_occupancy(&scene);
        let mut r = rng::stream(args.seed, "fixture-cameras");
        let mut cams = Vec::new();
        for _ in 0..args.emit_cameras {
            let cam =
                sample_valid_camera(&scene, &grid, &mut r, args.resolution, &ViewFilters::default())
                    .ok_or_else(|| internal_err("failed to sample a valid camera"))?;
            cams.push(cam);
        }
        let body = serde_json::to_string_pretty(&cams)
            .map_err(|e| internal_err(format!("serialize: {e}")))?;
        std::fs::write(&out, body).map_err(|e| internal_err(format!("write: {e}")))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// generate

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Views per generation batch (N).
    #[arg(long, default_value_t = 4)]
    views_per_batch: usize,
    /// Condition layers (m).
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 512)]
    resolution: u32,
    /// Trajectory pose interval, meters.
    #[arg(long, default_value_t = 0.4)]
    interval: f64,
    /// Pose dedup distance threshold, meters.
    #[arg(long, default_value_t = 0.4)]
    dedup_distance: f64,
    /// Pose dedup angle threshold, degrees.
    #[arg(long, default_value_t = 4.0)]
    dedup_angle: f64,
    /// Consistency gate threshold, meters.
    #[arg(long, default_value_t = 0.02)]
    consistency_threshold: f64,
    /// Epipolar mask resolutions emitted for the first batch.
    #[arg(long, value_delimiter = ',', default_values_t = vec![32usize, 64])]
    mask_resolutions: Vec<usize>,
    /// Epipolar mask dilation, cells.
    #[arg(long, default_value_t = 1)]
    dilation: usize,
    /// Generator: oracle, copy, adversarial, or external:<path>.
    #[arg(long, default_value = "oracle")]
    generator: String,
    /// Initial image; rendered by the oracle when omitted.
    #[arg(long)]
    init_image: Option<PathBuf>,
    /// Initial camera; sampled from the seed when omitted.
    #[arg(long)]
    init_camera: Option<PathBuf>,
    /// Inverse-depth noise sigma of the bundled depth estimator.
    #[arg(long, default_value_t = 1e-3)]
    depth_noise: f64,
    /// Emit per-batch condition artifacts: first, all, or none.
    #[arg(long, default_value = "first")]
    emit_conditions: String,
    #[arg(long)]
    out: PathBuf,
}

/// Config echo for the manifest.
#[derive(serde::Serialize)]
pub struct RunConfigEcho {
    pub scene: String,
    pub seed: u64,
    pub views_per_batch: usize,
    pub layers: usize,
    pub resolution: u32,
    pub interval: f64,
    pub dedup_distance: f64,
    pub dedup_angle_deg: f64,
    pub consistency_threshold: f64,
    pub mask_resolutions: Vec<usize>,
    pub dilation: usize,
    pub stride: usize,
    pub splat_footprint: usize,
    pub pc_dedup_radius: f64,
    pub depth_noise: f64,
}

struct ArtifactWriter {
    out: PathBuf,
    emit: EmitConditions,
    scene: SceneLayout,
    mask_resolutions: Vec<usize>,
    dilation: usize,
    artifacts: Vec<String>,
    error: Option<String>,
}

#[derive(PartialEq, Clone, Copy)]
enum EmitConditions {
    First,
    All,
    None,
}

impl ArtifactWriter {
    fn record(&mut self, name: String) {
        self.artifacts.push(name);
    }

    fn try_write(&mut self, batch_index: usize, batch: &BatchRecord, request: &GeneratorRequest, images: &[RgbImage]) -> Result<(), String> {
        for (pos, idx) in batch.indices.iter().enumerate() {
            // Padding repeats indices; first occurrence wins.
            if batch.indices[..pos].contains(idx) {
                continue;
            }
            let name = format!("gen_{idx:04}.png");
            images[pos]
                .save(self.out.join(&name))
                .map_err(|e| e.to_string())?;
            self.record(name);
        }
        let emit_batch = match self.emit {
            EmitConditions::All => true,
            EmitConditions::First => batch_index == 0,
            EmitConditions::None => false,
        };
        if !emit_batch {
            return Ok(());
        }
        let dir = self.out.join(format!("batch_{batch_index:03}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        formats::write_request_dir(&dir, &request.cameras, &request.stacks, &request.warped)
            .map_err(|e| e.to_string())?;
        self.record(format!("batch_{batch_index:03}/cameras.json"));
        for i in 0..request.len() {
            self.record(format!("batch_{batch_index:03}/cond_{i}.mvrc"));
            self.record(format!("batch_{batch_index:03}/warped_{i}.png"));
            self.record(format!("batch_{batch_index:03}/mask_{i}.png"));
        }
        let resolutions = self.mask_resolutions.clone();
        for res in &resolutions {
            for q in 0..request.len() {
                let mask = compute_la_mask_with(
                    &self.scene,
                    &request.cameras,
                    q,
                    (*res, *res),
                    &MaskOptions {
                        dilation: self.dilation,
                        include_background: true,
                    },
                );
                let name = format!("batch_{batch_index:03}/epimask_r{res}_q{q}.mvrc");
                formats::write_mask(&self.out.join(&name), &mask).map_err(|e| e.to_string())?;
                self.record(name);
            }
        }
        Ok(())
    }
}

impl BatchObserver for ArtifactWriter {
    fn on_batch(
        &mut self,
        batch_index: usize,
        batch: &BatchRecord,
        request: &GeneratorRequest,
        images: &[RgbImage],
    ) {
        if self.error.is_none() {
            if let Err(e) = self.try_write(batch_index, batch, request, images) {
                self.error = Some(e);
            }
        }
    }
}

pub fn cmd_generate(args: GenerateArgs, logs: &Logger) -> CliResult {
    let scene = load_scene(&args.scene)?;
    if args.views_per_batch < 2 {
        return Err(input_err("--views-per-batch must be >= 2"));
    }
    if args.layers < 2 {
        return Err(input_err("--layers must be >= 2 (depth rectification needs fg/bg)"));
    }
    if args.consistency_threshold <= 0.0 || args.interval <= 0.0 {
        return Err(input_err("thresholds must be > 0"));
    }
    let emit = match args.emit_conditions.as_str() {
        "first" => EmitConditions::First,
        "all" => EmitConditions::All,
        "none" => EmitConditions::None,
        other => return Err(input_err(format!("--emit-conditions '{other}' (use first|all|none)"))),
    };
    ensure_dir(&args.out)?;

    let init_cam = match &args.init_camera {
        Some(p) => load_camera(p)?,
        None => sample_init_camera(&scene, args.seed, args.resolution)?,
    };
    let oracle = SceneOracle::new(scene.clone());
    let init_image = match &args.init_image {
        Some(p) => {
            let img = load_image(p)?;
            if (img.width(), img.height()) != (init_cam.width, init_cam.height) {
                return Err(input_err("initial image resolution does not match the camera"));
            }
            img
        }
        None => oracle.render(&init_cam).0,
    };

    let mut generator: Box<dyn MultiViewGenerator> = match args.generator.as_str() {
        "oracle" => Box::new(OracleGenerator::new(oracle.clone())),
        "copy" => Box::new(CopyConditionGenerator),
        "adversarial" => Box::new(AdversarialInitGenerator::new(init_image.clone())),
        other => match other.strip_prefix("external:") {
            Some(path) => Box::new(
                ExternalProcessGenerator::new(PathBuf::from(path))
                    .map_err(|e| internal_err(format!("external generator: {e}")))?,
            ),
            None => {
                return Err(input_err(format!(
                    "unknown generator '{other}' (use oracle|copy|adversarial|external:<path>)"
                )))
            }
        },
    };
    let estimator = OracleDepthEstimator::new(
        oracle.clone(),
        DepthCorruption::relative(args.depth_noise),
        args.seed,
    );

    let config = GenConfig {
        views_per_batch: args.views_per_batch,
        layers: args.layers,
        consistency_threshold: args.consistency_threshold,
        seed: args.seed,
        view_set: ViewSetConfig {
            interval: args.interval,
            dedup_distance: args.dedup_distance,
            dedup_angle_deg: args.dedup_angle,
            ..ViewSetConfig::default()
        },
        ..GenConfig::default()
    };

    let mut writer = ArtifactWriter {
        out: args.out.clone(),
        emit,
        scene: scene.clone(),
        mask_resolutions: args.mask_resolutions.clone(),
        dilation: args.dilation,
        artifacts: Vec::new(),
        error: None,
    };

    logs.step(json!({"step": "generate-start", "seed": args.seed, "generator": args.generator}));
    let state = run_generation(
        &scene,
        &init_image,
        &init_cam,
        generator.as_mut(),
        &estimator,
        &config,
        &mut writer,
    )
    .map_err(|e| internal_err(e.to_string()))?;
    if let Some(e) = writer.error.take() {
        return Err(internal_err(format!("artifact write: {e}")));
    }
    for b in &state.batches {
        logs.step(json!({"step": "batch", "trajectory": b.trajectory_id, "indices": b.indices}));
    }

    // Final cloud and manifest.
    save(
        formats::write_ply(&args.out.join("cloud.ply"), state.cloud.points()),
        "ply write",
    )?;
    writer.record("cloud.ply".into());
    save(init_image.save(args.out.join("init.png")), "init image write")?;
    writer.record("init.png".into());

    let view_set = build_view_set(&scene, &init_cam, &config.view_set, config.seed);
    let manifest = RunManifest {
        config: RunConfigEcho {
            scene: args.scene.display().to_string(),
            seed: args.seed,
            views_per_batch: args.views_per_batch,
            layers: args.layers,
            resolution: args.resolution,
            interval: args.interval,
            dedup_distance: args.dedup_distance,
            dedup_angle_deg: args.dedup_angle,
            consistency_threshold: args.consistency_threshold,
            mask_resolutions: args.mask_resolutions.clone(),
            dilation: args.dilation,
            stride: config.stride,
            splat_footprint: config.splat_footprint,
            pc_dedup_radius: config.dedup_radius,
            depth_noise: args.depth_noise,
        },
        generator: args.generator.clone(),
        initial_camera: init_cam,
        trajectories: view_set
            .trajectories
            .iter()
            .map(|t| TrajectorySummary {
                trajectory_id: t.trajectory_id,
                target_box: match t.target {
                    TrajectoryTarget::Box(i) => Some(i),
                    TrajectoryTarget::RoomCenter => None,
                },
                poses: t.poses.len(),
            })
            .collect(),
        skipped_trajectories: state.skipped_trajectories.clone(),
        batches: state.batches.clone(),
        gate_log: state.log.clone(),
        accepted_views: state.accepted_count(),
        generated_views: state.gen_idx.len(),
        global_points: state.cloud.len(),
        artifacts: writer.artifacts,
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| internal_err(format!("manifest serialize: {e}")))?;
    std::fs::write(args.out.join("manifest.json"), body)
        .map_err(|e| internal_err(format!("manifest write: {e}")))?;
    logs.step(json!({
        "step": "generate-done",
        "generated": state.gen_idx.len(),
        "accepted": state.accepted_count(),
        "points": state.cloud.len(),
    }));
    Ok(())
}

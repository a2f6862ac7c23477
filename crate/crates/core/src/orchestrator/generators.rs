//! Generator and depth-estimator plugins: the ground-truth oracle pair used
//! for desk-scale verification, an adversarial generator for gate-efficacy
//! tests, a hole-filling smoke-test generator, and the out-of-process
//! adapter.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::depth_align::{DepthEstimator, DepthMap};
use crate::fixtures::{render_scene_view, ScenePalette};
use crate::formats;
use crate::rng;
use crate::scene_model::{CameraPose, SceneLayout};

use super::{GeneratorFailure, GeneratorRequest, MultiViewGenerator};

/// Stable hash of raw image bytes, used to key rendered content.
fn image_hash(img: &RgbImage) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in [img.width().to_le_bytes(), img.height().to_le_bytes()].concat() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    for b in img.as_raw() {
        h = (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Ground-truth renderer of a fixture scene that remembers which camera each
/// rendered image came from. The paired depth estimator uses that registry
/// to predict depth for the *content* of an image rather than for the query
/// pose, which is what lets the consistency gate catch a generator that
/// returns wrong-view content.
pub struct SceneOracle {
    pub layout: SceneLayout,
    pub palette: ScenePalette,
    registry: Mutex<HashMap<u64, CameraPose>>,
}

impl SceneOracle {
    pub fn new(layout: SceneLayout) -> Arc<Self> {
        let palette = ScenePalette::for_layout(&layout);
        Arc::new(Self {
            layout,
            palette,
            registry: Mutex::new(HashMap::new()),
        })
    }

    /// Renders the scene and registers the image content under its camera.
    /// First writer wins, so re-rendering the same pose is stable.
    pub fn render(&self, cam: &CameraPose) -> (RgbImage, DepthMap) {
        let (img, depth) = render_scene_view(&self.layout, &self.palette, cam);
        self.registry
            .lock()
            .expect("registry lock")
            .entry(image_hash(&img))
            .or_insert_with(|| cam.clone());
        (img, depth)
    }

    pub fn render_depth(&self, cam: &CameraPose) -> DepthMap {
        render_scene_view(&self.layout, &self.palette, cam).1
    }

    /// Camera whose render produced this exact image, if known.
    pub fn source_camera(&self, image: &RgbImage) -> Option<CameraPose> {
        self.registry
            .lock()
            .expect("registry lock")
            .get(&image_hash(image))
            .cloned()
    }
}

/// Inverse-depth corruption applied by the oracle estimator to mimic a
/// relative monocular prediction.
#[derive(Debug, Clone, Copy)]
pub struct DepthCorruption {
    /// Random per-image scale range for the inverse-depth affine.
    pub scale_range: (f64, f64),
    /// Random per-image offset range (kept nonnegative so inverse depths
    /// stay positive).
    pub offset_range: (f64, f64),
    /// Gaussian noise sigma on inverse depth.
    pub noise_sigma: f64,
}

impl DepthCorruption {
    pub const NONE: DepthCorruption = DepthCorruption {
        scale_range: (1.0, 1.0),
        offset_range: (0.0, 0.0),
        noise_sigma: 0.0,
    };

    pub fn relative(noise_sigma: f64) -> Self {
        Self {
            scale_range: (0.4, 2.0),
            offset_range: (0.0, 0.15),
            noise_sigma,
        }
    }
}

/// Depth estimator backed by the scene oracle: ground-truth depth of the
/// image content (via the render registry) composed with a seeded
/// inverse-depth affine and noise. Unknown content falls back to the query
/// camera's geometry.
pub struct OracleDepthEstimator {
    oracle: Arc<SceneOracle>,
    corruption: DepthCorruption,
    seed: u64,
}

impl OracleDepthEstimator {
    pub fn new(oracle: Arc<SceneOracle>, corruption: DepthCorruption, seed: u64) -> Self {
        Self {
            oracle,
            corruption,
            seed,
        }
    }

    /// Estimator that returns exact metric ground truth.
    pub fn exact(oracle: Arc<SceneOracle>) -> Self {
        Self::new(oracle, DepthCorruption::NONE, 0)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; both draws in (0, 1].
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl DepthEstimator for OracleDepthEstimator {
    fn estimate(&self, image: &RgbImage, camera: &CameraPose) -> DepthMap {
        let content_cam = self.oracle.source_camera(image).unwrap_or_else(|| camera.clone());
        let truth = self.oracle.render_depth(&content_cam);

        let c = &self.corruption;
        let mut r = rng::stream_indexed(self.seed, "oracle-depth", image_hash(image));
        let scale = if c.scale_range.0 < c.scale_range.1 {
            r.random_range(c.scale_range.0..c.scale_range.1)
        } else {
            c.scale_range.0
        };
        let offset = if c.offset_range.0 < c.offset_range.1 {
            r.random_range(c.offset_range.0..c.offset_range.1)
        } else {
            c.offset_range.0
        };

        let mut out = DepthMap::new(truth.width(), truth.height());
        for y in 0..truth.height() {
            for x in 0..truth.width() {
                if !truth.is_valid(x, y) {
                    continue;
                }
                let mut inv = scale / truth.at(x, y) + offset;
                if c.noise_sigma > 0.0 {
                    inv += c.noise_sigma * gaussian(&mut r);
                }
                if inv > 1e-6 {
                    out.set(x, y, 1.0 / inv);
                }
            }
        }
        out
    }
}

/// Renders ground truth for every requested camera.
pub struct OracleGenerator {
    oracle: Arc<SceneOracle>,
}

impl OracleGenerator {
    pub fn new(oracle: Arc<SceneOracle>) -> Self {
        Self { oracle }
    }
}

impl MultiViewGenerator for OracleGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<Vec<RgbImage>, GeneratorFailure> {
        Ok(request
            .cameras
            .iter()
            .map(|cam| self.oracle.render(cam).0)
            .collect())
    }
}

/// Ignores the conditions and returns the initial image for every view; the
/// consistency gate exists to catch exactly this.
pub struct AdversarialInitGenerator {
    initial_image: RgbImage,
}

impl AdversarialInitGenerator {
    pub fn new(initial_image: RgbImage) -> Self {
        Self { initial_image }
    }
}

impl MultiViewGenerator for AdversarialInitGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<Vec<RgbImage>, GeneratorFailure> {
        Ok(vec![self.initial_image.clone(); request.len()])
    }
}

/// Plumbing smoke test: echoes the warped condition with holes filled by the
/// nearest covered pixel (multi-source BFS, deterministic order).
pub struct CopyConditionGenerator;

impl MultiViewGenerator for CopyConditionGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<Vec<RgbImage>, GeneratorFailure> {
        Ok(request
            .warped
            .iter()
            .map(|wc| {
                let (w, h) = (wc.image.width() as usize, wc.image.height() as usize);
                let mut out = wc.image.clone();
                let mut known: Vec<bool> = wc.mask.data().to_vec();
                let mut queue: std::collections::VecDeque<(usize, usize)> = wc
                    .mask
                    .iter_cells()
                    .filter(|(_, _, m)| **m)
                    .map(|(x, y, _)| (x, y))
                    .collect();
                while let Some((x, y)) = queue.pop_front() {
                    let color = *out.get_pixel(x as u32, y as u32);
                    for (dx, dy) in [(0i64, -1i64), (-1, 0), (1, 0), (0, 1)] {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !known[ny * w + nx] {
                            known[ny * w + nx] = true;
                            out.put_pixel(nx as u32, ny as u32, color);
                            queue.push_back((nx, ny));
                        }
                    }
                }
                out
            })
            .collect())
    }
}

/// Runs an external program as the generator: the request is written to a
/// directory, the program is invoked as `program <request_dir>
/// <response_dir>`, and `gen_{i}.png` files are read back. Exit code 0 means
/// success.
pub struct ExternalProcessGenerator {
    program: PathBuf,
    scratch: tempfile::TempDir,
    calls: usize,
}

impl ExternalProcessGenerator {
    pub fn new(program: PathBuf) -> std::io::Result<Self> {
        Ok(Self {
            program,
            scratch: tempfile::tempdir()?,
            calls: 0,
        })
    }
}

impl MultiViewGenerator for ExternalProcessGenerator {
    fn generate(&mut self, request: &GeneratorRequest) -> Result<Vec<RgbImage>, GeneratorFailure> {
        let req_dir = self.scratch.path().join(format!("req_{:04}", self.calls));
        let resp_dir = self.scratch.path().join(format!("resp_{:04}", self.calls));
        self.calls += 1;
        formats::write_request_dir(&req_dir, &request.cameras, &request.stacks, &request.warped)
            .map_err(|e| GeneratorFailure(format!("request write: {e}")))?;
        std::fs::create_dir_all(&resp_dir).map_err(|e| GeneratorFailure(e.to_string()))?;
        let status = std::process::Command::new(&self.program)
            .arg(&req_dir)
            .arg(&resp_dir)
            .status()
            .map_err(|e| GeneratorFailure(format!("spawn {}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(GeneratorFailure(format!(
                "external generator exited with {status}"
            )));
        }
        formats::read_response_dir(&resp_dir, request.len())
            .map_err(|e| GeneratorFailure(format!("response read: {e}")))
    }
}

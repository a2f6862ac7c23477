//! Layout-guided depth rectification: an inverse-depth scale/offset fit on
//! the background region followed by layout-bounded clipping of the
//! foreground.

use thiserror::Error;

use crate::grid::Grid;
use crate::layout_raster::ConditionStack;
use crate::scene_model::CameraPose;

/// Dense depth map with a per-pixel validity flag. Values are metric meters
/// after rectification; before, they may be relative (up to an inverse-depth
/// affine transform).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            values: Grid::filled(width, height, 0.0),
            valid: Grid::filled(width, height, false),
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        let valid = values.iter().map(|v| *v > 0.0).collect();
        Self {
            values: Grid::from_vec(width, height, values),
            valid: Grid::from_vec(width, height, valid),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.values.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.values.height()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values.at(x, y)
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid.at(x, y)
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.values.set(x, y, value);
        self.valid.set(x, y, value > 0.0);
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.values.set(x, y, 0.0);
        self.valid.set(x, y, false);
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }
}

/// Fitted inverse-depth affine model `1/D' = s/D + delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignParams {
    pub scale: f64,
    pub offset: f64,
    /// Mean squared residual of the fit over the background pixels.
    pub residual: f64,
}

impl AlignParams {
    pub const IDENTITY: AlignParams = AlignParams {
        scale: 1.0,
        offset: 0.0,
        residual: 0.0,
    };

    /// Apply the model to one depth value.
    #[inline]
    pub fn apply(&self, depth: f64) -> f64 {
        1.0 / (self.scale / depth + self.offset)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FitError {
    /// Fewer than two usable background pixels, or all inverse depths equal.
    #[error("degenerate inverse-depth fit: {0}")]
    DegenerateFit(String),
}

/// Foreground/background masks from the second condition layer: a pixel is
/// foreground iff the layer-2 depth is nonzero (the ray had a second layout
/// intersection before the background).
pub fn masks_from_layers(depth_layer2: &[f32], width: usize, height: usize) -> (Grid<bool>, Grid<bool>) {
    assert_eq!(depth_layer2.len(), width * height);
    let fg: Vec<bool> = depth_layer2.iter().map(|d| *d > 0.0).collect();
    let bg: Vec<bool> = fg.iter().map(|f| !f).collect();
    (
        Grid::from_vec(width, height, fg),
        Grid::from_vec(width, height, bg),
    )
}

/// Closed-form least squares for `s/D + delta ~ 1/D_layout` over background
/// pixels that are valid in `pred` and have a nonzero layout depth.
///
/// Rank deficiency (all usable inverse depths equal within the variance
/// tolerance, or fewer than two points) is an error; callers fall back to
/// the identity params.
pub fn fit_scale_offset(
    pred: &DepthMap,
    layout_depth_l1: &[f32],
    bg_mask: &Grid<bool>,
) -> Result<AlignParams, FitError> {
    let w = pred.width();
    let h = pred.height();
    assert_eq!(layout_depth_l1.len(), w * h);
    assert_eq!(bg_mask.width(), w);
    assert_eq!(bg_mask.height(), h);

    let mut n = 0.0f64;
    let mut sx = 0.0f64;
    let mut sy = 0.0f64;
    let mut sxx = 0.0f64;
    let mut sxy = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            if !bg_mask.at(x, y) || !pred.is_valid(x, y) {
                continue;
            }
            let d_l = f64::from(layout_depth_l1[y * w + x]);
            if d_l <= 0.0 {
                // No layout hit at all (open shell); nothing to fit against.
                continue;
            }
            let ix = 1.0 / pred.at(x, y);
            let iy = 1.0 / d_l;
            n += 1.0;
            sx += ix;
            sy += iy;
            sxx += ix * ix;
            sxy += ix * iy;
        }
    }

    if n < 2.0 {
        return Err(FitError::DegenerateFit(format!(
            "{n} usable background pixels"
        )));
    }
    // Determinant of the mean-normalized 2x2 normal matrix = Var(1/D).
    let var = sxx / n - (sx / n) * (sx / n);
    if var <= 1e-12 {
        return Err(FitError::DegenerateFit(
            "inverse depths have no spread".into(),
        ));
    }
    let cov = sxy / n - (sx / n) * (sy / n);
    let scale = cov / var;
    let offset = sy / n - scale * (sx / n);

    let mut residual = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            if !bg_mask.at(x, y) || !pred.is_valid(x, y) {
                continue;
            }
            let d_l = f64::from(layout_depth_l1[y * w + x]);
            if d_l <= 0.0 {
                continue;
            }
            let r = scale / pred.at(x, y) + offset - 1.0 / d_l;
            residual += r * r;
        }
    }
    Ok(AlignParams {
        scale,
        offset,
        residual: residual / n,
    })
}

/// Full rectification: fit on the background, map the whole image through
/// the fitted inverse-depth affine, then clip foreground pixels into the
/// per-pixel layout depth range `[D_l1, D_bg]`. Background pixels keep the
/// mapped value unclipped. Returns the identity mapping when the fit is
/// degenerate.
pub fn rectify_depth(pred: &DepthMap, stack: &ConditionStack) -> DepthMap {
    assert!(stack.layers >= 2, "need at least two layers for fg/bg masks");
    let w = pred.width();
    let h = pred.height();
    assert_eq!((stack.width, stack.height), (w, h));

    let (fg, bg) = masks_from_layers(stack.depth_layer(1), w, h);
    let params = fit_scale_offset(pred, stack.depth_layer(0), &bg).unwrap_or(AlignParams::IDENTITY);

    let mut out = DepthMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !pred.is_valid(x, y) {
                continue;
            }
            let inv = params.scale / pred.at(x, y) + params.offset;
            if inv <= 0.0 {
                // Mapped behind the camera; cannot represent as depth.
                out.invalidate(x, y);
                continue;
            }
            let mut d = 1.0 / inv;
            let d_l1 = f64::from(stack.depth_at(x, y, 0));
            if fg.at(x, y) && d_l1 > 0.0 {
                let d_bg = f64::from(stack.last_nonzero_depth(x, y));
                d = d.clamp(d_l1, d_bg);
            }
            out.set(x, y, d);
        }
    }
    out
}

/// Monocular depth estimation boundary. Implementations return *relative*
/// depth (metric up to an inverse-depth affine); the camera is passed as
/// call-site metadata so oracle implementations can key on the view.
pub trait DepthEstimator {
    fn estimate(&self, image: &image::RgbImage, camera: &CameraPose) -> DepthMap;
}

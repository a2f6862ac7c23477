//! On-disk formats: the MVRC binary tensor container for condition stacks,
//! depth maps and epipolar masks, binary PLY point clouds, PNG previews, and
//! the directory exchange format for out-of-process generators.
//!
//! MVRC layout (all little-endian): magic `"MVRC"`, `version: u32`, then a
//! payload-specific header and planes:
//!
//! - condition stack: `H, W, m` + planes sem (`u16`, layer-major), depth
//!   (`f32`, layer-major), local (`f32`, 3 channel planes), global (same).
//! - depth map: `H, W, 1` + one `f32` plane (0 = invalid).
//! - epipolar mask: `h, w, N, query_view` + packed `u64` bitset rows,
//!   query-cell-major, target views ascending with the query view skipped.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{GrayImage, RgbImage};
use thiserror::Error;

use crate::depth_align::DepthMap;
use crate::epipolar_attn::LayoutEpipolarMask;
use crate::global_pointcloud::PointRecord;
use crate::grid::Grid;
use crate::layout_raster::ConditionStack;
use crate::view_warp::WarpedCondition;

pub const MVRC_MAGIC: &[u8; 4] = b"MVRC";
pub const MVRC_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not an MVRC file (bad magic)")]
    BadMagic,
    #[error("unsupported MVRC version {0}")]
    BadVersion(u32),
    #[error("malformed {0}")]
    Malformed(String),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

fn write_header(w: &mut impl Write, dims: &[u32]) -> Result<(), FormatError> {
    w.write_all(MVRC_MAGIC)?;
    w.write_u32::<LittleEndian>(MVRC_VERSION)?;
    for d in dims {
        w.write_u32::<LittleEndian>(*d)?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read, n_dims: usize) -> Result<Vec<u32>, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MVRC_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MVRC_VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(r.read_u32::<LittleEndian>()?);
    }
    Ok(dims)
}

pub fn write_condition_stack(path: &Path, stack: &ConditionStack) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        &[stack.height as u32, stack.width as u32, stack.layers as u32],
    )?;
    for v in &stack.sem {
        w.write_u16::<LittleEndian>(*v)?;
    }
    for v in &stack.depth {
        w.write_f32::<LittleEndian>(*v)?;
    }
    for v in &stack.local {
        w.write_f32::<LittleEndian>(*v)?;
    }
    for v in &stack.global {
        w.write_f32::<LittleEndian>(*v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_condition_stack(path: &Path) -> Result<ConditionStack, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let dims = read_header(&mut r, 3)?;
    let (h, w, m) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    if h == 0 || w == 0 || m == 0 || h * w * m > 1 << 30 {
        return Err(FormatError::Malformed(format!("condition dims {h}x{w}x{m}")));
    }
    let n = w * h;
    let mut stack = ConditionStack::zeros(w, h, m);
    for v in stack.sem.iter_mut() {
        *v = r.read_u16::<LittleEndian>()?;
    }
    for v in stack.depth.iter_mut() {
        *v = r.read_f32::<LittleEndian>()?;
    }
    for v in stack.local.iter_mut() {
        *v = r.read_f32::<LittleEndian>()?;
    }
    for v in stack.global.iter_mut() {
        *v = r.read_f32::<LittleEndian>()?;
    }
    debug_assert_eq!(stack.sem.len(), n * m);
    Ok(stack)
}

/// Depth maps persist as a single f32 plane under the MVRC header (m = 1);
/// zeros mark invalid pixels.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, &[depth.height() as u32, depth.width() as u32, 1])?;
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let v = if depth.is_valid(x, y) {
                depth.at(x, y) as f32
            } else {
                0.0
            };
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthMap, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let dims = read_header(&mut r, 3)?;
    let (h, w, m) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    if m != 1 || h == 0 || w == 0 || h * w > 1 << 30 {
        return Err(FormatError::Malformed(format!("depth dims {h}x{w}x{m}")));
    }
    let mut values = vec![0.0f64; w * h];
    for v in values.iter_mut() {
        *v = f64::from(r.read_f32::<LittleEndian>()?);
    }
    Ok(DepthMap::from_values(w, h, values))
}

pub fn write_mask(path: &Path, mask: &LayoutEpipolarMask) -> Result<(), FormatError> {
    let (h, w) = mask.resolution;
    let mut out = BufWriter::new(File::create(path)?);
    write_header(
        &mut out,
        &[
            h as u32,
            w as u32,
            mask.num_views as u32,
            mask.query_view as u32,
        ],
    )?;
    for word in mask.raw_words() {
        out.write_u64::<LittleEndian>(*word)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<LayoutEpipolarMask, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let dims = read_header(&mut r, 4)?;
    let (h, w, n, q) = (
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
        dims[3] as usize,
    );
    if n < 2 || q >= n || h == 0 || w == 0 || h * w > 1 << 24 {
        return Err(FormatError::Malformed(format!("mask dims {h}x{w} N={n} q={q}")));
    }
    let words_per_row = (h * w).div_ceil(64);
    let total = h * w * (n - 1) * words_per_row;
    let mut bits = vec![0u64; total];
    for word in bits.iter_mut() {
        *word = r.read_u64::<LittleEndian>()?;
    }
    Ok(LayoutEpipolarMask::from_raw_words(q, n, (h, w), bits))
}

/// Binary little-endian PLY with `x y z` floats and `red green blue` uchars.
pub fn write_ply(path: &Path, points: &[PointRecord]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )?;
    for p in points {
        w.write_f32::<LittleEndian>(p.position.x as f32)?;
        w.write_f32::<LittleEndian>(p.position.y as f32)?;
        w.write_f32::<LittleEndian>(p.position.z as f32)?;
        w.write_all(&p.color)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads PLY files produced by [`write_ply`] (the exact property list, in
/// order).
pub fn read_ply(path: &Path) -> Result<Vec<PointRecord>, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // Read header lines up to end_header.
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        header.push(byte[0]);
        if header.ends_with(b"end_header\n") {
            break;
        }
        if header.len() > 4096 {
            return Err(FormatError::Malformed("ply header too long".into()));
        }
    }
    let text = String::from_utf8_lossy(&header);
    if !text.starts_with("ply\nformat binary_little_endian 1.0\n") {
        return Err(FormatError::Malformed("unsupported ply flavor".into()));
    }
    let count: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| FormatError::Malformed("missing vertex element".into()))?;
    if count > 1 << 28 {
        return Err(FormatError::Malformed(format!("vertex count {count}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let x = f64::from(r.read_f32::<LittleEndian>()?);
        let y = f64::from(r.read_f32::<LittleEndian>()?);
        let z = f64::from(r.read_f32::<LittleEndian>()?);
        let mut color = [0u8; 3];
        r.read_exact(&mut color)?;
        out.push(PointRecord {
            position: nalgebra::Vector3::new(x, y, z),
            color,
            source_view: 0,
        });
    }
    Ok(out)
}

/// Boolean mask as an 8-bit PNG (255 = true).
pub fn write_mask_png(path: &Path, mask: &Grid<bool>) -> Result<(), FormatError> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        image::Luma([if mask.at(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Grid<bool>, FormatError> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] >= 128).collect();
    Ok(Grid::from_vec(w, h, data))
}

/// Deterministic colorization of the frontmost semantic layer.
pub fn sem_preview(stack: &ConditionStack) -> RgbImage {
    RgbImage::from_fn(stack.width as u32, stack.height as u32, |x, y| {
        let class = stack.sem_at(x as usize, y as usize, 0);
        image::Rgb(class_color(class))
    })
}

pub fn class_color(class: u16) -> [u8; 3] {
    match class {
        0 => [0, 0, 0],
        1 => [120, 100, 80],
        2 => [180, 180, 170],
        3 => [230, 230, 225],
        c => {
            let hue = (0.61 * f64::from(c - 4) + 0.13).fract();
            let i = (hue * 6.0) as u8;
            [
                90 + 27 * ((i + 1) % 6),
                90 + 27 * ((i + 3) % 6),
                90 + 27 * ((i + 5) % 6),
            ]
        }
    }
}

/// Frontmost depth normalized to 8 bits for quick inspection.
pub fn depth_preview(stack: &ConditionStack) -> GrayImage {
    let plane = stack.depth_layer(0);
    let max = plane.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
    GrayImage::from_fn(stack.width as u32, stack.height as u32, |x, y| {
        let d = stack.depth_at(x as usize, y as usize, 0);
        image::Luma([(d / max * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// Writes one view's slot of a generator exchange request directory:
/// `cameras.json` (all views), `cond_{i}.mvrc`, `warped_{i}.png`,
/// `mask_{i}.png`.
pub fn write_request_dir(
    dir: &Path,
    cameras: &[crate::scene_model::CameraPose],
    stacks: &[ConditionStack],
    warped: &[WarpedCondition],
) -> Result<(), FormatError> {
    std::fs::create_dir_all(dir)?;
    let cams_json = serde_json::to_string_pretty(cameras)
        .map_err(|e| FormatError::Malformed(format!("cameras serialize: {e}")))?;
    std::fs::write(dir.join("cameras.json"), cams_json)?;
    for (i, (stack, wc)) in stacks.iter().zip(warped).enumerate() {
        write_condition_stack(&dir.join(format!("cond_{i}.mvrc")), stack)?;
        wc.image.save(dir.join(format!("warped_{i}.png")))?;
        write_mask_png(&dir.join(format!("mask_{i}.png")), &wc.mask)?;
    }
    Ok(())
}

pub struct RequestDir {
    pub cameras: Vec<crate::scene_model::CameraPose>,
    pub stacks: Vec<ConditionStack>,
    pub warped_images: Vec<RgbImage>,
    pub masks: Vec<Grid<bool>>,
}

pub fn read_request_dir(dir: &Path) -> Result<RequestDir, FormatError> {
    let cams_json = std::fs::read_to_string(dir.join("cameras.json"))?;
    let cameras: Vec<crate::scene_model::CameraPose> = serde_json::from_str(&cams_json)
        .map_err(|e| FormatError::Malformed(format!("cameras.json: {e}")))?;
    let mut stacks = Vec::with_capacity(cameras.len());
    let mut warped_images = Vec::with_capacity(cameras.len());
    let mut masks = Vec::with_capacity(cameras.len());
    for i in 0..cameras.len() {
        stacks.push(read_condition_stack(&dir.join(format!("cond_{i}.mvrc")))?);
        warped_images.push(image::open(dir.join(format!("warped_{i}.png")))?.to_rgb8());
        masks.push(read_mask_png(&dir.join(format!("mask_{i}.png")))?);
    }
    Ok(RequestDir {
        cameras,
        stacks,
        warped_images,
        masks,
    })
}

/// Writes generated images into a response directory as `gen_{i}.png`.
pub fn write_response_dir(dir: &Path, images: &[RgbImage]) -> Result<(), FormatError> {
    std::fs::create_dir_all(dir)?;
    for (i, img) in images.iter().enumerate() {
        img.save(dir.join(format!("gen_{i}.png")))?;
    }
    Ok(())
}

pub fn read_response_dir(dir: &Path, count: usize) -> Result<Vec<RgbImage>, FormatError> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push(image::open(dir.join(format!("gen_{i}.png")))?.to_rgb8());
    }
    Ok(out)
}

//! Copy edits that transform an image and its coordinate table together.
//!
//! Geometric edits are evaluated by inverse warping: every pixel of the new
//! frame is mapped back into the previous frame, rounded onto the pixel grid,
//! and chained through the previous table. Photometric edits leave the table
//! untouched. Occluding edits mark covered pixels as untracked.

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coord_table::{round_half_up, snap, Coord, CoordTable, Dims};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::stream_rng;

/// Alpha at or above which a sticker pixel counts as occluding.
pub const DEFAULT_ALPHA_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    Nearest,
    Bilinear,
}

/// Region kept by a matting edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum MaskShape {
    Ellipse {
        center_row: f64,
        center_col: f64,
        radius_row: f64,
        radius_col: f64,
    },
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
}

impl MaskShape {
    fn contains(&self, row: usize, col: usize) -> bool {
        match *self {
            MaskShape::Ellipse {
                center_row,
                center_col,
                radius_row,
                radius_col,
            } => {
                let dr = (row as f64 - center_row) / radius_row;
                let dc = (col as f64 - center_col) / radius_col;
                dr * dr + dc * dc <= 1.0
            }
            MaskShape::Rect {
                top,
                left,
                height,
                width,
            } => row >= top && row < top + height && col >= left && col < left + width,
        }
    }
}

/// Sticker bitmap pasted by [`EditOp::OverlaySticker`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sticker {
    /// Rectangle of one RGBA color.
    Solid { height: usize, width: usize, color: [u8; 4] },
    /// Filled disc of one RGBA color on a transparent square of side `2 * radius + 1`.
    Disc { radius: usize, color: [u8; 4] },
    /// Checkerboard of two RGBA colors, `cell` pixels per square.
    Checker {
        height: usize,
        width: usize,
        cell: usize,
        colors: [[u8; 4]; 2],
    },
}

impl Sticker {
    pub fn dims(&self) -> Dims {
        match *self {
            Sticker::Solid { height, width, .. } | Sticker::Checker { height, width, .. } => (height, width),
            Sticker::Disc { radius, .. } => (2 * radius + 1, 2 * radius + 1),
        }
    }

    /// RGBA value at a sticker-local pixel.
    pub fn rgba(&self, row: usize, col: usize) -> [u8; 4] {
        match *self {
            Sticker::Solid { color, .. } => color,
            Sticker::Disc { radius, color } => {
                let dr = row as f64 - radius as f64;
                let dc = col as f64 - radius as f64;
                if dr * dr + dc * dc <= (radius as f64 + 0.25).powi(2) {
                    color
                } else {
                    [0, 0, 0, 0]
                }
            }
            Sticker::Checker { cell, colors, .. } => colors[((row / cell) + (col / cell)) % 2],
        }
    }
}

fn default_one() -> f64 {
    1.0
}

fn default_threshold() -> u8 {
    DEFAULT_ALPHA_THRESHOLD
}

/// One copy edit.
///
/// Coordinates are `(row, col)` pixel indices; real-valued transforms act on
/// pixel centers in `(x = col, y = row)` order, matching the usual image
/// convention for affine matrices and homographies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditOp {
    Crop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    /// Crop with area fraction drawn from `scale` and aspect ratio from
    /// `ratio` (log-uniform), then resize to `height x width`.
    RandomResizedCrop {
        scale: [f64; 2],
        ratio: [f64; 2],
        height: usize,
        width: usize,
    },
    Resize {
        height: usize,
        width: usize,
    },
    Pad {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
        #[serde(default)]
        fill: [u8; 3],
    },
    Hflip,
    Vflip,
    /// Rotation about the image center, counter-clockwise as displayed; the
    /// frame size is kept and uncovered corners are black and untracked.
    Rotate {
        degrees: f64,
    },
    /// Forward 2x3 matrix mapping previous `(x, y)` to new `(x, y)`.
    Affine {
        matrix: [[f64; 3]; 2],
        #[serde(default)]
        height: Option<usize>,
        #[serde(default)]
        width: Option<usize>,
    },
    /// Forward 3x3 homography mapping previous `(x, y, 1)` to new coordinates.
    Perspective {
        homography: [[f64; 3]; 3],
        #[serde(default)]
        height: Option<usize>,
        #[serde(default)]
        width: Option<usize>,
    },
    /// Keep only the masked region; everything else becomes `fill` (or
    /// transparent for RGBA images) and untracked.
    MattingMask {
        mask: MaskShape,
        #[serde(default)]
        fill: [u8; 3],
    },
    /// Scale the current image and paste it onto a new canvas with its
    /// top-left corner at `(top, left)`. Canvas-only pixels, and pasted pixels
    /// whose alpha is below 128, are untracked.
    OverlayOntoCanvas {
        height: usize,
        width: usize,
        top: i64,
        left: i64,
        #[serde(default = "default_one")]
        scale: f64,
        #[serde(default)]
        background: [u8; 3],
    },
    EraseRect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        #[serde(default)]
        fill: [u8; 3],
    },
    OverlaySticker {
        top: i64,
        left: i64,
        sticker: Sticker,
        #[serde(default = "default_threshold")]
        alpha_threshold: u8,
    },
    ColorJitter {
        #[serde(default = "default_one")]
        brightness: f64,
        #[serde(default = "default_one")]
        contrast: f64,
        #[serde(default = "default_one")]
        saturation: f64,
    },
    Grayscale,
    /// Box blur with the given radius.
    Blur {
        radius: usize,
    },
    /// Compression-artifact proxy: blur plus color quantization, both
    /// growing as `quality` drops. Coordinate-identity like other photometric edits.
    Jpeg {
        quality: u8,
    },
}

impl EditOp {
    pub fn kind(&self) -> &'static str {
        match self {
            EditOp::Crop { .. } => "crop",
            EditOp::RandomResizedCrop { .. } => "random_resized_crop",
            EditOp::Resize { .. } => "resize",
            EditOp::Pad { .. } => "pad",
            EditOp::Hflip => "hflip",
            EditOp::Vflip => "vflip",
            EditOp::Rotate { .. } => "rotate",
            EditOp::Affine { .. } => "affine",
            EditOp::Perspective { .. } => "perspective",
            EditOp::MattingMask { .. } => "matting_mask",
            EditOp::OverlayOntoCanvas { .. } => "overlay_onto_canvas",
            EditOp::EraseRect { .. } => "erase_rect",
            EditOp::OverlaySticker { .. } => "overlay_sticker",
            EditOp::ColorJitter { .. } => "color_jitter",
            EditOp::Grayscale => "grayscale",
            EditOp::Blur { .. } => "blur",
            EditOp::Jpeg { .. } => "jpeg",
        }
    }

    pub fn is_photometric(&self) -> bool {
        matches!(
            self,
            EditOp::ColorJitter { .. } | EditOp::Grayscale | EditOp::Blur { .. } | EditOp::Jpeg { .. }
        )
    }
}

/// Ordered edits plus the seed for any randomized parameter draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPipeline {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resampling: Resampling,
    /// Keep pixels under opaque stickers/erasures tracked.
    #[serde(default)]
    pub keep_occluded: bool,
    pub ops: Vec<EditOp>,
}

impl EditPipeline {
    pub fn new(seed: u64, ops: Vec<EditOp>) -> Self {
        EditPipeline {
            seed,
            resampling: Resampling::Nearest,
            keep_occluded: false,
            ops,
        }
    }

    pub fn with_resampling(mut self, resampling: Resampling) -> Self {
        self.resampling = resampling;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serializes")
    }
}

/// Per-step settings for [`apply_edit`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EditOptions {
    pub resampling: Resampling,
    pub keep_occluded: bool,
    /// Pipeline seed; random draws use the stream `(seed, step)`.
    pub seed: u64,
    pub step: usize,
}

/// Two edited views of one original with their bridging tables.
#[derive(Debug, Clone)]
pub struct EditedPair {
    pub image_a: Image,
    pub image_b: Image,
    /// `I_a` pixels to `I_o` pixels.
    pub table_ao: CoordTable,
    /// `I_b` pixels to `I_o` pixels.
    pub table_bo: CoordTable,
    /// `I_a` pixels to `I_b` pixels.
    pub table_ab: CoordTable,
    /// `I_b` pixels to `I_a` pixels.
    pub table_ba: CoordTable,
}

type InverseMap<'a> = Box<dyn Fn(f64, f64) -> Option<(f64, f64)> + 'a>;

struct Warp<'a> {
    new_dims: Dims,
    inverse: InverseMap<'a>,
    /// Treat previous pixels with alpha below 128 as outside.
    alpha_keyed: bool,
    fill: [u8; 3],
}

/// Apply one edit to an image and the table keyed on it.
pub fn apply_edit(image: &Image, table: &CoordTable, op: &EditOp, opts: &EditOptions) -> Result<(Image, CoordTable)> {
    if table.dims() != image.dims() {
        return Err(Error::mismatch(format!(
            "table keyed on {:?} but image is {:?}",
            table.dims(),
            image.dims()
        )));
    }
    if let Some(warp) = geometric_warp(image, op, opts)? {
        return Ok(apply_warp(image, table, &warp, opts.resampling));
    }
    match *op {
        EditOp::MattingMask { ref mask, fill } => {
            if let MaskShape::Ellipse { radius_row, radius_col, .. } = *mask {
                if !(radius_row > 0.0 && radius_col > 0.0) {
                    return Err(Error::parameter("ellipse radii must be positive"));
                }
            }
            let mut out = image.clone();
            for r in 0..image.height() {
                for c in 0..image.width() {
                    if !mask.contains(r, c) {
                        set_fill(&mut out, r, c, fill);
                    }
                }
            }
            let t = table.with_dropped(|k| !mask.contains(k.row as usize, k.col as usize));
            Ok((out, t))
        }
        EditOp::EraseRect {
            top,
            left,
            height,
            width,
            fill,
        } => {
            if height == 0 || width == 0 || top >= image.height() || left >= image.width() {
                return Err(Error::parameter("erase rectangle must overlap the image"));
            }
            let (bottom, right) = ((top + height).min(image.height()), (left + width).min(image.width()));
            let mut out = image.clone();
            for r in top..bottom {
                for c in left..right {
                    out.pixel_mut(r, c)[..3].copy_from_slice(&fill);
                    if out.channels() == 4 {
                        out.pixel_mut(r, c)[3] = 255;
                    }
                }
            }
            let inside = |k: Coord| {
                let (r, c) = (k.row as usize, k.col as usize);
                r >= top && r < bottom && c >= left && c < right
            };
            let t = if opts.keep_occluded { table.clone() } else { table.with_dropped(inside) };
            Ok((out, t))
        }
        EditOp::OverlaySticker {
            top,
            left,
            ref sticker,
            alpha_threshold,
        } => {
            let (sh, sw) = sticker.dims();
            if sh == 0 || sw == 0 {
                return Err(Error::parameter("sticker must be non-empty"));
            }
            if let Sticker::Checker { cell: 0, .. } = sticker {
                return Err(Error::parameter("checker cell must be positive"));
            }
            let mut out = image.clone();
            let mut occluded = vec![false; image.height() * image.width()];
            for sr in 0..sh {
                for sc in 0..sw {
                    let (r, c) = (top + sr as i64, left + sc as i64);
                    if r < 0 || c < 0 || r as usize >= image.height() || c as usize >= image.width() {
                        continue;
                    }
                    let (r, c) = (r as usize, c as usize);
                    let s = sticker.rgba(sr, sc);
                    let a = s[3] as u32;
                    if a == 0 {
                        continue;
                    }
                    let px = out.pixel_mut(r, c);
                    for ch in 0..3 {
                        px[ch] = ((s[ch] as u32 * a + px[ch] as u32 * (255 - a) + 127) / 255) as u8;
                    }
                    if px.len() == 4 {
                        px[3] = px[3].max(s[3]);
                    }
                    if s[3] >= alpha_threshold {
                        occluded[r * image.width() + c] = true;
                    }
                }
            }
            let w = image.width();
            let t = if opts.keep_occluded {
                table.clone()
            } else {
                table.with_dropped(|k| occluded[k.row as usize * w + k.col as usize])
            };
            Ok((out, t))
        }
        EditOp::ColorJitter {
            brightness,
            contrast,
            saturation,
        } => {
            for (name, v) in [("brightness", brightness), ("contrast", contrast), ("saturation", saturation)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::parameter(format!("{name} factor must be finite and >= 0, got {v}")));
                }
            }
            Ok((color_jitter(image, brightness, contrast, saturation), table.clone()))
        }
        EditOp::Grayscale => {
            let mut out = image.clone();
            for r in 0..image.height() {
                for c in 0..image.width() {
                    let px = out.pixel_mut(r, c);
                    let y = clamp_u8(luma(px));
                    px[..3].fill(y);
                }
            }
            Ok((out, table.clone()))
        }
        EditOp::Blur { radius } => Ok((box_blur(image, radius), table.clone())),
        EditOp::Jpeg { quality } => {
            if !(1..=100).contains(&quality) {
                return Err(Error::parameter(format!("jpeg quality must be in 1..=100, got {quality}")));
            }
            let radius = (100 - quality as usize) / 30;
            let step = 1 + (100 - quality as u32) / 12;
            let mut out = box_blur(image, radius);
            for r in 0..out.height() {
                for c in 0..out.width() {
                    for v in &mut out.pixel_mut(r, c)[..3] {
                        *v = clamp_u8((((*v as u32) / step) * step + step / 2) as f64);
                    }
                }
            }
            Ok((out, table.clone()))
        }
        _ => unreachable!("geometric ops handled above"),
    }
}

fn geometric_warp<'a>(image: &Image, op: &'a EditOp, opts: &EditOptions) -> Result<Option<Warp<'a>>> {
    let (h, w) = image.dims();
    let plain = |new_dims: Dims, inverse: InverseMap<'a>| Warp {
        new_dims,
        inverse,
        alpha_keyed: false,
        fill: [0, 0, 0],
    };
    let warp = match *op {
        EditOp::Crop {
            top,
            left,
            height,
            width,
        } => {
            if height == 0 || width == 0 || top + height > h || left + width > w {
                return Err(Error::parameter(format!(
                    "crop {height}x{width}+{top}+{left} does not fit in {h}x{w}"
                )));
            }
            let (t, l) = (top as f64, left as f64);
            plain((height, width), Box::new(move |r, c| Some((r + t, c + l))))
        }
        EditOp::RandomResizedCrop {
            scale,
            ratio,
            height,
            width,
        } => {
            if !(0.0 < scale[0] && scale[0] <= scale[1] && scale[1] <= 1.0) {
                return Err(Error::parameter(format!("scale range {scale:?} must satisfy 0 < lo <= hi <= 1")));
            }
            if !(0.0 < ratio[0] && ratio[0] <= ratio[1]) {
                return Err(Error::parameter(format!("ratio range {ratio:?} must satisfy 0 < lo <= hi")));
            }
            check_out_dims(height, width)?;
            let mut rng = stream_rng(opts.seed, opts.step as u64);
            let area = rng.random_range(scale[0]..=scale[1]) * (h * w) as f64;
            let log_ratio = rng.random_range(ratio[0].ln()..=ratio[1].ln());
            let aspect = log_ratio.exp();
            let ch = (round_half_up((area / aspect).sqrt()) as usize).clamp(1, h);
            let cw = (round_half_up((area * aspect).sqrt()) as usize).clamp(1, w);
            let top = rng.random_range(0..=h - ch) as f64;
            let left = rng.random_range(0..=w - cw) as f64;
            let (sy, sx) = (ch as f64 / height as f64, cw as f64 / width as f64);
            plain(
                (height, width),
                Box::new(move |r, c| Some(((r + 0.5) * sy - 0.5 + top, (c + 0.5) * sx - 0.5 + left))),
            )
        }
        EditOp::Resize { height, width } => {
            check_out_dims(height, width)?;
            let (sy, sx) = (h as f64 / height as f64, w as f64 / width as f64);
            plain(
                (height, width),
                Box::new(move |r, c| Some(((r + 0.5) * sy - 0.5, (c + 0.5) * sx - 0.5))),
            )
        }
        EditOp::Pad {
            top,
            bottom,
            left,
            right,
            fill,
        } => {
            let (t, l) = (top as f64, left as f64);
            Warp {
                new_dims: (h + top + bottom, w + left + right),
                inverse: Box::new(move |r, c| Some((r - t, c - l))),
                alpha_keyed: false,
                fill,
            }
        }
        EditOp::Hflip => {
            let wm = (w - 1) as f64;
            plain((h, w), Box::new(move |r, c| Some((r, wm - c))))
        }
        EditOp::Vflip => {
            let hm = (h - 1) as f64;
            plain((h, w), Box::new(move |r, c| Some((hm - r, c))))
        }
        EditOp::Rotate { degrees } => {
            if !degrees.is_finite() {
                return Err(Error::parameter("rotation angle must be finite"));
            }
            let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
            let (s, co) = degrees.to_radians().sin_cos();
            // forward: x' = cx + co*dx + s*dy, y' = cy - s*dx + co*dy; invert by transposing
            plain(
                (h, w),
                Box::new(move |r, c| {
                    let (dx, dy) = (c - cx, r - cy);
                    let x = cx + co * dx - s * dy;
                    let y = cy + s * dx + co * dy;
                    Some((y, x))
                }),
            )
        }
        EditOp::Affine { matrix, height, width } => {
            let m = Matrix3::new(
                matrix[0][0], matrix[0][1], matrix[0][2],
                matrix[1][0], matrix[1][1], matrix[1][2],
                0.0, 0.0, 1.0,
            );
            let inv = invert_homography(&m)?;
            let dims = (height.unwrap_or(h), width.unwrap_or(w));
            check_out_dims(dims.0, dims.1)?;
            plain(dims, Box::new(move |r, c| project(&inv, r, c)))
        }
        EditOp::Perspective {
            homography,
            height,
            width,
        } => {
            let m = Matrix3::from_fn(|i, j| homography[i][j]);
            let inv = invert_homography(&m)?;
            let dims = (height.unwrap_or(h), width.unwrap_or(w));
            check_out_dims(dims.0, dims.1)?;
            plain(dims, Box::new(move |r, c| project(&inv, r, c)))
        }
        EditOp::OverlayOntoCanvas {
            height,
            width,
            top,
            left,
            scale,
            background,
        } => {
            check_out_dims(height, width)?;
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::parameter(format!("overlay scale must be positive, got {scale}")));
            }
            let (t, l) = (top as f64, left as f64);
            Warp {
                new_dims: (height, width),
                inverse: Box::new(move |r, c| Some(((r - t + 0.5) / scale - 0.5, (c - l + 0.5) / scale - 0.5))),
                alpha_keyed: true,
                fill: background,
            }
        }
        _ => return Ok(None),
    };
    Ok(Some(warp))
}

fn check_out_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::parameter(format!("output size {height}x{width} must be positive")));
    }
    Ok(())
}

fn invert_homography(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = m.determinant();
    if !(det.is_finite() && det.abs() > 1e-9) {
        return Err(Error::parameter(format!("transform is not invertible (|det| = {:e})", det.abs())));
    }
    m.try_inverse()
        .ok_or_else(|| Error::parameter("transform is not invertible"))
}

/// Map a new-frame pixel `(row, col)` through an inverse homography.
fn project(inv: &Matrix3<f64>, r: f64, c: f64) -> Option<(f64, f64)> {
    let x = inv[(0, 0)] * c + inv[(0, 1)] * r + inv[(0, 2)];
    let y = inv[(1, 0)] * c + inv[(1, 1)] * r + inv[(1, 2)];
    let z = inv[(2, 0)] * c + inv[(2, 1)] * r + inv[(2, 2)];
    if z.abs() < 1e-12 || z < 0.0 {
        return None;
    }
    Some((y / z, x / z))
}

fn apply_warp(image: &Image, table: &CoordTable, warp: &Warp<'_>, resampling: Resampling) -> (Image, CoordTable) {
    let prev_dims = image.dims();
    let (nh, nw) = warp.new_dims;
    let ch = image.channels();
    let mut data = Vec::with_capacity(nh * nw * ch);
    let mut mapping = Vec::with_capacity(nh * nw);
    let usable = |k: Coord| !warp.alpha_keyed || image.alpha(k.row as usize, k.col as usize) >= DEFAULT_ALPHA_THRESHOLD;
    for r in 0..nh {
        for c in 0..nw {
            let src = (warp.inverse)(r as f64, c as f64);
            let px = src.and_then(|p| snap(p, prev_dims)).filter(|&k| usable(k));
            mapping.push(px.and_then(|k| table.get(k)));
            match px {
                None => {
                    data.extend_from_slice(&warp.fill);
                    if ch == 4 {
                        data.push(0);
                    }
                }
                Some(k) => match resampling {
                    Resampling::Nearest => data.extend_from_slice(image.pixel(k.row as usize, k.col as usize)),
                    Resampling::Bilinear => {
                        let p = src.expect("snapped point has a source");
                        bilinear(image, table, p, k, &usable, &mut data);
                    }
                },
            }
        }
    }
    let out_image = Image::new(nh, nw, ch, data).expect("warp output sized by construction");
    let out_table = CoordTable::from_mapping((nh, nw), table.source_dims(), mapping)
        .expect("values copied from a valid table");
    (out_image, out_table)
}

/// Bilinear sample at `p`, using only in-frame, tracked (and usable) neighbors.
/// Falls back to the nearest pixel `k` when no neighbor qualifies.
fn bilinear(
    image: &Image,
    table: &CoordTable,
    p: (f64, f64),
    k: Coord,
    usable: &dyn Fn(Coord) -> bool,
    out: &mut Vec<u8>,
) {
    let (h, w) = image.dims();
    let (r0, c0) = (p.0.floor(), p.1.floor());
    let (fr, fc) = (p.0 - r0, p.1 - c0);
    let mut acc = [0.0f64; 4];
    let mut total = 0.0;
    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            let weight = wr * wc;
            let (rr, cc) = (r0 + dr, c0 + dc);
            if weight <= 0.0 || rr < 0.0 || cc < 0.0 || rr >= h as f64 || cc >= w as f64 {
                continue;
            }
            let n = Coord::new(rr as u32, cc as u32);
            if table.get(n).is_none() || !usable(n) {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(image.pixel(rr as usize, cc as usize)) {
                *a += weight * v as f64;
            }
            total += weight;
        }
    }
    if total <= 0.0 {
        out.extend_from_slice(image.pixel(k.row as usize, k.col as usize));
        return;
    }
    for a in &acc[..image.channels()] {
        out.push(clamp_u8(a / total));
    }
}

fn set_fill(img: &mut Image, r: usize, c: usize, fill: [u8; 3]) {
    let px = img.pixel_mut(r, c);
    px[..3].copy_from_slice(&fill);
    if px.len() == 4 {
        px[3] = 0;
    }
}

#[inline]
fn clamp_u8(v: f64) -> u8 {
    round_half_up(v).clamp(0.0, 255.0) as u8
}

#[inline]
fn luma(px: &[u8]) -> f64 {
    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
}

fn color_jitter(image: &Image, brightness: f64, contrast: f64, saturation: f64) -> Image {
    let mut out = image.clone();
    let (h, w) = image.dims();
    let mean_luma = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| luma(image.pixel(r, c)) * brightness)
        .sum::<f64>()
        / (h * w) as f64;
    for r in 0..h {
        for c in 0..w {
            let px = out.pixel_mut(r, c);
            let mut rgb = [px[0] as f64 * brightness, px[1] as f64 * brightness, px[2] as f64 * brightness];
            for v in &mut rgb {
                *v = mean_luma + (*v - mean_luma) * contrast;
            }
            let y = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
            for (dst, v) in px.iter_mut().zip(rgb) {
                *dst = clamp_u8(y + (v - y) * saturation);
            }
        }
    }
    out
}

fn box_blur(image: &Image, radius: usize) -> Image {
    if radius == 0 {
        return image.clone();
    }
    let (h, w) = image.dims();
    let ch = image.channels();
    let pass = |src: &Image, horizontal: bool| {
        let mut out = src.clone();
        for r in 0..h {
            for c in 0..w {
                let mut acc = [0u32; 4];
                let mut n = 0u32;
                let (lo, hi, fixed) = if horizontal {
                    (c.saturating_sub(radius), (c + radius).min(w - 1), r)
                } else {
                    (r.saturating_sub(radius), (r + radius).min(h - 1), c)
                };
                for i in lo..=hi {
                    let px = if horizontal { src.pixel(fixed, i) } else { src.pixel(i, fixed) };
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += v as u32;
                    }
                    n += 1;
                }
                let dst = out.pixel_mut(r, c);
                for k in 0..3.min(ch) {
                    dst[k] = ((acc[k] + n / 2) / n) as u8;
                }
            }
        }
        out
    };
    let tmp = pass(image, true);
    pass(&tmp, false)
}

/// Run every edit of a pipeline, starting from the identity table.
///
/// The returned table maps edited-frame pixels to original-image pixels.
pub fn apply_pipeline(image_o: &Image, pipeline: &EditPipeline) -> Result<(Image, CoordTable)> {
    if pipeline.ops.is_empty() {
        return Err(Error::parameter("pipeline has no edits"));
    }
    let mut image = image_o.clone();
    let mut table = CoordTable::identity(image_o.height(), image_o.width())?;
    for (step, op) in pipeline.ops.iter().enumerate() {
        let opts = EditOptions {
            resampling: pipeline.resampling,
            keep_occluded: pipeline.keep_occluded,
            seed: pipeline.seed,
            step,
        };
        let (next_image, next_table) = apply_edit(&image, &table, op, &opts).map_err(|e| Error::Step {
            index: step,
            kind: op.kind().to_string(),
            source: Box::new(e),
        })?;
        image = next_image;
        table = next_table;
    }
    Ok((image, table))
}

/// Produce two edited views of one original and the tables bridging them.
pub fn make_pair(image_o: &Image, pipeline_a: &EditPipeline, pipeline_b: &EditPipeline) -> Result<EditedPair> {
    let (image_a, table_ao) = apply_pipeline(image_o, pipeline_a)?;
    let (image_b, table_bo) = apply_pipeline(image_o, pipeline_b)?;
    let table_oa = table_ao.reverse(image_o.dims())?;
    let table_ba = CoordTable::compose(&table_oa, &table_bo)?;
    let table_ab = table_ba.reverse(image_a.dims())?;
    Ok(EditedPair {
        image_a,
        image_b,
        table_ao,
        table_bo,
        table_ab,
        table_ba,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |r, c| [(r * 7 % 256) as u8, (c * 5 % 256) as u8, ((r + c) * 3 % 256) as u8, 255]).unwrap()
    }

    fn run(img: &Image, op: EditOp) -> (Image, CoordTable) {
        let t = CoordTable::identity(img.height(), img.width()).unwrap();
        apply_edit(img, &t, &op, &EditOptions::default()).unwrap()
    }

    #[test]
    fn hflip_table() {
        let img = gradient(4, 4);
        let (_, t) = run(&img, EditOp::Hflip);
        for (k, v) in t.iter_present() {
            assert_eq!(v, Coord::new(k.row, 3 - k.col));
        }
        assert_eq!(t.tracked_count(), 16);
    }

    #[test]
    fn photometric_ops_keep_table() {
        let img = gradient(8, 8);
        let t = CoordTable::identity(8, 8).unwrap().with_dropped(|k| k.row == 0);
        for op in [
            EditOp::ColorJitter { brightness: 1.3, contrast: 0.7, saturation: 1.5 },
            EditOp::Grayscale,
            EditOp::Blur { radius: 2 },
            EditOp::Jpeg { quality: 40 },
        ] {
            let (out, t2) = apply_edit(&img, &t, &op, &EditOptions::default()).unwrap();
            assert_eq!(t2, t, "{}", op.kind());
            assert_ne!(out, img, "{} should change pixels", op.kind());
        }
    }

    #[test]
    fn opaque_sticker_drops_covered_rows() {
        let img = gradient(4, 4);
        let op = EditOp::OverlaySticker {
            top: 0,
            left: 0,
            sticker: Sticker::Solid { height: 2, width: 4, color: [255, 0, 0, 255] },
            alpha_threshold: DEFAULT_ALPHA_THRESHOLD,
        };
        let (out, t) = run(&img, op.clone());
        for r in 0..4u32 {
            for c in 0..4u32 {
                let expect = (r >= 2).then_some(Coord::new(r, c));
                assert_eq!(t.get(Coord::new(r, c)), expect);
            }
        }
        assert_eq!(out.pixel(0, 0), &[255, 0, 0]);

        let keep = EditOptions { keep_occluded: true, ..Default::default() };
        let (_, kept) = apply_edit(&img, &CoordTable::identity(4, 4).unwrap(), &op, &keep).unwrap();
        assert_eq!(kept.tracked_count(), 16);
    }

    #[test]
    fn crop_and_invalid_params() {
        let img = gradient(8, 8);
        let (out, t) = run(&img, EditOp::Crop { top: 2, left: 3, height: 4, width: 5 });
        assert_eq!(out.dims(), (4, 5));
        assert_eq!(t.get(Coord::new(0, 0)), Some(Coord::new(2, 3)));
        let id = CoordTable::identity(8, 8).unwrap();
        let bad = apply_edit(&img, &id, &EditOp::Crop { top: 5, left: 0, height: 4, width: 4 }, &EditOptions::default());
        assert!(matches!(bad, Err(Error::Parameter(_))));
        let singular = EditOp::Perspective {
            homography: [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            height: None,
            width: None,
        };
        assert!(matches!(apply_edit(&img, &id, &singular, &EditOptions::default()), Err(Error::Parameter(_))));
    }

    #[test]
    fn resize_up_maps_blocks() {
        let img = gradient(2, 2);
        let (_, t) = run(&img, EditOp::Resize { height: 4, width: 4 });
        for (k, v) in t.iter_present() {
            assert_eq!(v, Coord::new(k.row / 2, k.col / 2));
        }
    }

    #[test]
    fn rotate_quarter_turn_is_exact_on_square() {
        let img = gradient(6, 6);
        let (_, t) = run(&img, EditOp::Rotate { degrees: 90.0 });
        assert_eq!(t.tracked_count(), 36);
        // four quarter turns come back to the identity
        let p = EditPipeline::new(0, vec![EditOp::Rotate { degrees: 90.0 }; 4]);
        let (out, t4) = apply_pipeline(&img, &p).unwrap();
        assert_eq!(t4, CoordTable::identity(6, 6).unwrap());
        assert_eq!(out, img);
    }

    #[test]
    fn overlay_canvas_marks_background_absent() {
        let img = gradient(4, 4);
        let (out, t) = run(
            &img,
            EditOp::OverlayOntoCanvas { height: 10, width: 10, top: 3, left: 2, scale: 1.0, background: [9, 9, 9] },
        );
        assert_eq!(out.dims(), (10, 10));
        assert_eq!(t.tracked_count(), 16);
        assert_eq!(t.get(Coord::new(3, 2)), Some(Coord::new(0, 0)));
        assert_eq!(t.get(Coord::new(0, 0)), None);
        assert_eq!(out.pixel(0, 0), &[9, 9, 9]);
    }

    #[test]
    fn pipeline_hflip_twice_is_identity() {
        let img = gradient(5, 7);
        let p = EditPipeline::new(1, vec![EditOp::Hflip, EditOp::Hflip]);
        let (out, t) = apply_pipeline(&img, &p).unwrap();
        assert_eq!(t, CoordTable::identity(5, 7).unwrap());
        assert_eq!(out, img);
        assert!(matches!(apply_pipeline(&img, &EditPipeline::new(1, vec![])), Err(Error::Parameter(_))));
    }

    #[test]
    fn pipeline_error_carries_step_index() {
        let img = gradient(8, 8);
        let p = EditPipeline::new(0, vec![EditOp::Hflip, EditOp::Crop { top: 0, left: 0, height: 9, width: 1 }]);
        match apply_pipeline(&img, &p) {
            Err(Error::Step { index, kind, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(kind, "crop");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_resized_crop_replays() {
        let img = gradient(32, 32);
        let op = EditOp::RandomResizedCrop { scale: [0.3, 0.9], ratio: [0.75, 1.33], height: 16, width: 16 };
        let p = EditPipeline::new(42, vec![op.clone()]);
        let (a, ta) = apply_pipeline(&img, &p).unwrap();
        let (b, tb) = apply_pipeline(&img, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (_, tc) = apply_pipeline(&img, &EditPipeline::new(43, vec![op])).unwrap();
        assert_ne!(ta, tc);
    }

    #[test]
    fn make_pair_cases() {
        let img = gradient(8, 8);
        let id = EditPipeline::new(0, vec![EditOp::Grayscale]);
        let pair = make_pair(&img, &id, &id).unwrap();
        assert_eq!(pair.table_ba, CoordTable::identity(8, 8).unwrap());

        let flip = EditPipeline::new(0, vec![EditOp::Hflip]);
        let pair = make_pair(&img, &flip, &id).unwrap();
        for (k, v) in pair.table_ba.iter_present() {
            assert_eq!(v, Coord::new(k.row, 7 - k.col));
        }
        assert_eq!(pair.table_ba.tracked_count(), 64);

        let left = EditPipeline::new(0, vec![EditOp::Crop { top: 0, left: 0, height: 8, width: 4 }]);
        let right = EditPipeline::new(0, vec![EditOp::Crop { top: 0, left: 4, height: 8, width: 4 }]);
        let pair = make_pair(&img, &left, &right).unwrap();
        assert_eq!(pair.table_ba.tracked_count(), 0);
        assert_eq!(pair.table_ab.tracked_count(), 0);
    }

    #[test]
    fn pipeline_json_round_trip() {
        let text = r#"{"seed": 9, "ops": [
            {"kind": "hflip"},
            {"kind": "rotate", "degrees": 15},
            {"kind": "overlay_sticker", "top": 1, "left": 2, "sticker": {"type": "disc", "radius": 3, "color": [1,2,3,255]}},
            {"kind": "matting_mask", "mask": {"shape": "ellipse", "center_row": 4, "center_col": 4, "radius_row": 3, "radius_col": 2}}
        ]}"#;
        let p = EditPipeline::from_json(text).unwrap();
        assert_eq!(p.ops.len(), 4);
        assert_eq!(p.resampling, Resampling::Nearest);
        assert_eq!(EditPipeline::from_json(&p.to_json()).unwrap(), p);
        if let EditOp::OverlaySticker { alpha_threshold, .. } = p.ops[2] {
            assert_eq!(alpha_threshold, 128);
        }
    }
}

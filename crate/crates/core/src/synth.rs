//! Seeded synthetic images and random edit pipelines.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::coord_table::Dims;
use crate::edit_ops::{EditOp, EditPipeline, MaskShape, Resampling, Sticker};
use crate::image::Image;
use crate::rng::stream_rng;

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Textured RGB image: a linear color ramp with random rectangles, ellipses
/// and stripe bands on top. Different seeds give unrelated images.
pub fn textured_image(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = stream_rng(seed, 0x5e_ed);
    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    let diag: f64 = rng.random_range(0.0..1.0);
    let mut buf: Vec<[u8; 3]> = (0..height * width)
        .map(|i| {
            let (r, c) = (i / width, i % width);
            let t = (diag * r as f64 / height as f64 + (1.0 - diag) * c as f64 / width as f64).clamp(0.0, 1.0);
            std::array::from_fn(|k| (c0[k] as f64 * (1.0 - t) + c1[k] as f64 * t) as u8)
        })
        .collect();
    let shapes = rng.random_range(6..14);
    for _ in 0..shapes {
        let color = random_color(&mut rng);
        let cr = rng.random_range(0.0..height as f64);
        let cc = rng.random_range(0.0..width as f64);
        let rr = rng.random_range(2.0..height as f64 / 3.0);
        let rc = rng.random_range(2.0..width as f64 / 3.0);
        let kind = rng.random_range(0..3);
        let period = rng.random_range(3..9);
        for r in 0..height {
            for c in 0..width {
                let dr = (r as f64 - cr) / rr;
                let dc = (c as f64 - cc) / rc;
                let inside = match kind {
                    0 => dr.abs() <= 1.0 && dc.abs() <= 1.0,
                    1 => dr * dr + dc * dc <= 1.0,
                    _ => dr.abs() <= 1.0 && dc.abs() <= 1.0 && ((r + c) / period) % 2 == 0,
                };
                if inside {
                    buf[r * width + c] = color;
                }
            }
        }
    }
    Image::new(height, width, 3, buf.concat()).expect("dims are non-zero")
}

/// Smooth RGB image with gentle per-channel gradients, suited to
/// interpolation checks.
pub fn smooth_image(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = stream_rng(seed, 0x5a_00);
    let coef: [[f64; 3]; 3] = std::array::from_fn(|_| {
        [
            rng.random_range(40.0..200.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        ]
    });
    Image::from_fn(height, width, 3, |r, c| {
        let v = |k: usize| (coef[k][0] + coef[k][1] * r as f64 + coef[k][2] * c as f64).clamp(0.0, 255.0) as u8;
        [v(0), v(1), v(2), 255]
    })
    .expect("dims are non-zero")
}

fn random_geometric(rng: &mut ChaCha8Rng, dims: Dims) -> (EditOp, Dims) {
    let (h, w) = dims;
    match rng.random_range(0..10) {
        0 => {
            let ch = rng.random_range(h / 2..=h);
            let cw = rng.random_range(w / 2..=w);
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            (EditOp::Crop { top, left, height: ch, width: cw }, (ch, cw))
        }
        1 => {
            let nh = rng.random_range(h / 2..=h * 3 / 2).max(8);
            let nw = rng.random_range(w / 2..=w * 3 / 2).max(8);
            (EditOp::Resize { height: nh, width: nw }, (nh, nw))
        }
        2 => {
            let p: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..8));
            let fill = random_color(rng);
            (
                EditOp::Pad { top: p[0], bottom: p[1], left: p[2], right: p[3], fill },
                (h + p[0] + p[1], w + p[2] + p[3]),
            )
        }
        3 => (if rng.random() { EditOp::Hflip } else { EditOp::Vflip }, dims),
        4 => (EditOp::Rotate { degrees: rng.random_range(-180.0..180.0) }, dims),
        5 => {
            let a = rng.random_range(0.8..1.2);
            let b = rng.random_range(-0.2..0.2);
            let c = rng.random_range(-0.2..0.2);
            let d = rng.random_range(0.8..1.2);
            let tx = rng.random_range(-6.0..6.0);
            let ty = rng.random_range(-6.0..6.0);
            (
                EditOp::Affine { matrix: [[a, b, tx], [c, d, ty]], height: None, width: None },
                dims,
            )
        }
        6 => {
            let g = rng.random_range(-0.002..0.002);
            let k = rng.random_range(-0.002..0.002);
            let s = rng.random_range(0.9..1.1);
            (
                EditOp::Perspective {
                    homography: [[s, 0.05, 1.0], [-0.05, s, 2.0], [g, k, 1.0]],
                    height: None,
                    width: None,
                },
                dims,
            )
        }
        7 => (
            EditOp::MattingMask {
                mask: MaskShape::Ellipse {
                    center_row: rng.random_range(0.3..0.7) * h as f64,
                    center_col: rng.random_range(0.3..0.7) * w as f64,
                    radius_row: rng.random_range(0.25..0.6) * h as f64,
                    radius_col: rng.random_range(0.25..0.6) * w as f64,
                },
                fill: random_color(rng),
            },
            dims,
        ),
        8 => {
            let nh = h + rng.random_range(0..h / 2);
            let nw = w + rng.random_range(0..w / 2);
            let scale = rng.random_range(0.5..1.0);
            (
                EditOp::OverlayOntoCanvas {
                    height: nh,
                    width: nw,
                    top: rng.random_range(-4..(nh / 3) as i64),
                    left: rng.random_range(-4..(nw / 3) as i64),
                    scale,
                    background: random_color(rng),
                },
                (nh, nw),
            )
        }
        _ => {
            let op = if rng.random() {
                EditOp::OverlaySticker {
                    top: rng.random_range(-4..h as i64),
                    left: rng.random_range(-4..w as i64),
                    sticker: Sticker::Disc {
                        radius: rng.random_range(2..h.max(6) / 4),
                        color: [rng.random(), rng.random(), rng.random(), 255],
                    },
                    alpha_threshold: 128,
                }
            } else {
                let eh = rng.random_range(1..=h / 3);
                let ew = rng.random_range(1..=w / 3);
                EditOp::EraseRect {
                    top: rng.random_range(0..=h - eh),
                    left: rng.random_range(0..=w - ew),
                    height: eh,
                    width: ew,
                    fill: random_color(rng),
                }
            };
            (op, dims)
        }
    }
}

fn random_photometric(rng: &mut ChaCha8Rng) -> EditOp {
    match rng.random_range(0..4) {
        0 => EditOp::ColorJitter {
            brightness: rng.random_range(0.7..1.3),
            contrast: rng.random_range(0.7..1.3),
            saturation: rng.random_range(0.5..1.5),
        },
        1 => EditOp::Grayscale,
        2 => EditOp::Blur { radius: rng.random_range(1..3) },
        _ => EditOp::Jpeg { quality: rng.random_range(20..90) },
    }
}

/// 1 to 4 random edits drawn from every geometric, occluding and
/// photometric kind, valid for an image of `dims`.
pub fn random_pipeline(seed: u64, dims: Dims, resampling: Resampling) -> EditPipeline {
    let mut rng = stream_rng(seed, 0x9e_0e);
    let steps = rng.random_range(1..=4);
    let mut ops = Vec::with_capacity(steps);
    let mut cur = dims;
    for _ in 0..steps {
        if rng.random_bool(0.25) {
            ops.push(random_photometric(&mut rng));
        } else {
            let (op, next) = random_geometric(&mut rng, cur);
            ops.push(op);
            cur = next;
        }
    }
    EditPipeline::new(seed, ops).with_resampling(resampling)
}

/// Purely geometric random pipeline (no photometric or occluding steps).
pub fn random_geometric_pipeline(seed: u64, dims: Dims) -> EditPipeline {
    let mut rng = stream_rng(seed, 0x9e_0f);
    let steps = rng.random_range(1..=3);
    let mut ops = Vec::with_capacity(steps);
    let mut cur = dims;
    while ops.len() < steps {
        let (op, next) = random_geometric(&mut rng, cur);
        if matches!(op, EditOp::MattingMask { .. } | EditOp::OverlaySticker { .. } | EditOp::EraseRect { .. }) {
            continue;
        }
        ops.push(op);
        cur = next;
    }
    EditPipeline::new(seed, ops)
}

/// Mild copy edit: a large random crop resized back to `out` plus color
/// jitter, sometimes a flip.
pub fn mild_copy_pipeline(seed: u64, out: Dims) -> EditPipeline {
    let mut rng = stream_rng(seed, 0xc0_91);
    let mut ops = vec![EditOp::RandomResizedCrop {
        scale: [0.6, 0.95],
        ratio: [0.8, 1.25],
        height: out.0,
        width: out.1,
    }];
    ops.push(EditOp::ColorJitter {
        brightness: rng.random_range(0.85..1.15),
        contrast: rng.random_range(0.85..1.15),
        saturation: rng.random_range(0.8..1.2),
    });
    EditPipeline::new(seed, ops)
}

/// Rotation by a random angle in `[15, 75]` degrees (either sign) about the centre.
pub fn rotation_pipeline(seed: u64) -> EditPipeline {
    let mut rng = stream_rng(seed, 0x70_7a);
    let mag: f64 = rng.random_range(15.0..75.0);
    let degrees = if rng.random() { mag } else { -mag };
    EditPipeline::new(seed, vec![EditOp::Rotate { degrees }])
}

/// Matting: keep a random ellipse, scale it down and paste it at a random
/// offset on a fresh canvas of the same size.
pub fn matting_pipeline(seed: u64, dims: Dims) -> EditPipeline {
    let mut rng = stream_rng(seed, 0x3a_77);
    let (h, w) = (dims.0 as f64, dims.1 as f64);
    let scale: f64 = rng.random_range(0.5..0.8);
    let room_r = ((1.0 - scale) * h) as i64;
    let room_c = ((1.0 - scale) * w) as i64;
    EditPipeline::new(
        seed,
        vec![
            EditOp::MattingMask {
                mask: MaskShape::Ellipse {
                    center_row: rng.random_range(0.4..0.6) * h,
                    center_col: rng.random_range(0.4..0.6) * w,
                    radius_row: rng.random_range(0.3..0.45) * h,
                    radius_col: rng.random_range(0.3..0.45) * w,
                },
                fill: [0, 0, 0],
            },
            EditOp::OverlayOntoCanvas {
                height: dims.0,
                width: dims.1,
                top: rng.random_range(0..=room_r),
                left: rng.random_range(0..=room_c),
                scale,
                background: random_color(&mut rng),
            },
        ],
    )
}

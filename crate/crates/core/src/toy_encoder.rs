//! Training-free patch encoder built from color and gradient statistics.
//!
//! Each patch token holds 13 values: mean RGB, an 8-bin magnitude-weighted
//! histogram of folded gradient orientation, and the patch centre in
//! `[-1, 1]` coordinates. Tokens are unit-normalized.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::matrix::{Matrix, TokenMatrix};
use crate::supervision::PatchGrid;

pub const TOKEN_DIM: usize = 13;
pub const ORIENTATION_BINS: usize = 8;
/// Number of leading color and gradient entries in a token.
pub const APPEARANCE_DIM: usize = 3 + ORIENTATION_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyEncoderConfig {
    pub patch_size: usize,
    /// Multiplier on the two position entries before normalization.
    pub coord_weight: f64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            patch_size: 16,
            coord_weight: 1.0,
        }
    }
}

fn luminance(img: &Image, r: usize, c: usize) -> f64 {
    let p = img.pixel(r, c);
    (p[0] as u32 + p[1] as u32 + p[2] as u32) as f64 / 3.0
}

fn patch_token(img: &Image, grid: &PatchGrid, patch: usize, cfg: &ToyEncoderConfig) -> [f64; TOKEN_DIM] {
    let ps = grid.patch_size();
    let (top, left) = grid.origin(patch);
    let mut rgb = [0u64; 3];
    let mut hist = [0.0f64; ORIENTATION_BINS];
    for r in top..top + ps {
        let (up, down) = (r.saturating_sub(1).max(top), (r + 1).min(top + ps - 1));
        for c in left..left + ps {
            let p = img.pixel(r, c);
            for k in 0..3 {
                rgb[k] += p[k] as u64;
            }
            let (lf, rt) = (c.saturating_sub(1).max(left), (c + 1).min(left + ps - 1));
            let gx = luminance(img, r, rt) - luminance(img, r, lf);
            let gy = luminance(img, down, c) - luminance(img, up, c);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                let theta = gy.abs().atan2(gx.abs());
                let bin = ((theta / FRAC_PI_2 * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1);
                hist[bin] += mag;
            }
        }
    }
    let area = (ps * ps) as f64;
    let mut t = [0.0; TOKEN_DIM];
    for k in 0..3 {
        t[k] = rgb[k] as f64 / (255.0 * area);
    }
    for (k, h) in hist.iter().enumerate() {
        t[3 + k] = h / (255.0 * area);
    }
    let (pr, pc) = (patch / grid.cols(), patch % grid.cols());
    t[11] = cfg.coord_weight * ((2 * pr + 1) as f64 / grid.rows() as f64 - 1.0);
    t[12] = cfg.coord_weight * ((2 * pc + 1) as f64 / grid.cols() as f64 - 1.0);
    let n = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        t.iter_mut().for_each(|v| *v /= n);
    } else {
        // all-zero features
        t[0] = 1.0;
    }
    t
}

/// One token per patch, row-major over the grid.
pub fn encode_patches(image: &Image, cfg: &ToyEncoderConfig) -> Result<TokenMatrix> {
    if !cfg.coord_weight.is_finite() {
        return Err(Error::parameter("coord_weight must be finite"));
    }
    let grid = PatchGrid::new(image.dims(), cfg.patch_size)?;
    let rows: Vec<[f64; TOKEN_DIM]> = (0..grid.len())
        .into_par_iter()
        .map(|i| patch_token(image, &grid, i, cfg))
        .collect();
    Matrix::from_vec(grid.len(), TOKEN_DIM, rows.concat())
}

/// Unit-normalized mean of the patch tokens.
pub fn encode_global(image: &Image, cfg: &ToyEncoderConfig) -> Result<Vec<f64>> {
    let tokens = encode_patches(image, cfg)?;
    Ok(global_from_tokens(&tokens))
}

pub fn global_from_tokens(tokens: &TokenMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; tokens.cols()];
    for row in tokens.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        mean.iter_mut().for_each(|v| *v /= n);
    }
    mean
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edit_ops::{apply_edit, EditOp, EditOptions};
    use crate::coord_table::CoordTable;
    use crate::matrix::{cosine, norm};

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |r, c| {
            let v = ((r * 7 + c * 13) % 29) as u8 * 8;
            [v, (r * 5 % 256) as u8, (c * 3 % 256) as u8, 255]
        })
        .unwrap()
    }

    #[test]
    fn uniform_image() {
        let img = Image::filled(64, 48, &[128, 128, 128]).unwrap();
        let t = encode_patches(&img, &ToyEncoderConfig::default()).unwrap();
        assert_eq!(t.shape(), (12, TOKEN_DIM));
        let app = |i: usize| {
            let a = &t.row(i)[..APPEARANCE_DIM];
            let n = norm(a);
            a.iter().map(|v| v / n).collect::<Vec<_>>()
        };
        for i in 1..t.rows() {
            assert!(app(i).iter().zip(app(0)).all(|(a, b)| (a - b).abs() < 1e-15));
        }
        let flat = ToyEncoderConfig { coord_weight: 0.0, ..Default::default() };
        let t = encode_patches(&img, &flat).unwrap();
        for i in 1..t.rows() {
            assert_eq!(t.row(i), t.row(0));
        }
        let g = encode_global(&img, &flat).unwrap();
        assert!(g.iter().zip(t.row(0)).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let img = textured(64, 64);
        let cfg = ToyEncoderConfig::default();
        let a = encode_patches(&img, &cfg).unwrap();
        assert_eq!(a, encode_patches(&img.clone(), &cfg).unwrap());
        for r in a.iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
        let g = encode_global(&img, &cfg).unwrap();
        assert!((cosine(&g, &encode_global(&img, &cfg).unwrap()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hflip_mirrors_tokens() {
        let img = textured(48, 64);
        let cfg = ToyEncoderConfig::default();
        let table = CoordTable::identity(img.height(), img.width()).unwrap();
        let (flipped, _) = apply_edit(&img, &table, &EditOp::Hflip, &EditOptions::default()).unwrap();
        let a = encode_patches(&img, &cfg).unwrap();
        let b = encode_patches(&flipped, &cfg).unwrap();
        let cols = 4;
        for r in 0..3 {
            for c in 0..cols {
                let x = a.row(r * cols + c);
                let y = b.row(r * cols + cols - 1 - c);
                for k in 0..APPEARANCE_DIM {
                    assert!((x[k] - y[k]).abs() < 1e-12, "patch ({r},{c}) entry {k}");
                }
                assert!((x[11] - y[11]).abs() < 1e-15);
                assert!((x[12] + y[12]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_indivisible() {
        let img = Image::filled(30, 32, &[0, 0, 0]).unwrap();
        assert!(matches!(encode_patches(&img, &ToyEncoderConfig::default()), Err(Error::Parameter(_))));
    }
}

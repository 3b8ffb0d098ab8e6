//! Patch-grid heatmaps rendered with a viridis-like ramp.

use crate::error::{Error, Result};
use crate::image::Image;

const RAMP: [(f64, [f64; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

/// Color for `t` in `[0, 1]`; values outside are clamped.
pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let i = RAMP.windows(2).position(|w| t <= w[1].0).unwrap_or(RAMP.len() - 2);
    let (t0, c0) = RAMP[i];
    let (t1, c1) = RAMP[i + 1];
    let u = (t - t0) / (t1 - t0);
    std::array::from_fn(|k| (c0[k] + u * (c1[k] - c0[k])).round() as u8)
}

/// Render one value per grid cell as a `cell x cell` block. Values are
/// min-max scaled; a constant grid renders at the low end of the ramp.
pub fn render_grid(values: &[f64], rows: usize, cols: usize, cell: usize) -> Result<Image> {
    if values.len() != rows * cols {
        return Err(Error::mismatch(format!("{} values for a {rows}x{cols} grid", values.len())));
    }
    if cell == 0 {
        return Err(Error::parameter("cell size must be positive"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("heatmap values must be finite"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let colors: Vec<[u8; 3]> = values
        .iter()
        .map(|v| viridis(if span > 0.0 { (v - lo) / span } else { 0.0 }))
        .collect();
    Image::from_fn(rows * cell, cols * cell, 3, |r, c| {
        let [a, b, d] = colors[(r / cell) * cols + c / cell];
        [a, b, d, 255]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(viridis(0.0), [68, 1, 84]);
        assert_eq!(viridis(1.0), [253, 231, 37]);
        assert_eq!(viridis(2.0), viridis(1.0));
    }

    #[test]
    fn grid_size_and_constant() {
        let img = render_grid(&[0.5; 6], 2, 3, 4).unwrap();
        assert_eq!(img.dims(), (8, 12));
        assert!(img.data().chunks(3).all(|p| p == [68, 1, 84]));
        let img = render_grid(&[0.0, 1.0], 1, 2, 2).unwrap();
        assert_eq!(img.pixel(0, 3), [253, 231, 37]);
        assert!(render_grid(&[0.0], 1, 2, 2).is_err());
    }
}

//! Patch-level supervision derived from coordinate tables.
//!
//! [`overlap_counts`] counts how many pixels of each query patch land in each
//! reference patch; [`prior_qhat`] and [`sharpen`] turn those counts into
//! row-stochastic targets. [`locnn_targets`] and [`featnn_targets`] are the
//! heuristic matchers used as baselines.

use std::io::{Read, Write};

use crate::coord_table::{Coord, CoordTable, Dims};
use crate::error::{Error, Result};
use crate::matrix::{cosine, Matrix, TokenMatrix};

/// Square patch tiling of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    height: usize,
    width: usize,
    patch_size: usize,
}

impl PatchGrid {
    pub const DEFAULT_PATCH_SIZE: usize = 16;

    pub fn new(dims: Dims, patch_size: usize) -> Result<Self> {
        let (height, width) = dims;
        if patch_size == 0 {
            return Err(Error::parameter("patch size must be positive"));
        }
        if height == 0 || width == 0 || height % patch_size != 0 || width % patch_size != 0 {
            return Err(Error::parameter(format!(
                "patch size {patch_size} does not tile a {height}x{width} image"
            )));
        }
        Ok(PatchGrid {
            height,
            width,
            patch_size,
        })
    }

    pub fn dims(&self) -> Dims {
        (self.height, self.width)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn rows(&self) -> usize {
        self.height / self.patch_size
    }

    pub fn cols(&self) -> usize {
        self.width / self.patch_size
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per patch.
    pub fn patch_area(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Patch index containing a pixel.
    #[inline]
    pub fn patch_of(&self, c: Coord) -> usize {
        (c.row as usize / self.patch_size) * self.cols() + c.col as usize / self.patch_size
    }

    /// Top-left pixel of a patch.
    pub fn origin(&self, patch: usize) -> (usize, usize) {
        ((patch / self.cols()) * self.patch_size, (patch % self.cols()) * self.patch_size)
    }

    /// Geometric center of a patch in pixel-center coordinates.
    pub fn centroid(&self, patch: usize) -> (f64, f64) {
        let (r, c) = self.origin(patch);
        let half = (self.patch_size as f64 - 1.0) / 2.0;
        (r as f64 + half, c as f64 + half)
    }

    /// Pixels of a patch, row-major.
    pub fn pixels(&self, patch: usize) -> impl Iterator<Item = Coord> {
        let (r0, c0) = self.origin(patch);
        let ps = self.patch_size;
        (r0..r0 + ps).flat_map(move |r| (c0..c0 + ps).map(move |c| Coord::new(r as u32, c as u32)))
    }
}

/// Row-stochastic target matrix over reference patches, one row per query patch.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    pub matrix: Matrix<f64>,
    /// `true` where the query patch takes part in the loss.
    pub row_mask: Vec<bool>,
    /// Sharpening exponent, `None` for heuristic or loaded targets.
    pub gamma: Option<f64>,
}

impl TargetDistribution {
    pub fn n_q(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_r(&self) -> usize {
        self.matrix.cols()
    }

    pub fn unmasked_rows(&self) -> usize {
        self.row_mask.iter().filter(|&&m| m).count()
    }

    /// Mean number of positive entries over unmasked rows.
    pub fn mean_support(&self) -> f64 {
        let n = self.unmasked_rows();
        if n == 0 {
            return 0.0;
        }
        let total: usize = (0..self.n_q())
            .filter(|&i| self.row_mask[i])
            .map(|i| self.matrix.row(i).iter().filter(|&&v| v > 0.0).count())
            .sum();
        total as f64 / n as f64
    }

    /// Shannon entropy (nats) of each row; masked rows report 0.
    pub fn row_entropies(&self) -> Vec<f64> {
        (0..self.n_q())
            .map(|i| if self.row_mask[i] { entropy(self.matrix.row(i)) } else { 0.0 })
            .collect()
    }

    /// Check mask length, entry signs and unit row sums (to 1e-9).
    pub fn validate(&self) -> Result<()> {
        if self.row_mask.len() != self.n_q() {
            return Err(Error::mismatch("row mask length differs from row count"));
        }
        for i in 0..self.n_q() {
            let row = self.matrix.row(i);
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::numeric(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if self.row_mask[i] && (s - 1.0).abs() > 1e-9 {
                return Err(Error::numeric(format!("row {i} sums to {s}")));
            }
            if !self.row_mask[i] && s != 0.0 {
                return Err(Error::numeric(format!("masked row {i} is not zero")));
            }
        }
        Ok(())
    }
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Count, for each (query patch, reference patch), the query pixels whose
/// table value lies in the reference patch. Untracked pixels count nowhere.
pub fn overlap_counts(table_qr: &CoordTable, grid_q: &PatchGrid, grid_r: &PatchGrid) -> Result<Matrix<u32>> {
    if table_qr.dims() != grid_q.dims() || table_qr.source_dims() != grid_r.dims() {
        return Err(Error::mismatch(format!(
            "table maps {:?} -> {:?} but grids cover {:?} -> {:?}",
            table_qr.dims(),
            table_qr.source_dims(),
            grid_q.dims(),
            grid_r.dims()
        )));
    }
    let mut counts = Matrix::zeros(grid_q.len(), grid_r.len());
    for (key, value) in table_qr.iter_present() {
        counts[(grid_q.patch_of(key), grid_r.patch_of(value))] += 1;
    }
    Ok(counts)
}

/// Overlap fractions `counts / patch_area`. Rows sum to the tracked share of
/// each query patch, which can be below one.
pub fn prior_qhat(counts: &Matrix<u32>, grid_q: &PatchGrid) -> Matrix<f64> {
    let area = grid_q.patch_area() as f64;
    Matrix::from_fn(counts.rows(), counts.cols(), |i, j| counts.get(i, j) as f64 / area)
}

/// Rows of a count or prior matrix with positive mass.
pub fn support_mask<T: Copy + Default + PartialOrd>(m: &Matrix<T>) -> Vec<bool> {
    m.iter_rows().map(|r| r.iter().any(|&v| v > T::default())).collect()
}

/// Sharpen a prior row-wise: `q^γ / Σ q^γ` over the positive support.
///
/// `γ = 0` gives the uniform distribution over the support and `γ = +∞` puts
/// all mass on the largest entry (lowest index on ties). Masked rows are zeroed.
pub fn sharpen(qhat: &Matrix<f64>, gamma: f64, row_mask: &[bool]) -> Result<TargetDistribution> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::parameter(format!("gamma must be >= 0, got {gamma}")));
    }
    if row_mask.len() != qhat.rows() {
        return Err(Error::mismatch("row mask length differs from row count"));
    }
    let mut out = Matrix::zeros(qhat.rows(), qhat.cols());
    for (i, &active) in row_mask.iter().enumerate() {
        if !active {
            continue;
        }
        let row = qhat.row(i);
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::numeric(format!("prior row {i} has a negative or non-finite entry")));
        }
        let (argmax, max) = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (j, &v)| if v > bv { (j, v) } else { (bi, bv) });
        if max <= 0.0 {
            return Err(Error::parameter(format!("unmasked prior row {i} has no positive entry")));
        }
        let dst = out.row_mut(i);
        if gamma.is_infinite() {
            dst[argmax] = 1.0;
            continue;
        }
        if gamma == 0.0 {
            let support = row.iter().filter(|&&v| v > 0.0).count() as f64;
            for (d, &v) in dst.iter_mut().zip(row) {
                if v > 0.0 {
                    *d = 1.0 / support;
                }
            }
            continue;
        }
        // scale by the row max first so large γ does not underflow
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            if v > 0.0 {
                *d = (v / max).powf(gamma);
                total += *d;
            }
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    Ok(TargetDistribution {
        matrix: out,
        row_mask: row_mask.to_vec(),
        gamma: Some(gamma),
    })
}

/// Full table-to-targets path: counts, prior, mask, sharpening.
pub fn pixtrace_targets(table_qr: &CoordTable, grid_q: &PatchGrid, grid_r: &PatchGrid, gamma: f64) -> Result<TargetDistribution> {
    let counts = overlap_counts(table_qr, grid_q, grid_r)?;
    let mask = support_mask(&counts);
    sharpen(&prior_qhat(&counts, grid_q), gamma, &mask)
}

/// Heuristic positives: for each query patch, `(reference patch, weight)` pairs.
/// An empty row means the patch is masked.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub n_r: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl MatchAssignment {
    fn from_indices(n_r: usize, picks: Vec<Vec<usize>>) -> Self {
        let rows = picks
            .into_iter()
            .map(|p| {
                let w = 1.0 / p.len().max(1) as f64;
                p.into_iter().map(|j| (j, w)).collect()
            })
            .collect();
        MatchAssignment { n_r, rows }
    }

    /// Number of selected `(i, j)` entries with zero true overlap, counting
    /// only query rows where `counts` has any overlap at all.
    pub fn false_matches(&self, counts: &Matrix<u32>) -> usize {
        self.rows
            .iter()
            .enumerate()
            .filter(|(i, _)| counts.row(*i).iter().any(|&c| c > 0))
            .map(|(i, row)| row.iter().filter(|(j, _)| counts.get(i, *j) == 0).count())
            .sum()
    }
}

/// Indices of the `k` smallest values, ties broken by lower index.
fn k_smallest(values: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(j, _)| j).collect()
}

/// Location of a patch in a table's value frame: the value of the tracked
/// pixel closest to the patch centroid (row-major first on ties).
fn patch_location(table: &CoordTable, grid: &PatchGrid, patch: usize) -> Option<(f64, f64)> {
    let (cr, cc) = grid.centroid(patch);
    grid.pixels(patch)
        .filter_map(|p| table.get(p).map(|v| (p, v)))
        .map(|(p, v)| {
            let d = (p.row as f64 - cr).powi(2) + (p.col as f64 - cc).powi(2);
            (d, v)
        })
        .fold(None, |best: Option<(f64, Coord)>, (d, v)| match best {
            Some((bd, _)) if bd <= d => best,
            _ => Some((d, v)),
        })
        .map(|(_, v)| (v.row as f64, v.col as f64))
}

/// Location-based nearest patches through a shared original frame.
///
/// Query and reference patch centroids are both carried into the original
/// image through their tables; each located query patch takes the `k`
/// reference patches whose located centroids are nearest there. Nothing checks
/// that the chosen patches actually overlap, which is the heuristic's known
/// weakness.
pub fn locnn_targets_bridged(
    table_qo: &CoordTable,
    table_ro: &CoordTable,
    grid_q: &PatchGrid,
    grid_r: &PatchGrid,
    k: usize,
) -> Result<MatchAssignment> {
    if k == 0 || k > grid_r.len() {
        return Err(Error::parameter(format!("k = {k} must be in 1..={}", grid_r.len())));
    }
    if table_qo.dims() != grid_q.dims() || table_ro.dims() != grid_r.dims() {
        return Err(Error::mismatch("tables must be keyed on the grid frames"));
    }
    if table_qo.source_dims() != table_ro.source_dims() {
        return Err(Error::mismatch("query and reference tables must share a source frame"));
    }
    let ref_locs: Vec<(usize, (f64, f64))> = (0..grid_r.len())
        .filter_map(|j| patch_location(table_ro, grid_r, j).map(|l| (j, l)))
        .collect();
    let picks = (0..grid_q.len())
        .map(|i| match patch_location(table_qo, grid_q, i) {
            None => Vec::new(),
            Some((qr, qc)) => {
                let d: Vec<(usize, f64)> = ref_locs
                    .iter()
                    .map(|&(j, (rr, rc))| (j, (qr - rr).powi(2) + (qc - rc).powi(2)))
                    .collect();
                k_smallest(&d, k)
            }
        })
        .collect();
    Ok(MatchAssignment::from_indices(grid_r.len(), picks))
}

/// Location-based nearest patches using a direct query-to-reference table:
/// the reference frame itself serves as the shared frame.
pub fn locnn_targets(table_qr: &CoordTable, grid_q: &PatchGrid, grid_r: &PatchGrid, k: usize) -> Result<MatchAssignment> {
    let ref_identity = CoordTable::identity(grid_r.dims().0, grid_r.dims().1)?;
    locnn_targets_bridged(table_qr, &ref_identity, grid_q, grid_r, k)
}

/// Feature nearest neighbours: top-`k` reference tokens by cosine for every
/// query token, ties broken by lower index.
pub fn featnn_targets(tokens_q: &TokenMatrix, tokens_r: &TokenMatrix, k: usize) -> Result<MatchAssignment> {
    if tokens_q.cols() != tokens_r.cols() {
        return Err(Error::mismatch(format!(
            "token dims differ: {} vs {}",
            tokens_q.cols(),
            tokens_r.cols()
        )));
    }
    if k == 0 || k > tokens_r.rows() {
        return Err(Error::parameter(format!("k = {k} must be in 1..={}", tokens_r.rows())));
    }
    let picks = tokens_q
        .iter_rows()
        .map(|q| {
            let d: Vec<(usize, f64)> = tokens_r.iter_rows().enumerate().map(|(j, r)| (j, -cosine(q, r))).collect();
            k_smallest(&d, k)
        })
        .collect();
    Ok(MatchAssignment::from_indices(tokens_r.rows(), picks))
}

/// Dense targets from a heuristic assignment; empty rows are masked.
pub fn assignment_to_distribution(assignment: &MatchAssignment, n_r: usize) -> Result<TargetDistribution> {
    let mut m = Matrix::zeros(assignment.rows.len(), n_r);
    let mut mask = vec![false; assignment.rows.len()];
    for (i, row) in assignment.rows.iter().enumerate() {
        for &(j, w) in row {
            if j >= n_r {
                return Err(Error::mismatch(format!("assignment index {j} outside {n_r} reference patches")));
            }
            m[(i, j)] += w;
        }
        mask[i] = !row.is_empty();
    }
    Ok(TargetDistribution {
        matrix: m,
        row_mask: mask,
        gamma: None,
    })
}

const TGT_MAGIC: &[u8; 4] = b"TGT1";

/// `.tgt` layout: magic `TGT1`, u32 `N_q`, u32 `N_r`, `N_q` mask bytes, then
/// `N_q x N_r` little-endian f32 values row-major.
pub fn write_targets<W: Write>(t: &TargetDistribution, mut w: W) -> Result<()> {
    let mut out = Vec::with_capacity(12 + t.n_q() * (1 + 4 * t.n_r()));
    out.extend_from_slice(TGT_MAGIC);
    out.extend_from_slice(&(t.n_q() as u32).to_le_bytes());
    out.extend_from_slice(&(t.n_r() as u32).to_le_bytes());
    out.extend(t.row_mask.iter().map(|&m| m as u8));
    for &v in t.matrix.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&out)?;
    Ok(())
}

/// Read a `.tgt` stream. Unmasked rows are renormalized in 64-bit after the
/// 32-bit load so they sum to one again.
pub fn read_targets<R: Read>(mut r: R) -> Result<TargetDistribution> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 12 {
        return Err(Error::format("target header truncated"));
    }
    if &buf[..4] != TGT_MAGIC {
        return Err(Error::format(format!("bad target magic {:?}", &buf[..4])));
    }
    let n_q = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let n_r = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let need = n_q
        .checked_mul(n_r)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12 + n_q))
        .ok_or_else(|| Error::format("target dims overflow"))?;
    if buf.len() != need {
        return Err(Error::format(format!("target file is {} bytes, expected {need}", buf.len())));
    }
    let mask_bytes = &buf[12..12 + n_q];
    if mask_bytes.iter().any(|&b| b > 1) {
        return Err(Error::format("row mask bytes must be 0 or 1"));
    }
    let row_mask: Vec<bool> = mask_bytes.iter().map(|&b| b == 1).collect();
    let values: Vec<f64> = buf[12 + n_q..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut matrix = Matrix::from_vec(n_q, n_r, values)?;
    for (i, &active) in row_mask.iter().enumerate() {
        let row = matrix.row_mut(i);
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::format(format!("target row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if active {
            if s <= 0.0 {
                return Err(Error::format(format!("unmasked target row {i} has zero mass")));
            }
            row.iter_mut().for_each(|v| *v /= s);
        } else if s != 0.0 {
            return Err(Error::format(format!("masked target row {i} is not zero")));
        }
    }
    Ok(TargetDistribution {
        matrix,
        row_mask,
        gamma: None,
    })
}

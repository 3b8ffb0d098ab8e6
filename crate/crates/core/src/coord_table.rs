//! Dense per-pixel coordinate tables.
//!
//! A [`CoordTable`] is keyed on the pixels of one frame (usually an edited
//! image) and stores, for every key, the pixel in a source frame it was taken
//! from. Pixels with no counterpart are absent. Tables are immutable values:
//! every operation returns a new table.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Integer pixel coordinate, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub const fn new(row: u32, col: u32) -> Self {
        Coord { row, col }
    }
}

impl From<(u32, u32)> for Coord {
    fn from((row, col): (u32, u32)) -> Self {
        Coord { row, col }
    }
}

/// Frame size in pixels, `(height, width)`.
pub type Dims = (usize, usize);

/// Round half up on one axis: `floor(x + 0.5)`.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Round a real `(row, col)` point onto the pixel grid of `dims`; `None` if the
/// rounded point falls outside.
#[inline]
pub fn snap(point: (f64, f64), dims: Dims) -> Option<Coord> {
    let (r, c) = (round_half_up(point.0), round_half_up(point.1));
    if !(r.is_finite() && c.is_finite()) {
        return None;
    }
    if r < 0.0 || c < 0.0 || r >= dims.0 as f64 || c >= dims.1 as f64 {
        return None;
    }
    Some(Coord::new(r as u32, c as u32))
}

/// Per-pixel mapping from a keyed frame to a source frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordTable {
    height: usize,
    width: usize,
    source_height: usize,
    source_width: usize,
    mapping: Vec<Option<Coord>>,
}

impl CoordTable {
    /// Table where every pixel maps to itself.
    pub fn identity(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        let mapping = (0..height)
            .flat_map(|r| (0..width).map(move |c| Some(Coord::new(r as u32, c as u32))))
            .collect();
        Ok(CoordTable {
            height,
            width,
            source_height: height,
            source_width: width,
            mapping,
        })
    }

    /// Table of the given shape with every pixel untracked.
    pub fn empty(dims: Dims, source_dims: Dims) -> Result<Self> {
        check_dims(dims.0, dims.1)?;
        check_dims(source_dims.0, source_dims.1)?;
        Ok(CoordTable {
            height: dims.0,
            width: dims.1,
            source_height: source_dims.0,
            source_width: source_dims.1,
            mapping: vec![None; dims.0 * dims.1],
        })
    }

    /// Build a table from a row-major mapping, validating every value.
    pub fn from_mapping(dims: Dims, source_dims: Dims, mapping: Vec<Option<Coord>>) -> Result<Self> {
        check_dims(dims.0, dims.1)?;
        check_dims(source_dims.0, source_dims.1)?;
        if mapping.len() != dims.0 * dims.1 {
            return Err(Error::mismatch(format!(
                "mapping has {} entries, expected {}x{}",
                mapping.len(),
                dims.0,
                dims.1
            )));
        }
        if let Some(bad) = mapping.iter().flatten().find(|v| {
            v.row as usize >= source_dims.0 || v.col as usize >= source_dims.1
        }) {
            return Err(Error::OutOfBounds {
                row: bad.row as usize,
                col: bad.col as usize,
                height: source_dims.0,
                width: source_dims.1,
            });
        }
        Ok(CoordTable {
            height: dims.0,
            width: dims.1,
            source_height: source_dims.0,
            source_width: source_dims.1,
            mapping,
        })
    }

    /// Build a table by evaluating `f` at every key, row-major.
    pub fn from_fn(dims: Dims, source_dims: Dims, mut f: impl FnMut(Coord) -> Option<Coord>) -> Result<Self> {
        check_dims(dims.0, dims.1)?;
        let mut mapping = Vec::with_capacity(dims.0 * dims.1);
        for r in 0..dims.0 {
            for c in 0..dims.1 {
                mapping.push(f(Coord::new(r as u32, c as u32)));
            }
        }
        Self::from_mapping(dims, source_dims, mapping)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Keyed frame `(height, width)`.
    pub fn dims(&self) -> Dims {
        (self.height, self.width)
    }

    /// Value frame `(source_height, source_width)`.
    pub fn source_dims(&self) -> Dims {
        (self.source_height, self.source_width)
    }

    /// Row-major view of all entries.
    pub fn entries(&self) -> &[Option<Coord>] {
        &self.mapping
    }

    /// Iterate `(key, value)` over present entries in row-major key order.
    pub fn iter_present(&self) -> impl Iterator<Item = (Coord, Coord)> + '_ {
        let w = self.width;
        self.mapping.iter().enumerate().filter_map(move |(i, v)| {
            v.map(|v| (Coord::new((i / w) as u32, (i % w) as u32), v))
        })
    }

    pub fn tracked_count(&self) -> usize {
        self.mapping.iter().filter(|v| v.is_some()).count()
    }

    #[inline]
    fn index(&self, key: Coord) -> usize {
        key.row as usize * self.width + key.col as usize
    }

    #[inline]
    pub fn contains_key(&self, key: Coord) -> bool {
        (key.row as usize) < self.height && (key.col as usize) < self.width
    }

    /// Look up a key. Out-of-frame keys are an error; untracked pixels are `Ok(None)`.
    pub fn lookup(&self, key: Coord) -> Result<Option<Coord>> {
        if !self.contains_key(key) {
            return Err(Error::OutOfBounds {
                row: key.row as usize,
                col: key.col as usize,
                height: self.height,
                width: self.width,
            });
        }
        Ok(self.mapping[self.index(key)])
    }

    /// Unchecked-by-`Result` lookup for in-frame keys.
    #[inline]
    pub fn get(&self, key: Coord) -> Option<Coord> {
        if self.contains_key(key) {
            self.mapping[self.index(key)]
        } else {
            None
        }
    }

    /// Replace every present value `v` with `round(point_map(v))` in a new source frame.
    ///
    /// Values that round outside `new_source_dims`, or for which `point_map`
    /// returns `None`, become absent. Keys are unchanged.
    pub fn map_values<F>(&self, point_map: F, new_source_dims: Dims) -> Result<Self>
    where
        F: Fn(Coord) -> Option<(f64, f64)>,
    {
        check_dims(new_source_dims.0, new_source_dims.1)?;
        let mapping = self
            .mapping
            .iter()
            .map(|v| v.and_then(|v| point_map(v)).and_then(|p| snap(p, new_source_dims)))
            .collect();
        Ok(CoordTable {
            height: self.height,
            width: self.width,
            source_height: new_source_dims.0,
            source_width: new_source_dims.1,
            mapping,
        })
    }

    /// Swap keys and values.
    ///
    /// The result is keyed on the source frame. Keys are visited row-major and
    /// a later key overrides an earlier one that shares the same value; source
    /// pixels never hit stay absent.
    pub fn reverse(&self, target_dims: Dims) -> Result<Self> {
        if target_dims != self.source_dims() {
            return Err(Error::mismatch(format!(
                "reverse target {:?} does not match table source frame {:?}",
                target_dims,
                self.source_dims()
            )));
        }
        let mut mapping = vec![None; self.source_height * self.source_width];
        for (key, value) in self.iter_present() {
            mapping[value.row as usize * self.source_width + value.col as usize] = Some(key);
        }
        Ok(CoordTable {
            height: self.source_height,
            width: self.source_width,
            source_height: self.height,
            source_width: self.width,
            mapping,
        })
    }

    /// Two-hop composition `outer ∘ inner`.
    ///
    /// `inner` maps frame X to frame Y and `outer` maps Y to Z; the result maps
    /// X to Z. Absence on either hop propagates.
    pub fn compose(outer: &CoordTable, inner: &CoordTable) -> Result<Self> {
        if inner.source_dims() != outer.dims() {
            return Err(Error::mismatch(format!(
                "inner table values live in {:?} but outer table is keyed on {:?}",
                inner.source_dims(),
                outer.dims()
            )));
        }
        let mapping = inner
            .mapping
            .iter()
            .map(|v| v.and_then(|mid| outer.mapping[outer.index(mid)]))
            .collect();
        Ok(CoordTable {
            height: inner.height,
            width: inner.width,
            source_height: outer.source_height,
            source_width: outer.source_width,
            mapping,
        })
    }

    /// Mark every key for which `drop` returns true as untracked.
    pub fn with_dropped(&self, mut drop: impl FnMut(Coord) -> bool) -> Self {
        let w = self.width;
        let mapping = self
            .mapping
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let key = Coord::new((i / w) as u32, (i % w) as u32);
                if drop(key) {
                    None
                } else {
                    *v
                }
            })
            .collect();
        CoordTable {
            mapping,
            ..self.clone()
        }
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimension(format!(
            "frame must be at least 1x1, got {height}x{width}"
        )));
    }
    if height > i32::MAX as usize || width > i32::MAX as usize {
        return Err(Error::InvalidDimension(format!(
            "frame {height}x{width} exceeds the i32 coordinate range"
        )));
    }
    Ok(())
}

const PTT_MAGIC: &[u8; 4] = b"PTT1";
const PTT_HEADER: usize = 4 + 4 * 4;

/// Encode a table in the `.ptt` layout: magic `PTT1`, four little-endian u32
/// (height, width, source_height, source_width), then one `(row, col)` i32 pair
/// per key in row-major order with `(-1, -1)` for absent entries.
pub fn serialize_table(table: &CoordTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(PTT_HEADER + table.mapping.len() * 8);
    out.extend_from_slice(PTT_MAGIC);
    for d in [table.height, table.width, table.source_height, table.source_width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &table.mapping {
        let (r, c) = match v {
            Some(v) => (v.row as i32, v.col as i32),
            None => (-1, -1),
        };
        out.extend_from_slice(&r.to_le_bytes());
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

/// Decode a `.ptt` byte stream.
pub fn deserialize_table(bytes: &[u8]) -> Result<CoordTable> {
    if bytes.len() < PTT_HEADER {
        return Err(Error::format("table header truncated"));
    }
    if &bytes[..4] != PTT_MAGIC {
        return Err(Error::format(format!("bad table magic {:?}", &bytes[..4])));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let (h, w, sh, sw) = (u32_at(4), u32_at(8), u32_at(12), u32_at(16));
    let n = h
        .checked_mul(w)
        .ok_or_else(|| Error::format("table dims overflow"))?;
    let payload = &bytes[PTT_HEADER..];
    if payload.len() != n * 8 {
        return Err(Error::format(format!(
            "table payload is {} bytes, {h}x{w} needs {}",
            payload.len(),
            n * 8
        )));
    }
    let mut mapping = Vec::with_capacity(n);
    for rec in payload.chunks_exact(8) {
        let r = i32::from_le_bytes(rec[..4].try_into().unwrap());
        let c = i32::from_le_bytes(rec[4..].try_into().unwrap());
        mapping.push(match (r, c) {
            (-1, -1) => None,
            (r, c) if r >= 0 && c >= 0 => Some(Coord::new(r as u32, c as u32)),
            _ => return Err(Error::format(format!("invalid table record ({r}, {c})"))),
        });
    }
    CoordTable::from_mapping((h, w), (sh, sw), mapping).map_err(|e| match e {
        Error::Format(_) => e,
        other => Error::format(other.to_string()),
    })
}

pub fn write_table<W: Write>(table: &CoordTable, mut w: W) -> Result<()> {
    w.write_all(&serialize_table(table))?;
    Ok(())
}

pub fn read_table<R: Read>(mut r: R) -> Result<CoordTable> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    deserialize_table(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(r: u32, c: u32) -> Coord {
        Coord::new(r, c)
    }

    #[test]
    fn identity_small_and_large() {
        let t = CoordTable::identity(2, 2).unwrap();
        for (k, v) in [(c(0, 0), c(0, 0)), (c(0, 1), c(0, 1)), (c(1, 0), c(1, 0)), (c(1, 1), c(1, 1))] {
            assert_eq!(t.lookup(k).unwrap(), Some(v));
        }
        let one = CoordTable::identity(1, 1).unwrap();
        assert_eq!(one.lookup(c(0, 0)).unwrap(), Some(c(0, 0)));

        let big = CoordTable::identity(224, 224).unwrap();
        assert_eq!(big.entries().len(), 50_176);
        assert_eq!(big.tracked_count(), 50_176);
        assert!(big.iter_present().all(|(k, v)| k == v));
    }

    #[test]
    fn identity_rejects_zero() {
        assert!(matches!(CoordTable::identity(0, 3), Err(Error::InvalidDimension(_))));
        assert!(matches!(CoordTable::identity(3, 0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn lookup_cases() {
        let t = CoordTable::identity(4, 4).unwrap();
        assert_eq!(t.lookup(c(2, 3)).unwrap(), Some(c(2, 3)));
        assert!(matches!(t.lookup(c(5, 0)), Err(Error::OutOfBounds { .. })));

        // crop away row 0: new frame rows 0..3 map to old rows 1..4, so
        // the reversed table has nothing for old row 0
        let cropped = CoordTable::from_fn((3, 4), (4, 4), |k| Some(c(k.row + 1, k.col))).unwrap();
        let back = cropped.reverse((4, 4)).unwrap();
        assert_eq!(back.lookup(c(0, 2)).unwrap(), None);
        assert_eq!(back.lookup(c(1, 2)).unwrap(), Some(c(0, 2)));
    }

    #[test]
    fn map_values_translate() {
        let t = CoordTable::identity(4, 4).unwrap();
        let moved = t
            .map_values(|v| Some((v.row as f64 + 1.0, v.col as f64 + 1.0)), (4, 4))
            .unwrap();
        assert_eq!(moved.lookup(c(2, 2)).unwrap(), Some(c(3, 3)));
        assert_eq!(moved.lookup(c(3, 3)).unwrap(), None);
        // brute force over every key
        for r in 0..4u32 {
            for col in 0..4u32 {
                let expect = if r + 1 < 4 && col + 1 < 4 { Some(c(r + 1, col + 1)) } else { None };
                assert_eq!(moved.lookup(c(r, col)).unwrap(), expect);
            }
        }
    }

    #[test]
    fn map_values_identity_and_scale() {
        let t = CoordTable::identity(4, 4).unwrap();
        let same = t.map_values(|v| Some((v.row as f64, v.col as f64)), (4, 4)).unwrap();
        assert_eq!(same, t);

        let t2 = CoordTable::identity(2, 2).unwrap();
        let scaled = t2
            .map_values(|v| Some((2.0 * v.row as f64, 2.0 * v.col as f64)), (4, 4))
            .unwrap();
        let vals: Vec<_> = scaled.entries().iter().map(|v| v.unwrap()).collect();
        assert_eq!(vals, vec![c(0, 0), c(0, 2), c(2, 0), c(2, 2)]);
        assert_eq!(scaled.source_dims(), (4, 4));
    }

    #[test]
    fn map_values_rounds_half_up_and_drops() {
        let t = CoordTable::identity(1, 3).unwrap();
        let m = t
            .map_values(
                |v| if v.col == 2 { None } else { Some((0.5, v.col as f64 - 0.5)) },
                (2, 3),
            )
            .unwrap();
        assert_eq!(m.entries(), &[Some(c(1, 0)), Some(c(1, 1)), None]);
    }

    #[test]
    fn reverse_override_rule() {
        // four keys sharing one value: row-major, last write wins
        let mut mapping = vec![None; 20 * 40];
        for (r, col) in [(15, 31), (15, 32), (16, 31), (16, 32)] {
            mapping[r * 40 + col] = Some(c(78, 96));
        }
        let t = CoordTable::from_mapping((20, 40), (100, 100), mapping).unwrap();
        let rev = t.reverse((100, 100)).unwrap();
        assert_eq!(rev.lookup(c(78, 96)).unwrap(), Some(c(16, 32)));
        assert_eq!(rev.tracked_count(), 1);
        assert!(matches!(t.reverse((20, 40)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn reverse_identity_and_translation_involution() {
        let id = CoordTable::identity(5, 7).unwrap();
        assert_eq!(id.reverse((5, 7)).unwrap(), id);

        let shift = CoordTable::from_fn((8, 8), (8, 8), |k| {
            (k.row + 2 < 8 && k.col >= 1).then(|| c(k.row + 2, k.col - 1))
        })
        .unwrap();
        let twice = shift.reverse((8, 8)).unwrap().reverse((8, 8)).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                assert_eq!(twice.lookup(c(r, col)).unwrap(), shift.lookup(c(r, col)).unwrap());
            }
        }
    }

    #[test]
    fn compose_two_hop() {
        // T_bo: b pixel (r, c) came from o (r, c+1); T_ao: a pixel (r, c) came from o (r-1, c)
        let t_bo = CoordTable::from_fn((8, 8), (8, 8), |k| (k.col + 1 < 8).then(|| c(k.row, k.col + 1))).unwrap();
        let t_ao = CoordTable::from_fn((8, 8), (8, 8), |k| (k.row >= 1).then(|| c(k.row - 1, k.col))).unwrap();
        let t_oa = t_ao.reverse((8, 8)).unwrap();
        let t_ba = CoordTable::compose(&t_oa, &t_bo).unwrap();
        for r in 0..8u32 {
            for col in 0..8u32 {
                let two_hop = t_bo.get(c(r, col)).and_then(|o| t_oa.get(o));
                assert_eq!(t_ba.get(c(r, col)), two_hop);
                let expect = (col + 1 < 8 && r + 1 < 8).then(|| c(r + 1, col + 1));
                assert_eq!(t_ba.get(c(r, col)), expect);
            }
        }
        let id = CoordTable::identity(8, 8).unwrap();
        assert_eq!(CoordTable::compose(&id, &t_bo).unwrap(), t_bo);
        let bad = CoordTable::identity(4, 4).unwrap();
        assert!(matches!(CoordTable::compose(&bad, &t_bo), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn compose_absence_propagates() {
        let inner = CoordTable::from_mapping((1, 2), (1, 2), vec![None, Some(c(0, 0))]).unwrap();
        let outer = CoordTable::from_mapping((1, 2), (1, 2), vec![None, Some(c(0, 1))]).unwrap();
        let out = CoordTable::compose(&outer, &inner).unwrap();
        assert_eq!(out.entries(), &[None, None]);
    }

    #[test]
    fn ptt_round_trip_and_errors() {
        let id = CoordTable::identity(4, 4).unwrap();
        let bytes = serialize_table(&id);
        assert_eq!(bytes.len(), 20 + 16 * 8);
        assert_eq!(deserialize_table(&bytes).unwrap(), id);

        let holes = id.with_dropped(|k| (k.row + k.col) % 3 == 0);
        let back = deserialize_table(&serialize_table(&holes)).unwrap();
        assert_eq!(back.entries(), holes.entries());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize_table(&bad), Err(Error::Format(_))));
        assert!(matches!(deserialize_table(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(deserialize_table(&bytes[..10]), Err(Error::Format(_))));
        let mut oob = bytes.clone();
        oob[20..24].copy_from_slice(&9i32.to_le_bytes());
        assert!(matches!(deserialize_table(&oob), Err(Error::Format(_))));
    }
}

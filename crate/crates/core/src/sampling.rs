//! Training batch composition: hard-negative mining batches and matcher pairs.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Precomputed nearest-neighbour ids per image.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnnIndex {
    neighbors: BTreeMap<String, Vec<String>>,
}

impl KnnIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one image's neighbour list. Self-references and duplicates are rejected.
    pub fn insert(&mut self, image: impl Into<String>, neighbors: Vec<String>) -> Result<()> {
        let image = image.into();
        if neighbors.is_empty() {
            return Err(Error::parameter(format!("image {image} has no neighbours")));
        }
        if neighbors.contains(&image) {
            return Err(Error::format(format!("image {image} lists itself as a neighbour")));
        }
        let unique: HashSet<&String> = neighbors.iter().collect();
        if unique.len() != neighbors.len() {
            return Err(Error::format(format!("image {image} has duplicate neighbours")));
        }
        if let Some(k) = self.k() {
            if neighbors.len() != k {
                return Err(Error::format(format!(
                    "image {image} has {} neighbours, expected {k}",
                    neighbors.len()
                )));
            }
        }
        self.neighbors.insert(image, neighbors);
        Ok(())
    }

    pub fn k(&self) -> Option<usize> {
        self.neighbors.values().next().map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, image: &str) -> Option<&[String]> {
        self.neighbors.get(image).map(Vec::as_slice)
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.neighbors.keys().map(String::as_str)
    }

    /// Build from a kNN search result: each image's neighbours excluding itself.
    pub fn from_lists(lists: impl IntoIterator<Item = (String, Vec<String>)>, k: usize) -> Result<Self> {
        let mut idx = KnnIndex::new();
        for (image, list) in lists {
            let own: Vec<String> = list.into_iter().filter(|n| *n != image).take(k).collect();
            idx.insert(image, own)?;
        }
        Ok(idx)
    }

    /// Parse `image_id,neighbor_1,...,neighbor_k` rows (with a header row).
    pub fn parse_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "image_id" {
            return Err(Error::format("line 1: expected header image_id,neighbor_1,..."));
        }
        let mut idx = KnnIndex::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(format!("line {}: {e}", e.position().map_or(0, |p| p.line()))))?;
            let line = rec.position().map_or(0, |p| p.line());
            let mut fields = rec.iter();
            let image = fields.next().unwrap_or_default().to_owned();
            let list: Vec<String> = fields.map(str::to_owned).collect();
            if image.is_empty() || list.iter().any(String::is_empty) {
                return Err(Error::format(format!("line {line}: empty id")));
            }
            idx.insert(image, list)
                .map_err(|e| Error::format(format!("line {line}: {e}")))?;
        }
        Ok(idx)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::parse_csv(f).map_err(|e| e.at_path(path))
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let k = self.k().unwrap_or(0);
        let mut header = vec!["image_id".to_owned()];
        header.extend((1..=k).map(|i| format!("neighbor_{i}")));
        w.write_record(&header)?;
        for (image, list) in &self.neighbors {
            w.write_record(std::iter::once(image).chain(list))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Positive,
    Negative,
}

/// One training pair. A positive pair is an image with its own edited copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchEntry {
    pub image: String,
    pub pair_image: String,
    pub label: PairLabel,
}

pub type Batch = Vec<BatchEntry>;

/// Hard-negative batch: `n / 2` times, draw an anchor image and emit its
/// positive pair, then draw one of the anchor's neighbours uniformly and emit
/// that neighbour's positive pair right after it.
pub fn ghnm_batch(index: &KnnIndex, image_ids: &[String], n: usize, seed: u64) -> Result<Batch> {
    if n % 2 != 0 {
        return Err(Error::parameter(format!("batch size must be even, got {n}")));
    }
    if index.is_empty() || image_ids.is_empty() {
        return Err(Error::parameter("kNN index is empty"));
    }
    let lists: Vec<&[String]> = image_ids
        .iter()
        .map(|id| {
            index
                .neighbors(id)
                .ok_or_else(|| Error::parameter(format!("image {id} missing from the kNN index")))
        })
        .collect::<Result<_>>()?;
    let mut rng = stream_rng(seed, 0);
    let positive = |id: &str| BatchEntry {
        image: id.to_owned(),
        pair_image: id.to_owned(),
        label: PairLabel::Positive,
    };
    let mut batch = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let a = rng.random_range(0..image_ids.len());
        batch.push(positive(&image_ids[a]));
        let list = lists[a];
        let hard = &list[rng.random_range(0..list.len())];
        batch.push(positive(hard));
    }
    Ok(batch)
}

/// Matcher pairs with exactly `round(positive_rate * n)` positives placed by
/// a seeded shuffle; negatives pair two distinct images.
pub fn matcher_pairs(image_ids: &[String], positive_rate: f64, n: usize, seed: u64) -> Result<Batch> {
    if !(0.0..=1.0).contains(&positive_rate) {
        return Err(Error::parameter(format!("positive rate {positive_rate} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::parameter("batch size must be positive"));
    }
    if image_ids.is_empty() {
        return Err(Error::parameter("no images to sample from"));
    }
    let n_pos = (positive_rate * n as f64).round() as usize;
    if n_pos < n && image_ids.len() < 2 {
        return Err(Error::parameter("negative pairs need at least 2 images"));
    }
    let mut rng = stream_rng(seed, 1);
    let mut labels: Vec<PairLabel> = (0..n)
        .map(|i| if i < n_pos { PairLabel::Positive } else { PairLabel::Negative })
        .collect();
    labels.shuffle(&mut rng);
    let m = image_ids.len();
    Ok(labels
        .into_iter()
        .map(|label| {
            let a = rng.random_range(0..m);
            let b = match label {
                PairLabel::Positive => a,
                PairLabel::Negative => (a + rng.random_range(1..m)) % m,
            };
            BatchEntry {
                image: image_ids[a].clone(),
                pair_image: image_ids[b].clone(),
                label,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    fn ring_index(n: usize, k: usize) -> KnnIndex {
        let names = ids(n);
        KnnIndex::from_lists(
            names.iter().enumerate().map(|(i, id)| {
                (id.clone(), (1..=k).map(|d| names[(i + d) % n].clone()).collect())
            }),
            k,
        )
        .unwrap()
    }

    #[test]
    fn ghnm_structure() {
        let idx = ring_index(10, 3);
        let b = ghnm_batch(&idx, &ids(10), 4, 7).unwrap();
        assert_eq!(b.len(), 4);
        for pair in b.chunks(2) {
            assert!(idx.neighbors(&pair[0].image).unwrap().contains(&pair[1].image));
            assert!(pair.iter().all(|e| e.label == PairLabel::Positive && e.image == e.pair_image));
        }
        assert_eq!(b, ghnm_batch(&idx, &ids(10), 4, 7).unwrap());
    }

    #[test]
    fn ghnm_single_neighbour_is_forced() {
        let idx = ring_index(5, 1);
        let b = ghnm_batch(&idx, &ids(5), 20, 3).unwrap();
        for pair in b.chunks(2) {
            assert_eq!(idx.neighbors(&pair[0].image).unwrap()[0], pair[1].image);
        }
    }

    #[test]
    fn ghnm_errors() {
        let idx = ring_index(5, 1);
        assert!(matches!(ghnm_batch(&idx, &ids(5), 3, 0), Err(Error::Parameter(_))));
        assert!(matches!(ghnm_batch(&KnnIndex::new(), &ids(5), 4, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn matcher_rates() {
        let b = matcher_pairs(&ids(8), 0.3, 10, 1).unwrap();
        assert_eq!(b.iter().filter(|e| e.label == PairLabel::Positive).count(), 3);
        let all = matcher_pairs(&ids(8), 1.0, 10, 1).unwrap();
        assert!(all.iter().all(|e| e.label == PairLabel::Positive && e.image == e.pair_image));
        let none = matcher_pairs(&ids(2), 0.0, 50, 1).unwrap();
        assert!(none.iter().all(|e| e.label == PairLabel::Negative && e.image != e.pair_image));
        assert!(matcher_pairs(&ids(1), 0.5, 4, 0).is_err());
        assert!(matcher_pairs(&ids(3), 0.5, 0, 0).is_err());
        assert!(matcher_pairs(&ids(3), 1.5, 4, 0).is_err());
    }

    #[test]
    fn index_rejects_self_neighbours() {
        let mut idx = KnnIndex::new();
        assert!(idx.insert("a", vec!["a".into()]).is_err());
        assert!(idx.insert("a", vec![]).is_err());
    }

    #[test]
    fn index_csv() {
        let idx = ring_index(4, 2);
        let mut buf = Vec::new();
        idx.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,neighbor_1,neighbor_2\n"));
        assert_eq!(KnnIndex::parse_csv(buf.as_slice()).unwrap(), idx);
        let err = KnnIndex::parse_csv("image_id,neighbor_1\na,b\nb,b\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}

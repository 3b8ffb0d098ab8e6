//! Ranking metrics and retrieval post-processing.
//!
//! Every ranking sorts by score descending and breaks ties by
//! `(query_id, ref_id)` ascending, so results are reproducible bit for bit.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::matrix::{cosine, dot, Matrix, TokenMatrix};
use crate::tokens::read_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub query_id: String,
    pub ref_id: String,
    pub score: f64,
    pub relevant: bool,
}

impl ScoredPair {
    pub fn new(query_id: impl Into<String>, ref_id: impl Into<String>, score: f64, relevant: bool) -> Self {
        ScoredPair {
            query_id: query_id.into(),
            ref_id: ref_id.into(),
            score,
            relevant,
        }
    }
}

/// Total order used for every ranking.
pub fn rank_order(a: &ScoredPair, b: &ScoredPair) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.query_id.cmp(&b.query_id))
        .then_with(|| a.ref_id.cmp(&b.ref_id))
}

/// Set of relevant (query, reference) pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pairs: BTreeSet<(String, String)>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<Q: Into<String>, R: Into<String>>(pairs: impl IntoIterator<Item = (Q, R)>) -> Self {
        GroundTruth {
            pairs: pairs.into_iter().map(|(q, r)| (q.into(), r.into())).collect(),
        }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, ref_id: impl Into<String>) -> bool {
        self.pairs.insert((query_id.into(), ref_id.into()))
    }

    pub fn contains(&self, query_id: &str, ref_id: &str) -> bool {
        self.pairs.contains(&(query_id.to_owned(), ref_id.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(q, r)| (q.as_str(), r.as_str()))
    }

    pub fn positives_per_query(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for (q, _) in &self.pairs {
            *out.entry(q.as_str()).or_insert(0) += 1;
        }
        out
    }

    /// Attach relevance labels to raw `(query, ref, score)` triples.
    pub fn label(&self, scores: impl IntoIterator<Item = (String, String, f64)>) -> Vec<ScoredPair> {
        scores
            .into_iter()
            .map(|(q, r, s)| {
                let relevant = self.contains(&q, &r);
                ScoredPair::new(q, r, s, relevant)
            })
            .collect()
    }
}

fn check_pairs(pairs: &[ScoredPair]) -> Result<()> {
    let mut seen = HashSet::with_capacity(pairs.len());
    for p in pairs {
        if !p.score.is_finite() {
            return Err(Error::numeric(format!(
                "score for ({}, {}) is not finite",
                p.query_id, p.ref_id
            )));
        }
        if !seen.insert((p.query_id.as_str(), p.ref_id.as_str())) {
            return Err(Error::format(format!("duplicate pair ({}, {})", p.query_id, p.ref_id)));
        }
    }
    Ok(())
}

fn ranked(pairs: &[ScoredPair]) -> Vec<&ScoredPair> {
    let mut v: Vec<&ScoredPair> = pairs.iter().collect();
    v.sort_by(|a, b| rank_order(a, b));
    v
}

/// Step-integrated AP: `Σ_k P(k) rel(k) / total_positives`. Positives that
/// were never scored still count in the denominator.
pub fn average_precision(pairs: &[ScoredPair], total_positives: usize) -> Result<f64> {
    if total_positives == 0 {
        return Err(Error::parameter("average precision needs at least one positive"));
    }
    check_pairs(pairs)?;
    let hits = pairs.iter().filter(|p| p.relevant).count();
    if hits > total_positives {
        return Err(Error::mismatch(format!(
            "{hits} relevant pairs scored but only {total_positives} positives declared"
        )));
    }
    let mut sum = 0.0;
    let mut found = 0usize;
    for (k, p) in ranked(pairs).into_iter().enumerate() {
        if p.relevant {
            found += 1;
            sum += found as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / total_positives as f64)
}

fn require_gt(gt: &GroundTruth) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::parameter("ground truth is empty"));
    }
    Ok(())
}

/// AP over the pooled pair list of all queries.
pub fn micro_ap(pairs: &[ScoredPair], gt: &GroundTruth) -> Result<f64> {
    require_gt(gt)?;
    average_precision(pairs, gt.len())
}

/// Mean of per-query AP over the queries with at least one positive.
/// A query with positives but no scored pairs contributes 0.
pub fn mean_ap(pairs: &[ScoredPair], gt: &GroundTruth) -> Result<f64> {
    require_gt(gt)?;
    check_pairs(pairs)?;
    let mut by_query: BTreeMap<&str, Vec<ScoredPair>> = BTreeMap::new();
    for p in pairs {
        by_query.entry(p.query_id.as_str()).or_default().push(p.clone());
    }
    let positives = gt.positives_per_query();
    let aps: Vec<f64> = positives
        .par_iter()
        .map(|(q, &n)| match by_query.get(q) {
            Some(list) => average_precision(list, n),
            None => Ok(0.0),
        })
        .collect::<Result<_>>()?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Largest recall over operating points whose precision is at least
/// `min_precision`. Operating points sit at the end of each group of tied
/// scores. Returns 0 when no point qualifies.
pub fn recall_at_precision(pairs: &[ScoredPair], gt: &GroundTruth, min_precision: f64) -> Result<f64> {
    require_gt(gt)?;
    check_pairs(pairs)?;
    let order = ranked(pairs);
    let total = gt.len() as f64;
    let mut best = 0.0f64;
    let mut hits = 0usize;
    for (k, p) in order.iter().enumerate() {
        if p.relevant {
            hits += 1;
        }
        let group_end = order.get(k + 1).is_none_or(|next| next.score != p.score);
        if group_end {
            let precision = hits as f64 / (k + 1) as f64;
            if precision >= min_precision {
                best = best.max(hits as f64 / total);
            }
        }
    }
    Ok(best)
}

pub fn rp90(pairs: &[ScoredPair], gt: &GroundTruth) -> Result<f64> {
    recall_at_precision(pairs, gt, 0.90)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map: f64,
    pub uap: f64,
    pub rp90: f64,
    pub n_queries: usize,
    pub n_positives: usize,
}

pub fn evaluate(pairs: &[ScoredPair], gt: &GroundTruth) -> Result<Metrics> {
    Ok(Metrics {
        map: mean_ap(pairs, gt)?,
        uap: micro_ap(pairs, gt)?,
        rp90: rp90(pairs, gt)?,
        n_queries: gt.positives_per_query().len(),
        n_positives: gt.len(),
    })
}

/// Identified vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub vectors: TokenMatrix,
}

impl Embeddings {
    pub fn new(ids: Vec<String>, vectors: TokenMatrix) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::mismatch(format!("{} ids for {} vectors", ids.len(), vectors.rows())));
        }
        if !vectors.is_finite() {
            return Err(Error::numeric("embeddings contain non-finite values"));
        }
        Ok(Embeddings { ids, vectors })
    }

    /// Load a `.tok` file; ids come from the sidecar or default to row numbers.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (vectors, ids) = read_tokens(path)?;
        let ids = ids.unwrap_or_else(|| (0..vectors.rows()).map(|i| i.to_string()).collect());
        Embeddings::new(ids, vectors)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Exact top-`k` references by cosine for every query.
pub fn knn_search(queries: &Embeddings, refs: &Embeddings, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if queries.dim() != refs.dim() {
        return Err(Error::mismatch(format!(
            "query dim {} differs from reference dim {}",
            queries.dim(),
            refs.dim()
        )));
    }
    if k > refs.len() {
        return Err(Error::parameter(format!("k = {k} exceeds {} references", refs.len())));
    }
    Ok((0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.vector(qi);
            let mut all: Vec<Neighbor> = (0..refs.len())
                .map(|ri| Neighbor {
                    id: refs.ids[ri].clone(),
                    score: cosine(q, refs.vector(ri)),
                })
                .collect();
            if k < all.len() && k > 0 {
                all.select_nth_unstable_by(k - 1, neighbor_order);
            }
            all.truncate(k);
            all.sort_by(neighbor_order);
            all
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreNormConfig {
    pub alpha: f64,
    pub k_start: usize,
    pub k_end: usize,
}

impl Default for ScoreNormConfig {
    fn default() -> Self {
        ScoreNormConfig {
            alpha: 1.0,
            k_start: 0,
            k_end: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StretchConfig {
    pub beta: f64,
    pub k: usize,
}

impl Default for StretchConfig {
    fn default() -> Self {
        StretchConfig { beta: 2.5, k: 5 }
    }
}

/// Post-processing settings; absent fields take the defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostProcessConfig {
    pub score_norm: ScoreNormConfig,
    pub stretch: StretchConfig,
}

impl PostProcessConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::from_json(&text).map_err(|e| e.at_path(path))
    }
}

/// Per-query bias: `alpha` times the mean of `background[k_start..=k_end]`,
/// where `background` holds the query's auxiliary cosines sorted descending.
pub fn score_bias(background: &[f64], cfg: &ScoreNormConfig) -> Result<f64> {
    if cfg.k_start > cfg.k_end {
        return Err(Error::parameter(format!(
            "k_start {} > k_end {}",
            cfg.k_start, cfg.k_end
        )));
    }
    if background.len() <= cfg.k_end {
        return Err(Error::parameter(format!(
            "{} background neighbours, need {}",
            background.len(),
            cfg.k_end + 1
        )));
    }
    let window = &background[cfg.k_start..=cfg.k_end];
    Ok(cfg.alpha * window.iter().sum::<f64>() / window.len() as f64)
}

/// Subtract the query's background bias from each of its raw scores.
pub fn score_normalize(raw: &[f64], background: &[f64], cfg: &ScoreNormConfig) -> Result<Vec<f64>> {
    let bias = score_bias(background, cfg)?;
    Ok(raw.iter().map(|s| s - bias).collect())
}

/// Normalize a pooled pair list; `backgrounds` maps query id to its sorted
/// auxiliary cosines.
pub fn normalize_pairs(
    pairs: &[ScoredPair],
    backgrounds: &BTreeMap<String, Vec<f64>>,
    cfg: &ScoreNormConfig,
) -> Result<Vec<ScoredPair>> {
    let mut bias = BTreeMap::new();
    for p in pairs {
        if !bias.contains_key(&p.query_id) {
            let bg = backgrounds
                .get(&p.query_id)
                .ok_or_else(|| Error::parameter(format!("no background for query {}", p.query_id)))?;
            bias.insert(p.query_id.clone(), score_bias(bg, cfg)?);
        }
    }
    Ok(pairs
        .iter()
        .map(|p| ScoredPair {
            score: p.score - bias[&p.query_id],
            ..p.clone()
        })
        .collect())
}

/// Sorted auxiliary cosines for every query, keyed by query id.
pub fn background_scores(queries: &Embeddings, aux: &Embeddings, k: usize) -> Result<BTreeMap<String, Vec<f64>>> {
    let nn = knn_search(queries, aux, k)?;
    Ok(queries
        .ids
        .iter()
        .cloned()
        .zip(nn.into_iter().map(|l| l.into_iter().map(|n| n.score).collect()))
        .collect())
}

/// Scale a query vector by `beta` times the mean of its top-k auxiliary
/// inner products.
pub fn feature_stretch(query: &[f64], background_scores: &[f64], cfg: &StretchConfig) -> Result<Vec<f64>> {
    if cfg.k == 0 {
        return Err(Error::parameter("stretch k must be >= 1"));
    }
    if background_scores.len() < cfg.k {
        return Err(Error::parameter(format!(
            "{} background scores, need {}",
            background_scores.len(),
            cfg.k
        )));
    }
    if cfg.beta == 0.0 {
        warn!("feature stretch with beta = 0 collapses the query to the zero vector");
    }
    let mean = background_scores[..cfg.k].iter().sum::<f64>() / cfg.k as f64;
    let factor = cfg.beta * mean;
    Ok(query.iter().map(|v| v * factor).collect())
}

/// Ranking score for a stretched query: negative Euclidean distance.
pub fn euclidean_score(query: &[f64], reference: &[f64]) -> f64 {
    -query
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Top-k auxiliary inner products for one query, descending.
pub fn top_inner_products(query: &[f64], aux: &TokenMatrix, k: usize) -> Vec<f64> {
    let mut s: Vec<f64> = aux.iter_rows().map(|r| dot(query, r)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(k);
    s
}

/// Ensemble score: the maximum over all crop pairs.
pub fn lce_score(crop_scores: &Matrix<f64>) -> Result<f64> {
    if crop_scores.as_slice().is_empty() {
        return Err(Error::parameter("crop score matrix is empty"));
    }
    Ok(crop_scores.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Crop window in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// `n x n` overlapping local windows (each spanning `2/(n+1)` of a side,
/// stride `1/(n+1)`) followed by the whole image.
pub fn crop_grid(height: usize, width: usize, n: usize) -> Result<Vec<CropBox>> {
    if n == 0 || height < n + 1 || width < n + 1 {
        return Err(Error::parameter(format!("cannot cut a {n}x{n} grid from {height}x{width}")));
    }
    let (sh, sw) = (height / (n + 1), width / (n + 1));
    let mut out = Vec::with_capacity(n * n + 1);
    for i in 0..n {
        for j in 0..n {
            out.push(CropBox {
                top: i * sh,
                left: j * sw,
                height: 2 * sh,
                width: 2 * sw,
            });
        }
    }
    out.push(CropBox {
        top: 0,
        left: 0,
        height,
        width,
    });
    Ok(out)
}

pub const QUERY_CROP_GRID: usize = 5;
pub const REFERENCE_CROP_GRID: usize = 3;

/// Score every query crop against every reference crop.
pub fn lce_crop_scores<F>(query: &Image, reference: &Image, score: F) -> Result<Matrix<f64>>
where
    F: Fn(&Image, &Image) -> Result<f64> + Sync,
{
    let cut = |img: &Image, n: usize| -> Result<Vec<Image>> {
        crop_grid(img.height(), img.width(), n)?
            .into_iter()
            .map(|b| img.crop(b.top, b.left, b.height, b.width))
            .collect()
    };
    let qs = cut(query, QUERY_CROP_GRID)?;
    let rs = cut(reference, REFERENCE_CROP_GRID)?;
    let values: Vec<f64> = (0..qs.len() * rs.len())
        .into_par_iter()
        .map(|i| score(&qs[i / rs.len()], &rs[i % rs.len()]))
        .collect::<Result<_>>()?;
    Matrix::from_vec(qs.len(), rs.len(), values)
}

/// Per-query scored candidate references.
pub type CandidateLists = BTreeMap<String, Vec<Neighbor>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoStageResult {
    pub stage1: CandidateLists,
    pub stage2: CandidateLists,
    /// Fraction of ground-truth pairs present after each stage.
    pub recall_stage1: Option<f64>,
    pub recall_stage2: Option<f64>,
}

fn recall_of(lists: &CandidateLists, gt: &GroundTruth) -> f64 {
    let found = gt
        .iter()
        .filter(|(q, r)| lists.get(*q).is_some_and(|l| l.iter().any(|n| n.id == *r)))
        .count();
    found as f64 / gt.len() as f64
}

/// Flatten candidate lists into scored pairs.
pub fn candidates_to_pairs(lists: &CandidateLists, gt: &GroundTruth) -> Vec<ScoredPair> {
    lists
        .iter()
        .flat_map(|(q, l)| l.iter().map(move |n| ScoredPair::new(q.clone(), n.id.clone(), n.score, gt.contains(q, &n.id))))
        .collect()
}

/// Recall-then-rerank candidate generation.
///
/// Stage 1 merges the descriptor score lists of every source (one score per
/// reference, the maximum across sources) and keeps the top `k1`. Stage 2
/// scores the survivors with `reranker(query_id, ref_id)` and keeps the top `k2`.
pub fn two_stage_candidates<F>(
    sources: &[CandidateLists],
    reranker: F,
    k1: usize,
    k2: usize,
    gt: Option<&GroundTruth>,
) -> Result<TwoStageResult>
where
    F: Fn(&str, &str) -> f64 + Sync,
{
    if k2 == 0 || k2 > k1 {
        return Err(Error::parameter(format!("need 1 <= k2 <= k1, got k1 = {k1}, k2 = {k2}")));
    }
    let mut merged: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for src in sources {
        for (q, list) in src {
            let slot = merged.entry(q.clone()).or_default();
            for n in list {
                if !n.score.is_finite() {
                    return Err(Error::numeric(format!("score for ({q}, {}) is not finite", n.id)));
                }
                slot.entry(n.id.clone()).and_modify(|s| *s = s.max(n.score)).or_insert(n.score);
            }
        }
    }
    let refs: BTreeSet<&String> = merged.values().flat_map(|m| m.keys()).collect();
    if k1 > refs.len() {
        return Err(Error::parameter(format!("k1 = {k1} exceeds {} references", refs.len())));
    }
    let keep = |mut l: Vec<Neighbor>, k: usize| {
        l.sort_by(neighbor_order);
        l.truncate(k);
        l
    };
    let stage1: CandidateLists = merged
        .into_iter()
        .map(|(q, m)| {
            let l = m.into_iter().map(|(id, score)| Neighbor { id, score }).collect();
            (q, keep(l, k1))
        })
        .collect();
    let stage2: CandidateLists = stage1
        .par_iter()
        .map(|(q, l)| {
            let rescored = l
                .iter()
                .map(|n| Neighbor {
                    id: n.id.clone(),
                    score: reranker(q, &n.id),
                })
                .collect();
            (q.clone(), keep(rescored, k2))
        })
        .collect();
    let (recall_stage1, recall_stage2) = match gt {
        Some(gt) if !gt.is_empty() => (Some(recall_of(&stage1, gt)), Some(recall_of(&stage2, gt))),
        _ => (None, None),
    };
    Ok(TwoStageResult {
        stage1,
        stage2,
        recall_stage1,
        recall_stage2,
    })
}

fn csv_line(pos: Option<&csv::Position>) -> u64 {
    pos.map_or(0, |p| p.line())
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::format(format!(
            "line 1: expected header {}, found {}",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Parse ground truth CSV with header `query_id,ref_id`.
pub fn parse_ground_truth(reader: impl Read) -> Result<GroundTruth> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &["query_id", "ref_id"])?;
    let mut gt = GroundTruth::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(format!("line {}: {e}", csv_line(e.position()))))?;
        let line = csv_line(rec.position());
        if rec.len() != 2 || rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::format(format!("line {line}: expected query_id,ref_id")));
        }
        if !gt.insert(&rec[0], &rec[1]) {
            return Err(Error::format(format!("line {line}: duplicate pair ({}, {})", &rec[0], &rec[1])));
        }
    }
    Ok(gt)
}

/// Parse score CSV with header `query_id,ref_id,score`.
pub fn parse_scores(reader: impl Read) -> Result<Vec<(String, String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &["query_id", "ref_id", "score"])?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(format!("line {}: {e}", csv_line(e.position()))))?;
        let line = csv_line(rec.position());
        if rec.len() != 3 || rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::format(format!("line {line}: expected query_id,ref_id,score")));
        }
        let score: f64 = rec[2]
            .parse()
            .map_err(|_| Error::format(format!("line {line}: score {:?} is not a number", &rec[2])))?;
        if !score.is_finite() {
            return Err(Error::format(format!("line {line}: score is not finite")));
        }
        if !seen.insert((rec[0].to_owned(), rec[1].to_owned())) {
            return Err(Error::format(format!("line {line}: duplicate pair ({}, {})", &rec[0], &rec[1])));
        }
        out.push((rec[0].to_owned(), rec[1].to_owned(), score));
    }
    Ok(out)
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    parse_ground_truth(f).map_err(|e| e.at_path(path))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(String, String, f64)>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    parse_scores(f).map_err(|e| e.at_path(path))
}

pub fn write_scores(writer: impl Write, pairs: &[ScoredPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["query_id", "ref_id", "score"])?;
    for p in pairs {
        w.write_record([p.query_id.as_str(), p.ref_id.as_str(), &p.score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ground_truth(writer: impl Write, gt: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["query_id", "ref_id"])?;
    for (q, r) in gt.iter() {
        w.write_record([q, r])?;
    }
    w.flush()?;
    Ok(())
}

//! Contrastive losses with exact gradients.
//!
//! All kernels take raw (unnormalized) token rows, normalize them internally
//! and return gradients with respect to the raw entries, so the losses are
//! invariant to positive per-row rescaling. Everything is 64-bit.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix, TokenMatrix};
use crate::rng::stream_rng;
use crate::supervision::{entropy, TargetDistribution};

/// Default softmax temperature.
pub const DEFAULT_TAU: f64 = 1.0 / 16.0;
/// Default CopyNCE weight for the matcher objective.
pub const MATCHER_W_NCE: f64 = 3.0;
/// Default CopyNCE weight for the descriptor objective.
pub const DESCRIPTOR_W_NCE: f64 = 5.0;
/// KoLeo weight in the descriptor baseline.
pub const DESCRIPTOR_W_KOLEO: f64 = 5.0;
/// Lower clamp on nearest-neighbour distances in KoLeo.
pub const KOLEO_MIN_DISTANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossConfig {
    pub tau: f64,
    pub w_nce: f64,
}

impl LossConfig {
    pub fn matcher() -> Self {
        LossConfig {
            tau: DEFAULT_TAU,
            w_nce: MATCHER_W_NCE,
        }
    }

    pub fn descriptor() -> Self {
        LossConfig {
            tau: DEFAULT_TAU,
            w_nce: DESCRIPTOR_W_NCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::parameter(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.w_nce.is_finite() && self.w_nce >= 0.0) {
            return Err(Error::parameter(format!("w_nce must be >= 0, got {}", self.w_nce)));
        }
        Ok(())
    }
}

/// Loss value with gradients for the two token inputs. Losses with a single
/// input leave `grad_r` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_q: TokenMatrix,
    pub grad_r: TokenMatrix,
}

/// CopyNCE result. `value` is the cross-entropy; `kl = value - target_entropy`.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyNce {
    pub loss: LossResult,
    pub kl: f64,
    pub target_entropy: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::parameter(format!("tau must be > 0, got {tau}")));
    }
    Ok(())
}

/// Unit-normalized rows plus the original norms.
fn normalize(m: &TokenMatrix, what: &str) -> Result<(TokenMatrix, Vec<f64>)> {
    if !m.is_finite() {
        return Err(Error::numeric(format!("{what} contains non-finite values")));
    }
    let norms: Vec<f64> = m.iter_rows().map(|r| dot(r, r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::numeric(format!("{what} row {i} is zero and cannot be normalized")));
    }
    Ok((m.normalized_rows(), norms))
}

/// Chain a gradient w.r.t. normalized rows back to the raw rows.
fn backprop_normalize(g: &TokenMatrix, unit: &TokenMatrix, norms: &[f64]) -> TokenMatrix {
    let mut out = g.clone();
    for i in 0..g.rows() {
        let u = unit.row(i);
        let proj = dot(u, g.row(i));
        for (o, &ui) in out.row_mut(i).iter_mut().zip(u) {
            *o = (*o - ui * proj) / norms[i];
        }
    }
    out
}

fn check_pair(q: &TokenMatrix, r: &TokenMatrix) -> Result<()> {
    if q.cols() != r.cols() {
        return Err(Error::mismatch(format!("token dims differ: {} vs {}", q.cols(), r.cols())));
    }
    if q.rows() == 0 || r.rows() == 0 {
        return Err(Error::mismatch("token matrices must be non-empty"));
    }
    Ok(())
}

/// Row-wise log-softmax of `cos / tau` with max subtraction.
fn log_affinity(qn: &TokenMatrix, rn: &TokenMatrix, tau: f64) -> Matrix<f64> {
    let mut out = Matrix::zeros(qn.rows(), rn.rows());
    for i in 0..qn.rows() {
        let qi = qn.row(i);
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = dot(qi, rn.row(j)) / tau;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Softmax affinity `p(j|i)` of query tokens over reference tokens.
pub fn affinity(tokens_q: &TokenMatrix, tokens_r: &TokenMatrix, tau: f64) -> Result<Matrix<f64>> {
    check_tau(tau)?;
    check_pair(tokens_q, tokens_r)?;
    let (qn, _) = normalize(tokens_q, "query tokens")?;
    let (rn, _) = normalize(tokens_r, "reference tokens")?;
    let mut p = log_affinity(&qn, &rn, tau);
    p.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
    Ok(p)
}

/// Entropy (nats) of each query token's affinity row.
pub fn affinity_entropy(tokens_q: &TokenMatrix, tokens_r: &TokenMatrix, tau: f64) -> Result<Vec<f64>> {
    let p = affinity(tokens_q, tokens_r, tau)?;
    Ok(p.iter_rows().map(entropy).collect())
}

/// Shared soft-target cross-entropy: mean over active rows of
/// `-Σ_j t_ij log p_ij`, with gradients w.r.t. the raw tokens.
fn soft_cross_entropy(
    tokens_q: &TokenMatrix,
    tokens_r: &TokenMatrix,
    targets: &Matrix<f64>,
    mask: &[bool],
    tau: f64,
) -> Result<(f64, f64, TokenMatrix, TokenMatrix)> {
    check_tau(tau)?;
    check_pair(tokens_q, tokens_r)?;
    if targets.shape() != (tokens_q.rows(), tokens_r.rows()) || mask.len() != tokens_q.rows() {
        return Err(Error::mismatch(format!(
            "targets {:?} do not match {} query x {} reference tokens",
            targets.shape(),
            tokens_q.rows(),
            tokens_r.rows()
        )));
    }
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::numeric("loss undefined: every query row is masked"));
    }
    let (qn, q_norms) = normalize(tokens_q, "query tokens")?;
    let (rn, r_norms) = normalize(tokens_r, "reference tokens")?;
    let logp = log_affinity(&qn, &rn, tau);
    let scale = 1.0 / active as f64;

    let mut value = 0.0;
    let mut kl = 0.0;
    // dL/dcos
    let mut dcos = Matrix::zeros(qn.rows(), rn.rows());
    for i in (0..qn.rows()).filter(|&i| mask[i]) {
        let t = targets.row(i);
        let lp = logp.row(i);
        let mass: f64 = t.iter().sum();
        let mut row_ce = 0.0;
        let mut row_kl = 0.0;
        for j in 0..rn.rows() {
            if t[j] > 0.0 {
                row_ce -= t[j] * lp[j];
                row_kl += t[j] * (t[j].ln() - lp[j]);
            }
        }
        value += row_ce;
        kl += row_kl;
        let g = dcos.row_mut(i);
        for j in 0..rn.rows() {
            g[j] = scale * (lp[j].exp() * mass - t[j]) / tau;
        }
    }
    value *= scale;
    kl *= scale;

    let d = qn.cols();
    let mut g_qn = Matrix::zeros(qn.rows(), d);
    let mut g_rn = Matrix::zeros(rn.rows(), d);
    for i in 0..qn.rows() {
        for j in 0..rn.rows() {
            let w = dcos.get(i, j);
            if w == 0.0 {
                continue;
            }
            for k in 0..d {
                g_qn[(i, k)] += w * rn.get(j, k);
                g_rn[(j, k)] += w * qn.get(i, k);
            }
        }
    }
    Ok((
        value,
        kl,
        backprop_normalize(&g_qn, &qn, &q_norms),
        backprop_normalize(&g_rn, &rn, &r_norms),
    ))
}

/// One direction of CopyNCE: cross-entropy between the targets and the
/// query-over-reference affinity, averaged over unmasked query patches.
pub fn copynce_directional(
    tokens_q: &TokenMatrix,
    tokens_r: &TokenMatrix,
    targets: &TargetDistribution,
    tau: f64,
) -> Result<CopyNce> {
    let (value, kl, grad_q, grad_r) = soft_cross_entropy(tokens_q, tokens_r, &targets.matrix, &targets.row_mask, tau)?;
    Ok(CopyNce {
        loss: LossResult { value, grad_q, grad_r },
        kl,
        target_entropy: value - kl,
    })
}

/// Symmetric CopyNCE: the mean of both directions.
pub fn copynce_symmetric(
    tokens_q: &TokenMatrix,
    tokens_r: &TokenMatrix,
    targets_qr: &TargetDistribution,
    targets_rq: &TargetDistribution,
    tau: f64,
) -> Result<CopyNce> {
    let fwd = copynce_directional(tokens_q, tokens_r, targets_qr, tau)?;
    let bwd = copynce_directional(tokens_r, tokens_q, targets_rq, tau)?;
    let mut grad_q = fwd.loss.grad_q.scaled(0.5);
    grad_q.add_assign_scaled(&bwd.loss.grad_r, 0.5)?;
    let mut grad_r = fwd.loss.grad_r.scaled(0.5);
    grad_r.add_assign_scaled(&bwd.loss.grad_q, 0.5)?;
    Ok(CopyNce {
        loss: LossResult {
            value: 0.5 * (fwd.loss.value + bwd.loss.value),
            grad_q,
            grad_r,
        },
        kl: 0.5 * (fwd.kl + bwd.kl),
        target_entropy: 0.5 * (fwd.target_entropy + bwd.target_entropy),
    })
}

/// InfoNCE for one anchor against a candidate set that contains the positive
/// at index `positive`. `grad_q` is `1 x d` (anchor), `grad_r` covers the candidates.
pub fn infonce(anchor: &[f64], candidates: &TokenMatrix, positive: usize, tau: f64) -> Result<LossResult> {
    if candidates.rows() == 0 {
        return Err(Error::parameter("noise set is empty"));
    }
    if positive >= candidates.rows() {
        return Err(Error::parameter(format!(
            "positive index {positive} outside {} candidates",
            candidates.rows()
        )));
    }
    let q = Matrix::from_vec(1, anchor.len(), anchor.to_vec())?;
    let mut t = Matrix::zeros(1, candidates.rows());
    t[(0, positive)] = 1.0;
    let (value, _, grad_q, grad_r) = soft_cross_entropy(&q, candidates, &t, &[true], tau)?;
    Ok(LossResult { value, grad_q, grad_r })
}

/// Batched InfoNCE with in-batch negatives: row `i` of `anchors` is positive
/// with row `i` of `positives`; averaged over rows.
pub fn infonce_batch(anchors: &TokenMatrix, positives: &TokenMatrix, tau: f64) -> Result<LossResult> {
    if anchors.rows() != positives.rows() {
        return Err(Error::mismatch("anchor and positive batches differ in size"));
    }
    let n = anchors.rows();
    let t = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
    let (value, _, grad_q, grad_r) = soft_cross_entropy(anchors, positives, &t, &vec![true; n], tau)?;
    Ok(LossResult { value, grad_q, grad_r })
}

/// Binary cross-entropy on `sigmoid(logit)` in the stable form
/// `max(x, 0) - x y + ln(1 + e^{-|x|})`. The gradient is `1 x 1` in `grad_q`.
pub fn bce_matcher(logit: f64, label: bool) -> Result<LossResult> {
    if !logit.is_finite() {
        return Err(Error::numeric(format!("logit {logit} is not finite")));
    }
    let y = if label { 1.0 } else { 0.0 };
    let value = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    let sigmoid = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    Ok(LossResult {
        value,
        grad_q: Matrix::from_vec(1, 1, vec![sigmoid - y])?,
        grad_r: Matrix::zeros(0, 0),
    })
}

/// Index of each row's nearest other row and the (unclamped) distance.
fn nearest_neighbours(unit: &TokenMatrix) -> Vec<(usize, f64)> {
    let n = unit.rows();
    (0..n)
        .map(|i| {
            let mut best = (usize::MAX, f64::INFINITY);
            for j in (0..n).filter(|&j| j != i) {
                let d2: f64 = unit.row(i).iter().zip(unit.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.1 {
                    best = (j, d2);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect()
}

/// KoLeo spreading term `-(1/n) Σ log d_i`, with `d_i` the distance from
/// normalized row `i` to its nearest other row, clamped below at 1e-8.
/// The gradient is in `grad_q`; clamped distances contribute none.
pub fn koleo(tokens: &TokenMatrix) -> Result<LossResult> {
    let n = tokens.rows();
    if n < 2 {
        return Err(Error::parameter(format!("KoLeo needs at least 2 rows, got {n}")));
    }
    let (unit, norms) = normalize(tokens, "tokens")?;
    let nn = nearest_neighbours(&unit);
    let d = unit.cols();
    let mut value = 0.0;
    let mut g = Matrix::zeros(n, d);
    for (i, &(j, dist)) in nn.iter().enumerate() {
        let clamped = dist.max(KOLEO_MIN_DISTANCE);
        value -= clamped.ln();
        if dist <= KOLEO_MIN_DISTANCE {
            continue;
        }
        let coef = -1.0 / (n as f64 * dist * dist);
        for k in 0..d {
            let diff = unit.get(i, k) - unit.get(j, k);
            g[(i, k)] += coef * diff;
            g[(j, k)] -= coef * diff;
        }
    }
    value /= n as f64;
    Ok(LossResult {
        value,
        grad_q: backprop_normalize(&g, &unit, &norms),
        grad_r: Matrix::zeros(0, d),
    })
}

/// Rows whose KoLeo term sits at the distance clamp or whose nearest
/// neighbour is ambiguous within `margin`; gradients are undefined there.
pub fn koleo_nondifferentiable_rows(tokens: &TokenMatrix, margin: f64) -> Vec<usize> {
    let unit = tokens.normalized_rows();
    let n = unit.rows();
    let mut out = Vec::new();
    for i in 0..n {
        let mut ds: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| unit.row(i).iter().zip(unit.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        ds.sort_by(f64::total_cmp);
        let at_clamp = ds[0] <= KOLEO_MIN_DISTANCE + margin;
        let ambiguous = ds.len() > 1 && ds[1] - ds[0] <= margin;
        if at_clamp || ambiguous {
            out.push(i);
        }
    }
    out
}

/// One weighted component of a combined objective. Gradients are already
/// multiplied by `weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerm {
    pub name: &'static str,
    pub weight: f64,
    pub value: f64,
    pub grad_q: TokenMatrix,
    pub grad_r: TokenMatrix,
}

/// Weighted sum of loss components.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub terms: Vec<ObjectiveTerm>,
}

impl Objective {
    fn build(parts: &[(&'static str, f64, &LossResult)]) -> Result<Self> {
        let mut value = 0.0;
        let mut terms = Vec::with_capacity(parts.len());
        for &(name, weight, r) in parts {
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(Error::parameter(format!("weight for {name} must be >= 0, got {weight}")));
            }
            value += weight * r.value;
            terms.push(ObjectiveTerm {
                name,
                weight,
                value: r.value,
                grad_q: r.grad_q.scaled(weight),
                grad_r: r.grad_r.scaled(weight),
            });
        }
        Ok(Objective { value, terms })
    }

    pub fn term(&self, name: &str) -> Option<&ObjectiveTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Frobenius norms of each weighted gradient block, keyed `name.q` / `name.r`.
    pub fn grad_norms(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for t in &self.terms {
            out.insert(format!("{}.q", t.name), t.grad_q.norm());
            if t.grad_r.rows() > 0 {
                out.insert(format!("{}.r", t.name), t.grad_r.norm());
            }
        }
        out
    }
}

/// `L_bce + w_nce * L_copynce`.
pub fn objective_matcher(bce: &LossResult, copynce: &LossResult, w_nce: f64) -> Result<Objective> {
    Objective::build(&[("bce", 1.0, bce), ("copynce", w_nce, copynce)])
}

/// `L_infonce + w_koleo * L_koleo + w_nce * L_copynce`.
pub fn objective_descriptor(
    infonce: &LossResult,
    koleo: &LossResult,
    copynce: &LossResult,
    w_nce: f64,
    w_koleo: f64,
) -> Result<Objective> {
    Objective::build(&[("infonce", 1.0, infonce), ("koleo", w_koleo, koleo), ("copynce", w_nce, copynce)])
}

/// Position of one scalar among a list of matrix inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EntryIndex {
    pub input: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error.
    pub scale_floor: f64,
    /// Inputs with more scalars than this are checked on a random subsample.
    pub max_full_entries: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            tolerance: 1e-4,
            scale_floor: 1e-6,
            max_full_entries: 2000,
            subsample: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<EntryIndex>,
    pub checked: usize,
    pub excluded: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare analytic gradients against central finite differences.
///
/// `f` maps the inputs to `(value, gradients)`, one gradient per input. The
/// relative error of an entry is `|a - n| / max(|a|, |n|, scale_floor)`.
/// Entries for which `exclude(input, row, col)` holds are skipped.
pub fn grad_check<F>(
    f: F,
    inputs: &[TokenMatrix],
    opts: &GradCheckOptions,
    exclude: impl Fn(usize, usize, usize) -> bool,
) -> Result<GradCheckReport>
where
    F: Fn(&[TokenMatrix]) -> Result<(f64, Vec<TokenMatrix>)>,
{
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(Error::parameter(format!(
            "epsilon {} outside [1e-7, 1e-3]",
            opts.epsilon
        )));
    }
    if !(opts.tolerance.is_finite() && opts.tolerance > 0.0) {
        return Err(Error::parameter("tolerance must be positive"));
    }
    let (_, analytic) = f(inputs)?;
    if analytic.len() != inputs.len() || analytic.iter().zip(inputs).any(|(g, x)| g.shape() != x.shape()) {
        return Err(Error::mismatch("gradient shapes do not match the inputs"));
    }
    let total: usize = inputs.iter().map(|m| m.rows() * m.cols()).sum();
    let mut entries: Vec<EntryIndex> = inputs
        .iter()
        .enumerate()
        .flat_map(|(input, m)| {
            (0..m.rows()).flat_map(move |row| (0..m.cols()).map(move |col| EntryIndex { input, row, col }))
        })
        .collect();
    if total > opts.max_full_entries {
        let mut rng = stream_rng(opts.seed, 0x67_72_61_64);
        let mut picked: Vec<usize> = sample(&mut rng, total, opts.subsample.min(total)).into_vec();
        picked.sort_unstable();
        entries = picked.into_iter().map(|i| entries[i]).collect();
    }

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
        tolerance: opts.tolerance,
        passed: true,
    };
    for e in entries {
        if exclude(e.input, e.row, e.col) {
            report.excluded += 1;
            continue;
        }
        let orig = work[e.input][(e.row, e.col)];
        work[e.input][(e.row, e.col)] = orig + opts.epsilon;
        let plus = f(&work)?.0;
        work[e.input][(e.row, e.col)] = orig - opts.epsilon;
        let minus = f(&work)?.0;
        work[e.input][(e.row, e.col)] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::numeric(format!("non-finite loss when perturbing {e:?}")));
        }
        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let a = analytic[e.input][(e.row, e.col)];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.scale_floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some(e);
            }
        }
    }
    report.passed = report.max_rel_error <= opts.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::norm;

    fn m(rows: &[&[f64]]) -> TokenMatrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn one_hot_targets(n_q: usize, n_r: usize, picks: &[usize]) -> TargetDistribution {
        let mut mat = Matrix::zeros(n_q, n_r);
        for (i, &j) in picks.iter().enumerate() {
            mat[(i, j)] = 1.0;
        }
        TargetDistribution {
            matrix: mat,
            row_mask: vec![true; n_q],
            gamma: None,
        }
    }

    #[test]
    fn affinity_closed_form() {
        let p = affinity(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[-1.0, 0.0]]), 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.get(0, 0) - e / (e + 1.0 / e)).abs() < 1e-15);
        assert!((p.get(0, 0) - 0.8808).abs() < 1e-4);
        assert!((p.get(0, 1) - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn affinity_uniform_and_sharpening() {
        let r = m(&[&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let p = affinity(&m(&[&[1.0, 0.3]]), &r, DEFAULT_TAU).unwrap();
        for &v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let q = m(&[&[1.0, 0.2]]);
        let r = m(&[&[1.0, 0.0], &[0.5, 0.5], &[0.0, 1.0]]);
        let sharp = affinity(&q, &r, 1.0 / 16.0).unwrap();
        let soft = affinity(&q, &r, 1.0).unwrap();
        assert!(sharp.get(0, 0) > soft.get(0, 0));
        assert!(sharp.get(0, 0) > 0.5);
    }

    #[test]
    fn affinity_rejects_bad_input() {
        let ok = m(&[&[1.0, 0.0]]);
        assert!(matches!(affinity(&m(&[&[f64::NAN, 0.0]]), &ok, 1.0), Err(Error::Numeric(_))));
        assert!(matches!(affinity(&ok, &ok, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn copynce_closed_form() {
        let t = one_hot_targets(1, 2, &[0]);
        let r = copynce_directional(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[-1.0, 0.0]]), &t, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((r.loss.value - -(e / (e + 1.0 / e)).ln()).abs() < 1e-15);
        assert!((r.loss.value - 0.1269).abs() < 1e-4);
        assert_eq!(r.target_entropy, 0.0);
    }

    #[test]
    fn copynce_one_hot_on_argmax_is_best() {
        let q = m(&[&[0.3, 0.9, -0.2]]);
        let r = m(&[&[1.0, 0.0, 0.0], &[0.2, 1.0, 0.1], &[0.0, 0.0, 1.0], &[-1.0, 0.5, 0.0]]);
        let p = affinity(&q, &r, DEFAULT_TAU).unwrap();
        let argmax = (0..4).max_by(|&a, &b| p.get(0, a).total_cmp(&p.get(0, b))).unwrap();
        let ces: Vec<f64> = (0..4)
            .map(|j| copynce_directional(&q, &r, &one_hot_targets(1, 4, &[j]), DEFAULT_TAU).unwrap().loss.value)
            .collect();
        assert!(ces.iter().all(|&c| c >= ces[argmax]));
    }

    #[test]
    fn copynce_all_masked_errors() {
        let mut t = one_hot_targets(1, 2, &[0]);
        t.row_mask = vec![false];
        t.matrix = Matrix::zeros(1, 2);
        let res = copynce_directional(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0]]), &t, 1.0);
        assert!(matches!(res, Err(Error::Numeric(_))));
    }

    #[test]
    fn masked_rows_have_zero_gradient() {
        let q = m(&[&[1.0, 0.2], &[0.3, 0.7]]);
        let r = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut t = one_hot_targets(2, 2, &[0, 1]);
        t.row_mask[1] = false;
        t.matrix.row_mut(1).fill(0.0);
        let res = copynce_directional(&q, &r, &t, 0.5).unwrap();
        assert!(res.loss.grad_q.row(1).iter().all(|&v| v == 0.0));
        let only = copynce_directional(&m(&[&[1.0, 0.2]]), &r, &one_hot_targets(1, 2, &[0]), 0.5).unwrap();
        assert!((res.loss.value - only.loss.value).abs() < 1e-15);
    }

    #[test]
    fn infonce_cases() {
        let cands = m(&[&[1.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 0.0, 1.0]]);
        let r = infonce(&[1.0, 0.0, 0.0, 0.0, 0.0], &cands, 0, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((r.value - -(e / (e + 4.0)).ln()).abs() < 1e-14);
        assert!((r.value - 0.9048).abs() < 1e-4);

        let single = infonce(&[0.3, 0.4], &m(&[&[0.6, 0.8]]), 0, DEFAULT_TAU).unwrap();
        assert!(single.value.abs() < 1e-15);

        assert!(matches!(infonce(&[1.0], &Matrix::zeros(0, 1), 0, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn infonce_worst_positive() {
        let anchor = [1.0, 0.0];
        let cands = m(&[&[1.0, 0.1], &[0.5, 0.5], &[-1.0, 0.2], &[0.0, 1.0]]);
        let tau = 0.5;
        let cos: Vec<f64> = cands.iter_rows().map(|r| crate::matrix::cosine(&anchor, r)).collect();
        let worst = (0..4).min_by(|&a, &b| cos[a].total_cmp(&cos[b])).unwrap();
        let l = infonce(&anchor, &cands, worst, tau).unwrap().value;
        // brute force: -log softmax at the worst index
        let z: f64 = cos.iter().map(|c| (c / tau).exp()).sum();
        let expect = -((cos[worst] / tau).exp() / z).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!(l > (4.0f64).ln());
    }

    #[test]
    fn bce_cases() {
        let r = bce_matcher(0.0, true).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(r.grad_q.get(0, 0), -0.5);
        let far = bce_matcher(20.0, true).unwrap();
        assert!((far.value - 2.0611536e-9).abs() < 1e-15);
        assert!(bce_matcher(-800.0, true).unwrap().value.is_finite());
        assert!((bce_matcher(-800.0, false).unwrap().value).abs() < 1e-300);
    }

    #[test]
    fn koleo_cases() {
        let r = koleo(&m(&[&[1.0, 0.0], &[-1.0, 0.0]])).unwrap();
        assert!((r.value - -(2.0f64).ln()).abs() < 1e-15);
        let dup = koleo(&m(&[&[0.6, 0.8], &[0.6, 0.8]])).unwrap();
        assert!((dup.value - -(1e-8f64).ln()).abs() < 1e-9);
        assert!(dup.grad_q.as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(koleo(&m(&[&[1.0, 0.0]])), Err(Error::Parameter(_))));
        assert_eq!(koleo_nondifferentiable_rows(&m(&[&[0.6, 0.8], &[0.6, 0.8], &[1.0, 0.0]]), 0.0), vec![0, 1, 2]);
    }

    #[test]
    fn objectives() {
        let bce = bce_matcher(0.7, true).unwrap();
        let q = m(&[&[1.0, 0.2]]);
        let r = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = copynce_directional(&q, &r, &one_hot_targets(1, 2, &[0]), DEFAULT_TAU).unwrap();
        let base = objective_matcher(&bce, &c.loss, 0.0).unwrap();
        assert_eq!(base.value, bce.value);
        let full = objective_matcher(&bce, &c.loss, MATCHER_W_NCE).unwrap();
        assert!((full.value - (bce.value + 3.0 * c.loss.value)).abs() < 1e-15);
        assert_eq!(full.term("copynce").unwrap().grad_q, c.loss.grad_q.scaled(3.0));
        assert!(matches!(objective_matcher(&bce, &c.loss, -1.0), Err(Error::Parameter(_))));
        assert_eq!(LossConfig::matcher().w_nce, 3.0);
        assert_eq!(LossConfig::descriptor().w_nce, 5.0);
        assert_eq!(DESCRIPTOR_W_KOLEO, 5.0);
        assert_eq!(DEFAULT_TAU, 0.0625);
    }

    #[test]
    fn entropy_bounds() {
        let q = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = Matrix::from_fn(196, 2, |_, _| 1.0);
        let h = affinity_entropy(&q, &r, DEFAULT_TAU).unwrap();
        for v in h {
            assert!((v - 196f64.ln()).abs() < 1e-12);
        }
        let peaked = affinity_entropy(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[-1.0, 0.0]]), 0.01).unwrap();
        assert!(peaked[0] < 1e-50);
    }

    #[test]
    fn grad_check_flags_injected_bug() {
        let q = m(&[&[0.3, 0.9, -0.2], &[0.5, -0.1, 0.4]]);
        let r = m(&[&[1.0, 0.0, 0.2], &[0.2, 1.0, 0.1], &[0.0, -0.3, 1.0]]);
        let t = one_hot_targets(2, 3, &[1, 2]);
        let good = |x: &[TokenMatrix]| {
            let c = copynce_directional(&x[0], &x[1], &t, 0.5)?;
            Ok((c.loss.value, vec![c.loss.grad_q, c.loss.grad_r]))
        };
        let opts = GradCheckOptions::default();
        let rep = grad_check(good, &[q.clone(), r.clone()], &opts, |_, _, _| false).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.checked, 15);

        let bad = |x: &[TokenMatrix]| {
            let (v, mut g) = good(x)?;
            g[1][(2, 1)] += 0.05;
            Ok((v, g))
        };
        let rep = grad_check(bad, &[q.clone(), r.clone()], &opts, |_, _, _| false).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.worst, Some(EntryIndex { input: 1, row: 2, col: 1 }));

        let eps = GradCheckOptions { epsilon: 1e-2, ..opts };
        assert!(matches!(grad_check(good, &[q, r], &eps, |_, _, _| false), Err(Error::Parameter(_))));
    }

    #[test]
    fn scale_invariance() {
        let q = m(&[&[0.3, 0.9, -0.2], &[0.5, -0.1, 0.4]]);
        let r = m(&[&[1.0, 0.0, 0.2], &[0.2, 1.0, 0.1]]);
        let t = one_hot_targets(2, 2, &[1, 0]);
        let a = copynce_directional(&q, &r, &t, DEFAULT_TAU).unwrap().loss.value;
        let mut q2 = q.clone();
        q2.row_mut(0).iter_mut().for_each(|v| *v *= 7.5);
        let b = copynce_directional(&q2, &r, &t, DEFAULT_TAU).unwrap().loss.value;
        assert!((a - b).abs() < 1e-12);
        assert!(norm(q2.row(0)) > 1.0);
    }
}

//! Randomized finite-difference checks for every loss kernel.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss_kernel::{
    bce_matcher, copynce_directional, copynce_symmetric, grad_check, infonce, koleo, GradCheckOptions,
    GradCheckReport, KOLEO_MIN_DISTANCE,
};
use crate::matrix::{Matrix, TokenMatrix};
use crate::rng::stream_rng;
use crate::supervision::TargetDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Infonce,
    Copynce,
    CopynceSymmetric,
    Bce,
    Koleo,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Infonce,
        LossKind::Copynce,
        LossKind::CopynceSymmetric,
        LossKind::Bce,
        LossKind::Koleo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Infonce => "infonce",
            LossKind::Copynce => "copynce",
            LossKind::CopynceSymmetric => "copynce_symmetric",
            LossKind::Bce => "bce",
            LossKind::Koleo => "koleo",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::parameter(format!("unknown loss {s:?}")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub fixtures: usize,
    pub seed: u64,
    pub check: GradCheckOptions,
    /// Corrupt one analytic gradient entry (negative control).
    pub inject_bug: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            fixtures: 20,
            seed: 0,
            check: GradCheckOptions::default(),
            inject_bug: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureReport {
    pub loss: LossKind,
    pub fixture: usize,
    pub report: GradCheckReport,
}

pub fn random_tokens(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TokenMatrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random soft targets: each row spreads mass over 1 to 4 columns; about a
/// fifth of the rows are masked, never all of them.
pub fn random_targets(rng: &mut ChaCha8Rng, n_q: usize, n_r: usize) -> TargetDistribution {
    let mut matrix = Matrix::zeros(n_q, n_r);
    let mut row_mask: Vec<bool> = (0..n_q).map(|_| !rng.random_bool(0.2)).collect();
    if !row_mask.iter().any(|&m| m) {
        row_mask[0] = true;
    }
    for i in (0..n_q).filter(|&i| row_mask[i]) {
        let support = rng.random_range(1..=4.min(n_r));
        let cols = rand::seq::index::sample(rng, n_r, support);
        let weights: Vec<f64> = (0..support).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for (j, w) in cols.into_iter().zip(weights) {
            matrix[(i, j)] = w / total;
        }
    }
    TargetDistribution {
        matrix,
        row_mask,
        gamma: None,
    }
}

type Objective = Box<dyn Fn(&[TokenMatrix]) -> Result<(f64, Vec<TokenMatrix>)>>;

/// KoLeo rows whose nearest neighbour could switch under a small
/// perturbation, plus the candidates involved.
fn koleo_unstable_rows(tokens: &TokenMatrix, margin: f64) -> Vec<bool> {
    let unit = tokens.normalized_rows();
    let n = unit.rows();
    let mut out = vec![false; n];
    for i in 0..n {
        let mut ds: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = unit.row(i).iter().zip(unit.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                (d, j)
            })
            .collect();
        ds.sort_by(|a, b| a.0.total_cmp(&b.0));
        let clamped = ds[0].0 <= KOLEO_MIN_DISTANCE + margin;
        let ambiguous = ds.len() > 1 && ds[1].0 - ds[0].0 <= margin;
        if clamped || ambiguous {
            out[i] = true;
            out[ds[0].1] = true;
            if ds.len() > 1 {
                out[ds[1].1] = true;
            }
        }
    }
    out
}

fn fixture(kind: LossKind, rng: &mut ChaCha8Rng) -> (Objective, Vec<TokenMatrix>, Vec<bool>) {
    let d = rng.random_range(3..9);
    let tau = rng.random_range(0.05..1.0);
    match kind {
        LossKind::Infonce => {
            let n = rng.random_range(2..10);
            let pos = rng.random_range(0..n);
            let inputs = vec![random_tokens(rng, 1, d), random_tokens(rng, n, d)];
            let f: Objective = Box::new(move |x: &[TokenMatrix]| {
                let r = infonce(x[0].row(0), &x[1], pos, tau)?;
                Ok((r.value, vec![r.grad_q, r.grad_r]))
            });
            (f, inputs, Vec::new())
        }
        LossKind::Copynce => {
            let (n_q, n_r) = (rng.random_range(1..8), rng.random_range(2..9));
            let t = random_targets(rng, n_q, n_r);
            let inputs = vec![random_tokens(rng, n_q, d), random_tokens(rng, n_r, d)];
            let f: Objective = Box::new(move |x: &[TokenMatrix]| {
                let r = copynce_directional(&x[0], &x[1], &t, tau)?;
                Ok((r.loss.value, vec![r.loss.grad_q, r.loss.grad_r]))
            });
            (f, inputs, Vec::new())
        }
        LossKind::CopynceSymmetric => {
            let (n_q, n_r) = (rng.random_range(1..8), rng.random_range(1..8));
            let t_qr = random_targets(rng, n_q, n_r);
            let t_rq = random_targets(rng, n_r, n_q);
            let inputs = vec![random_tokens(rng, n_q, d), random_tokens(rng, n_r, d)];
            let f: Objective = Box::new(move |x: &[TokenMatrix]| {
                let r = copynce_symmetric(&x[0], &x[1], &t_qr, &t_rq, tau)?;
                Ok((r.loss.value, vec![r.loss.grad_q, r.loss.grad_r]))
            });
            (f, inputs, Vec::new())
        }
        LossKind::Bce => {
            let label = rng.random_bool(0.5);
            let inputs = vec![Matrix::from_fn(1, 1, |_, _| rng.random_range(-8.0..8.0))];
            let f: Objective = Box::new(move |x: &[TokenMatrix]| {
                let r = bce_matcher(x[0][(0, 0)], label)?;
                Ok((r.value, vec![r.grad_q]))
            });
            (f, inputs, Vec::new())
        }
        LossKind::Koleo => {
            let n = rng.random_range(3..10);
            let tokens = random_tokens(rng, n, d);
            let unstable = koleo_unstable_rows(&tokens, 1e-3);
            let f: Objective = Box::new(|x: &[TokenMatrix]| {
                let r = koleo(&x[0])?;
                Ok((r.value, vec![r.grad_q]))
            });
            (f, vec![tokens], unstable)
        }
    }
}

/// Run `opts.fixtures` random fixtures of one loss through [`grad_check`].
pub fn run_suite(kind: LossKind, opts: &SuiteOptions) -> Result<Vec<FixtureReport>> {
    let mut rng = stream_rng(opts.seed, kind as u64 + 100);
    let mut out = Vec::with_capacity(opts.fixtures);
    for i in 0..opts.fixtures {
        let (f, inputs, skip_rows) = fixture(kind, &mut rng);
        let f: Objective = if opts.inject_bug {
            Box::new(move |x: &[TokenMatrix]| {
                let (v, mut g) = f(x)?;
                let last = g.len() - 1;
                let bump = 0.05 * g[last][(0, 0)].abs().max(1.0);
                g[last][(0, 0)] += bump;
                Ok((v, g))
            })
        } else {
            f
        };
        let report = grad_check(&f, &inputs, &opts.check, |input, row, _| {
            input == 0 && skip_rows.get(row).copied().unwrap_or(false)
        })?;
        out.push(FixtureReport {
            loss: kind,
            fixture: i,
            report,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_names() {
        assert_eq!("copynce-symmetric".parse::<LossKind>().unwrap(), LossKind::CopynceSymmetric);
        assert!("nce".parse::<LossKind>().is_err());
    }

    #[test]
    fn suite_passes_and_bug_is_caught() {
        for kind in LossKind::ALL {
            let opts = SuiteOptions { fixtures: 5, ..Default::default() };
            for r in run_suite(kind, &opts).unwrap() {
                assert!(r.report.passed, "{kind} fixture {}: {:?}", r.fixture, r.report);
            }
            let bad = SuiteOptions { inject_bug: true, ..opts };
            let reps = run_suite(kind, &bad).unwrap();
            assert!(reps.iter().all(|r| !r.report.passed), "{kind}");
        }
    }

    #[test]
    fn targets_are_distributions() {
        let mut rng = stream_rng(1, 1);
        for _ in 0..20 {
            random_targets(&mut rng, 5, 6).validate().unwrap();
        }
    }
}

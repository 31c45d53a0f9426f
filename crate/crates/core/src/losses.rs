//! Training losses with gradients with respect to the scores.

use crate::chart::Penalty;
use crate::cyk::cyk_grad_logz;
use crate::error::{Error, Result};
use crate::marginals::{kl_constrained, logz_marginals, Marginals};
use crate::mask::{MaskPlan, SpanMode};
use crate::semiring::{is_impossible, log_sum};
use crate::types::{ScoreGradients, ScoreSet};

/// Per-sentence loss values; `total` is the weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_tree: f64,
    pub l_label: f64,
    pub l_reg: f64,
    pub total: f64,
}

impl LossReport {
    pub fn add(&mut self, other: &LossReport) {
        self.l_tree += other.l_tree;
        self.l_label += other.l_label;
        self.l_reg += other.l_reg;
        self.total += other.total;
    }
}

/// Structural loss of the lexicalized TreeCRF with the masked marginals.
#[derive(Clone, Debug)]
pub struct TreeLoss {
    pub value: f64,
    pub grads: ScoreGradients,
    pub masked: Marginals,
}

/// `log Z - log Z(mask)` and its gradient, free minus masked marginals.
pub fn loss_tree(scores: &ScoreSet, mask: &MaskPlan) -> Result<(f64, ScoreGradients)> {
    let t = loss_tree_lexicalized(scores, mask)?;
    Ok((t.value, t.grads))
}

pub fn loss_tree_lexicalized(scores: &ScoreSet, mask: &MaskPlan) -> Result<TreeLoss> {
    let (log_z, _, free) = logz_marginals(scores, SpanMode::Free, None)?;
    let (num, masked, forced) = logz_marginals(scores, SpanMode::Forced(mask), None)?;
    if is_impossible(num) {
        return Err(Error::Annotation(
            "no lexicalized tree is compatible with the observed entities".into(),
        ));
    }
    let mut grads = free;
    grads.add_scaled(&forced, -1.0);
    Ok(TreeLoss {
        value: (log_z - num).max(0.0),
        grads,
        masked,
    })
}

/// Structural loss of the unlexicalized bracketing CRF.
pub fn loss_tree_cyk(scores: &ScoreSet, mask: &MaskPlan) -> Result<(f64, ScoreGradients)> {
    let (log_z, free) = cyk_grad_logz(scores, SpanMode::Free)?;
    let (num, forced) = cyk_grad_logz(scores, SpanMode::Forced(mask))?;
    if is_impossible(num) {
        return Err(Error::Annotation(
            "no bracketing is compatible with the observed entities".into(),
        ));
    }
    let mut grads = free;
    grads.add_scaled(&forced, -1.0);
    Ok(((log_z - num).max(0.0), grads))
}

/// KL head regularizer between the gold-conditioned TreeCRF and its copy
/// penalized by `c` whenever a gold entity's head also heads its parent.
pub fn loss_reg(scores: &ScoreSet, mask: &MaskPlan, c: f64) -> Result<(f64, ScoreGradients)> {
    if !c.is_finite() || c < 0.0 {
        return Err(Error::Parameter(format!(
            "penalty constant must be >= 0, got {c}"
        )));
    }
    if c == 0.0 || mask.gold_spans().is_empty() {
        return Ok((0.0, ScoreGradients::zeros_like(scores)));
    }
    let penalty = Penalty::on_spans(c, mask.n(), mask.gold_spans());
    let r = kl_constrained(scores, SpanMode::Forced(mask), &penalty)?;
    Ok((r.kl, r.grads))
}

/// `log(1 + sum_{l not in omega} e^{s_l}) + log(1 + sum_{l in omega} e^{-s_l})`
/// and its gradient.
pub fn multilabel_term(scores: &[f64], omega: &[usize]) -> Result<(f64, Vec<f64>)> {
    if omega.is_empty() {
        return Err(Error::Parameter("gold label set is empty".into()));
    }
    if let Some(l) = omega.iter().find(|&&l| l >= scores.len()) {
        return Err(Error::Parameter(format!(
            "label {l} outside {} classes",
            scores.len()
        )));
    }
    let mut pos = vec![0.0];
    let mut neg = vec![0.0];
    for (l, &s) in scores.iter().enumerate() {
        if omega.contains(&l) {
            pos.push(-s);
        } else {
            neg.push(s);
        }
    }
    let lp = log_sum(&pos);
    let ln = log_sum(&neg);
    let grad = scores
        .iter()
        .enumerate()
        .map(|(l, &s)| {
            if omega.contains(&l) {
                -(-s - lp).exp()
            } else {
                (s - ln).exp()
            }
        })
        .collect();
    Ok((lp + ln, grad))
}

/// One labeled span with its gold classes and head weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTarget {
    pub start: usize,
    pub end: usize,
    pub omega: Vec<usize>,
    /// `(head, weight)`; weights sum to 1.
    pub heads: Vec<(usize, f64)>,
}

impl LabelTarget {
    /// Head weights from a masked-chart head distribution, or uniform.
    pub fn from_alpha(
        start: usize,
        end: usize,
        omega: Vec<usize>,
        alpha: Option<&Marginals>,
    ) -> Result<Self> {
        let heads = match alpha {
            Some(m) => {
                let a = m.head_alpha(start, end).ok_or_else(|| {
                    Error::Internal(format!(
                        "gold span ({start}, {end}) has no probability under the masked chart"
                    ))
                })?;
                a.into_iter()
                    .enumerate()
                    .map(|(k, w)| (start + k, w))
                    .collect()
            }
            None => {
                let w = 1.0 / (end - start + 1) as f64;
                (start..=end).map(|h| (h, w)).collect()
            }
        };
        Ok(LabelTarget {
            start,
            end,
            omega,
            heads,
        })
    }
}

/// `sum_targets sum_heads alpha * multilabel_term`, with the gradient with
/// respect to each queried label-score vector. The head weights are constants.
pub fn loss_label<F>(
    targets: &[LabelTarget],
    mut label_scores: F,
) -> Result<(f64, Vec<crate::scorer::LabelGrad>)>
where
    F: FnMut(usize, usize, &[usize]) -> Result<Vec<Vec<f64>>>,
{
    let mut total = 0.0;
    let mut out = Vec::with_capacity(targets.len());
    for t in targets {
        let mass: f64 = t.heads.iter().map(|h| h.1).sum();
        if (mass - 1.0).abs() > 1e-9 || t.heads.iter().any(|h| h.1.is_nan() || h.1 < 0.0) {
            return Err(Error::Internal(format!(
                "head weights of span ({}, {}) sum to {mass}",
                t.start, t.end
            )));
        }
        let heads: Vec<usize> = t.heads.iter().filter(|h| h.1 > 0.0).map(|h| h.0).collect();
        let weights: Vec<f64> = t.heads.iter().filter(|h| h.1 > 0.0).map(|h| h.1).collect();
        let scores = label_scores(t.start, t.end, &heads)?;
        let mut grads = Vec::with_capacity(heads.len());
        for ((h, w), s) in heads.iter().zip(&weights).zip(&scores) {
            let (v, g) = multilabel_term(s, &t.omega)?;
            total += w * v;
            grads.push((*h, g.into_iter().map(|x| w * x).collect()));
        }
        out.push(crate::scorer::LabelGrad {
            start: t.start,
            end: t.end,
            heads: grads,
        });
    }
    Ok((total, out))
}

//! Reverse accumulation through the Eisner-Satta chart.
//!
//! Under the log semiring the adjoint of every item is its marginal
//! probability, which gives span, arc and head marginals in one backward
//! sweep. Under the KL expectation semiring the same sweep differentiates
//! `KL(q || p)` with respect to the scores.

use crate::chart::{idx, inside_eisner_satta, Chart, Penalty};
use crate::error::{Error, Result};
use crate::mask::{MaskPlan, SpanMode};
use crate::semiring::{Differentiable, KlAdj, KlSemiring, LogSemiring, Semiring};
use crate::types::{ScoreGradients, ScoreSet};

/// Adjoints of every chart item plus the derivatives with respect to the
/// span weights and arc scores.
#[derive(Clone, Debug)]
pub struct ChartAdjoints<S: Differentiable> {
    pub n: usize,
    pub span_weight: Vec<f64>,
    pub arc: Vec<f64>,
    pub h_pre: Vec<S::Adj>,
    pub h_post: Vec<S::Adj>,
}

/// Propagates `seed` (the adjoint of the root value) back through the chart.
pub fn reverse<S: Differentiable>(chart: &Chart<S>, seed: S::Adj) -> ChartAdjoints<S> {
    let n = chart.n;
    let size = n * n * n;
    let mut adj = ChartAdjoints::<S> {
        n,
        span_weight: vec![0.0; n * n],
        arc: vec![0.0; (n + 1) * n],
        h_pre: vec![S::Adj::default(); size],
        h_post: vec![S::Adj::default(); size],
    };
    let mut g_p = vec![S::Adj::default(); size];
    let mut terms: Vec<S::Elem> = Vec::with_capacity(2 * n);

    for h in 0..n {
        let term = chart.attach_term(0, n - 1, h, n);
        let g = S::term_adjoint(term, chart.root, seed);
        S::accumulate(&mut adj.h_pre[idx(n, 0, n - 1, h)], g);
        adj.arc[n * n + h] += S::weight_grad(g);
    }

    for width in (1..n).rev() {
        for i in 0..n - width {
            let k = i + width;
            if S::is_zero(&S::weight(chart.weights.get(i, k))) {
                continue;
            }
            for h in i..=k {
                let at = idx(n, i, k, h);
                let g = adj.h_post[at];
                S::accumulate(&mut adj.h_pre[at], g);
            }
            for parent in (0..i).chain(k + 1..n) {
                let gp = g_p[idx(n, i, k, parent)];
                if S::adj_is_zero(&gp) {
                    continue;
                }
                let total = chart.p[idx(n, i, k, parent)];
                for h in i..=k {
                    let g = S::term_adjoint(chart.attach_term(i, k, h, parent), total, gp);
                    S::accumulate(&mut adj.h_pre[idx(n, i, k, h)], g);
                    adj.arc[parent * n + h] += S::weight_grad(g);
                }
            }
            for h in i..=k {
                let g = adj.h_pre[idx(n, i, k, h)];
                if S::adj_is_zero(&g) {
                    continue;
                }
                adj.span_weight[i * n + k] += S::weight_grad(g);
                terms.clear();
                for r in i..k {
                    terms.push(chart.complete_term(i, k, h, r));
                }
                let inner = S::sum(&terms);
                for (off, &term) in terms.iter().enumerate() {
                    let r = i + off;
                    let gt = S::term_adjoint(term, inner, g);
                    if S::adj_is_zero(&gt) {
                        continue;
                    }
                    if h > r {
                        S::accumulate(&mut g_p[idx(n, i, r, h)], gt);
                        S::accumulate(&mut adj.h_post[idx(n, r + 1, k, h)], gt);
                    } else {
                        S::accumulate(&mut adj.h_post[idx(n, i, r, h)], gt);
                        S::accumulate(&mut g_p[idx(n, r + 1, k, h)], gt);
                    }
                }
            }
        }
    }

    for i in 0..n {
        let at = idx(n, i, i, i);
        let g = adj.h_post[at];
        S::accumulate(&mut adj.h_pre[at], g);
        for parent in (0..n).filter(|&q| q != i) {
            let gp = g_p[idx(n, i, i, parent)];
            if S::adj_is_zero(&gp) {
                continue;
            }
            let total = chart.p[idx(n, i, i, parent)];
            let g = S::term_adjoint(chart.attach_term(i, i, i, parent), total, gp);
            S::accumulate(&mut adj.h_pre[at], g);
            adj.arc[parent * n + i] += S::weight_grad(g);
        }
        adj.span_weight[i * n + i] += S::weight_grad(adj.h_pre[at]);
    }
    adj
}

/// Span, arc and head marginals of a TreeCRF.
#[derive(Clone, Debug)]
pub struct Marginals {
    n: usize,
    channels: usize,
    /// `[i][j][channel]` probabilities.
    pub span_mu: Vec<f64>,
    /// Unlabeled span marginals, `[i][j]`.
    pub span_occurrence: Vec<f64>,
    /// `[parent][child]`, `n + 1` rows with the virtual root last.
    pub arc_mu: Vec<f64>,
    /// Joint probability that span `(i, j)` occurs headed by `h`, `[i][j][h]`.
    pub span_head_mu: Vec<f64>,
    /// Expected number of penalized item occurrences (0 without a penalty).
    pub expected_penalties: f64,
}

impl Marginals {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn span(&self, i: usize, j: usize, c: usize) -> f64 {
        self.span_mu[(i * self.n + j) * self.channels + c]
    }

    pub fn occurrence(&self, i: usize, j: usize) -> f64 {
        self.span_occurrence[i * self.n + j]
    }

    pub fn arc(&self, parent: usize, child: usize) -> f64 {
        self.arc_mu[parent * self.n + child]
    }

    /// Head distribution of span `(i, j)` given that it occurs; entry `h - i`
    /// is the probability of head `h`. `None` when the span never occurs.
    pub fn head_alpha(&self, i: usize, j: usize) -> Option<Vec<f64>> {
        let at = (i * self.n + j) * self.n;
        let row = &self.span_head_mu[at + i..=at + j];
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return None;
        }
        Some(row.iter().map(|v| v / total).collect())
    }
}

/// Marginals from a log-semiring chart.
pub fn backward_marginals(chart: &Chart<LogSemiring>) -> Marginals {
    let adj = reverse(chart, 1.0);
    marginals_from_adjoints(chart, &adj)
}

fn marginals_from_adjoints(
    chart: &Chart<LogSemiring>,
    adj: &ChartAdjoints<LogSemiring>,
) -> Marginals {
    let n = chart.n;
    let channels = chart.weights.channels();
    let mut span_mu = vec![0.0; n * n * channels];
    chart.weights.backprop(&adj.span_weight, &mut span_mu);
    let mut span_head_mu = vec![0.0; n * n * n];
    for i in 0..n {
        for j in i..n {
            for h in i..=j {
                span_head_mu[idx(n, i, j, h)] = adj.h_pre[idx(n, i, j, h)];
            }
        }
    }
    let mut expected_penalties = 0.0;
    if chart.penalty.is_some() {
        for i in 0..n {
            for j in i..n {
                if chart.is_penalized(i, j) {
                    for h in i..=j {
                        expected_penalties += adj.h_post[idx(n, i, j, h)];
                    }
                }
            }
        }
    }
    Marginals {
        n,
        channels,
        span_mu,
        span_occurrence: adj.span_weight.clone(),
        arc_mu: adj.arc.clone(),
        span_head_mu,
        expected_penalties,
    }
}

/// `log Z` and its gradient with respect to every score.
pub fn grad_logz(scores: &ScoreSet, mode: SpanMode<'_>) -> Result<(f64, ScoreGradients)> {
    let (log_z, _, grads) = logz_marginals(scores, mode, None)?;
    Ok((log_z, grads))
}

/// `log Z`, full marginals and score gradients in one pass.
pub fn logz_marginals(
    scores: &ScoreSet,
    mode: SpanMode<'_>,
    penalty: Option<&Penalty>,
) -> Result<(f64, Marginals, ScoreGradients)> {
    let chart = inside_eisner_satta::<LogSemiring>(scores, mode, penalty)?;
    let adj = reverse(&chart, 1.0);
    let marginals = marginals_from_adjoints(&chart, &adj);
    let mut grads = ScoreGradients::zeros_like(scores);
    grads.span.copy_from_slice(&marginals.span_mu);
    grads.arc.copy_from_slice(&marginals.arc_mu);
    Ok((chart.root(), marginals, grads))
}

/// Expected number of penalized item occurrences under a penalized chart.
pub fn expected_penalty_count(chart_q: &Chart<LogSemiring>) -> f64 {
    if chart_q.penalty.is_none() {
        return 0.0;
    }
    backward_marginals(chart_q).expected_penalties
}

/// Result of [`kl_constrained`].
#[derive(Clone, Debug)]
pub struct KlResult {
    pub kl: f64,
    pub log_z_p: f64,
    pub log_z_q: f64,
    pub grads: ScoreGradients,
}

/// `KL(q || p)` between the penalized TreeCRF `q` and the plain TreeCRF `p`,
/// both under the same span mode, with its gradient.
///
/// The value comes from the expectation-semiring inside pass and the gradient
/// from reverse accumulation through that same pass.
pub fn kl_constrained(
    scores: &ScoreSet,
    mode: SpanMode<'_>,
    penalty: &Penalty,
) -> Result<KlResult> {
    if penalty.constant.is_nan() || penalty.constant < 0.0 {
        return Err(Error::Parameter(format!(
            "penalty constant must be >= 0, got {}",
            penalty.constant
        )));
    }
    let chart = inside_eisner_satta::<KlSemiring>(scores, mode, Some(penalty))?;
    let root = chart.root();
    if KlSemiring::is_zero(&root) {
        return Err(Error::Annotation("no tree survives the mask".into()));
    }
    // KL = expect - log_q + log_p
    let seed = KlAdj {
        log_q: -1.0,
        log_p: 1.0,
        expect: 1.0,
    };
    let adj = reverse(&chart, seed);
    let mut grads = ScoreGradients::zeros_like(scores);
    chart.weights.backprop(&adj.span_weight, &mut grads.span);
    grads.arc.copy_from_slice(&adj.arc);
    Ok(KlResult {
        kl: root.divergence().max(0.0),
        log_z_p: root.log_p,
        log_z_q: root.log_q,
        grads,
    })
}

/// Closed-form `KL(q || p) = log Z_p - log Z_q - c * E_q[#penalized items]`.
pub fn kl_closed_form(scores: &ScoreSet, mode: SpanMode<'_>, penalty: &Penalty) -> Result<f64> {
    let p = inside_eisner_satta::<LogSemiring>(scores, mode, None)?;
    let q = inside_eisner_satta::<LogSemiring>(scores, mode, Some(penalty))?;
    let count = expected_penalty_count(&q);
    Ok(p.root() - q.root() - penalty.constant * count)
}

/// Penalty targeting the gold entity spans of a mask.
pub fn gold_penalty(mask: &MaskPlan, constant: f64) -> Penalty {
    Penalty::on_spans(constant, mask.n(), mask.gold_spans())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::build_mask;
    use crate::types::{Entity, EntitySet, LabelScheme};

    fn random_scores(n: usize, seed: u64) -> ScoreSet {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = ScoreSet::zeros(n, LabelScheme::ZeroOne);
        for v in s.span_data_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        for v in s.arc_data_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        s
    }

    #[test]
    fn two_token_head_alpha_is_uniform() {
        let s = ScoreSet::zeros(2, LabelScheme::ZeroOne);
        let chart = inside_eisner_satta::<LogSemiring>(&s, SpanMode::Free, None).unwrap();
        let m = backward_marginals(&chart);
        let alpha = m.head_alpha(0, 1).unwrap();
        assert!((alpha[0] - 0.5).abs() < 1e-12 && (alpha[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_token_span_sums_to_one() {
        let s = random_scores(1, 3);
        let chart = inside_eisner_satta::<LogSemiring>(&s, SpanMode::Free, None).unwrap();
        let m = backward_marginals(&chart);
        assert!((m.span(0, 0, 0) + m.span(0, 0, 1) - 1.0).abs() < 1e-12);
        assert!((m.arc(1, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_token_has_one_parent() {
        let s = random_scores(5, 11);
        let (_, m, _) = logz_marginals(&s, SpanMode::Free, None).unwrap();
        for h in 0..5 {
            let total: f64 = (0..=5).filter(|&p| p != h).map(|p| m.arc(p, h)).sum();
            assert!((total - 1.0).abs() < 1e-10, "token {h}: {total}");
        }
        // 2n - 1 constituents in every tree
        let spans: f64 = m.span_occurrence.iter().sum();
        assert!((spans - 9.0).abs() < 1e-10);
    }

    #[test]
    fn banned_scores_get_zero_gradient() {
        let s = random_scores(5, 5);
        let set = EntitySet::new(vec![Entity::new(1, 3, vec![0])], 5).unwrap();
        let mask = build_mask(&set, 5).unwrap();
        let (_, g) = grad_logz(&s, SpanMode::Forced(&mask)).unwrap();
        for (i, j) in mask.banned_spans() {
            assert_eq!(g.span(i, j, 0), 0.0);
            assert_eq!(g.span(i, j, 1), 0.0);
        }
    }

    #[test]
    fn kl_vanishes_without_penalty() {
        let s = random_scores(4, 9);
        let r = kl_constrained(&s, SpanMode::Free, &Penalty::everywhere(0.0)).unwrap();
        assert_eq!(r.kl, 0.0);
        assert_eq!(r.grads.max_abs(), 0.0);
    }

    #[test]
    fn kl_semiring_matches_closed_form() {
        let s = random_scores(4, 21);
        let set = EntitySet::new(
            vec![Entity::new(0, 2, vec![0]), Entity::new(1, 2, vec![0])],
            4,
        )
        .unwrap();
        let mask = build_mask(&set, 4).unwrap();
        let pen = gold_penalty(&mask, 0.4);
        let r = kl_constrained(&s, SpanMode::Forced(&mask), &pen).unwrap();
        let closed = kl_closed_form(&s, SpanMode::Forced(&mask), &pen).unwrap();
        assert!((r.kl - closed).abs() < 1e-10, "{} vs {closed}", r.kl);
        assert!(r.kl > 0.0);
    }
}

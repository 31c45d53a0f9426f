//! Unlexicalized CYK over binary bracketings, the non-lexicalized baseline.
//!
//! `I[i, k] = w(i, k) (x) (+)_r I[i, r] (x) I[r+1, k]`; arc scores are ignored.

use crate::error::{Error, Result};
use crate::mask::{SpanMode, SpanWeights};
use crate::semiring::{Differentiable, LogSemiring, MaxSemiring, Semiring};
use crate::types::{ScoreGradients, ScoreSet};

#[derive(Clone, Debug)]
pub struct CykChart<S: Semiring> {
    n: usize,
    inside: Vec<S::Elem>,
    weights: SpanWeights,
}

impl<S: Semiring> CykChart<S> {
    pub fn root(&self) -> S::Elem {
        self.inside[self.n - 1]
    }

    pub fn inside(&self, i: usize, k: usize) -> S::Elem {
        self.inside[i * self.n + k]
    }

    pub fn span_weights(&self) -> &SpanWeights {
        &self.weights
    }
}

pub fn cyk_chart<S: Semiring>(scores: &ScoreSet, mode: SpanMode<'_>) -> Result<CykChart<S>> {
    let n = scores.n();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    scores.check_valid()?;
    let weights = SpanWeights::compute::<S>(scores, mode)?;
    let mut inside = vec![S::zero(); n * n];
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        inside[i * n + i] = S::weight(weights.get(i, i));
    }
    for width in 1..n {
        for i in 0..n - width {
            let k = i + width;
            let w = S::weight(weights.get(i, k));
            if S::is_zero(&w) {
                continue;
            }
            terms.clear();
            for r in i..k {
                terms.push(S::times(inside[i * n + r], inside[(r + 1) * n + k]));
            }
            inside[i * n + k] = S::times(w, S::sum(&terms));
        }
    }
    Ok(CykChart { n, inside, weights })
}

/// Log-sum over all binary bracketings.
pub fn inside_cyk(scores: &ScoreSet, mode: SpanMode<'_>) -> Result<f64> {
    Ok(cyk_chart::<LogSemiring>(scores, mode)?.root())
}

/// `log Z` of the bracketing CRF and its gradient (span marginals).
pub fn cyk_grad_logz(scores: &ScoreSet, mode: SpanMode<'_>) -> Result<(f64, ScoreGradients)> {
    let chart = cyk_chart::<LogSemiring>(scores, mode)?;
    let span_adj = cyk_reverse(&chart, 1.0);
    let mut grads = ScoreGradients::zeros_like(scores);
    chart.weights.backprop(&span_adj, &mut grads.span);
    Ok((chart.root(), grads))
}

/// Adjoints of the span weights, i.e. span marginals under the log semiring.
pub fn cyk_reverse<S: Differentiable>(chart: &CykChart<S>, seed: S::Adj) -> Vec<f64> {
    let n = chart.n;
    let mut adj = vec![S::Adj::default(); n * n];
    adj[n - 1] = seed;
    let mut span = vec![0.0; n * n];
    let mut terms = Vec::with_capacity(n);
    for width in (1..n).rev() {
        for i in 0..n - width {
            let k = i + width;
            let g = adj[i * n + k];
            if S::adj_is_zero(&g) {
                continue;
            }
            span[i * n + k] += S::weight_grad(g);
            terms.clear();
            for r in i..k {
                terms.push(S::times(
                    chart.inside[i * n + r],
                    chart.inside[(r + 1) * n + k],
                ));
            }
            let inner = S::sum(&terms);
            for (off, &t) in terms.iter().enumerate() {
                let r = i + off;
                let gt = S::term_adjoint(t, inner, g);
                S::accumulate(&mut adj[i * n + r], gt);
                S::accumulate(&mut adj[(r + 1) * n + k], gt);
            }
        }
    }
    for i in 0..n {
        span[i * n + i] += S::weight_grad(adj[i * n + i]);
    }
    span
}

/// A bracketing with one channel per constituent.
#[derive(Clone, Debug, PartialEq)]
pub struct Bracketing {
    /// `(start, end, channel)` in pre-order.
    pub constituents: Vec<(usize, usize, usize)>,
    pub score: f64,
}

/// Best bracketing; ties prefer the lower split point.
pub fn viterbi_cyk(scores: &ScoreSet, mode: SpanMode<'_>) -> Result<Bracketing> {
    let chart = cyk_chart::<MaxSemiring>(scores, mode)?;
    let n = chart.n;
    if crate::semiring::is_impossible(chart.root()) {
        return Err(Error::Annotation("no bracketing survives the mask".into()));
    }
    let mut constituents = Vec::with_capacity(2 * n - 1);
    let mut stack = vec![(0, n - 1)];
    while let Some((i, k)) = stack.pop() {
        constituents.push((i, k, chart.weights.best_channel(i, k)));
        if i == k {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for r in i..k {
            let t = MaxSemiring::times(chart.inside[i * n + r], chart.inside[(r + 1) * n + k]);
            if best.is_none_or(|(_, b)| t > b) {
                best = Some((r, t));
            }
        }
        let (r, _) = best.expect("non-leaf span has a split");
        stack.push((r + 1, k));
        stack.push((i, r));
    }
    Ok(Bracketing {
        constituents,
        score: chart.root(),
    })
}

//! Eisner-Satta inside computation over lexicalized binary trees.
//!
//! Two item types are kept per span `[i, j]`:
//!
//! * `H[i, j, h]`: the span is headed by token `h` and has no parent yet.
//! * `P[i, j, p]`: the span's head (any `h`) has been attached to parent `p`,
//!   where `p` lies outside the span.
//!
//! Rules, for a span `[i, k]` split at `r`:
//!
//! ```text
//! P[i, j, p] = (+)_h H[i, j, h] (x) arc[p][h]                      attach
//! H[i, k, h] = w(i, k) (x) (+)_r ( P[i, r, h] (x) H[r+1, k, h]      complete left
//!                              (+) H[i, r, h] (x) P[r+1, k, h] )    complete right
//! root       = (+)_h H[0, n-1, h] (x) arc[root][h]
//! ```
//!
//! The optional penalty multiplies a targeted `H` cell by `penalty(c)` after
//! its attach rule has fired: attaching the span to a parent is free, while
//! passing its head further up (governing more material) pays `c`. Cells of
//! one width band depend only on narrower bands.

use crate::error::{Error, Result};
use crate::mask::{SpanMode, SpanWeights};
use crate::semiring::Semiring;
use crate::types::ScoreSet;

/// Which `H` cells the soft head constraint applies to.
#[derive(Clone, Debug, PartialEq)]
pub enum PenaltyTargets {
    /// Every span.
    All,
    /// Spans flagged in an `n x n` row-major table.
    Spans { n: usize, flags: Vec<bool> },
}

/// The soft constraint discouraging a head from governing several targeted spans.
#[derive(Clone, Debug, PartialEq)]
pub struct Penalty {
    pub constant: f64,
    pub targets: PenaltyTargets,
}

/// Penalty constant used in training unless configured otherwise.
pub const DEFAULT_PENALTY: f64 = 0.4;

impl Penalty {
    pub fn everywhere(constant: f64) -> Self {
        Penalty {
            constant,
            targets: PenaltyTargets::All,
        }
    }

    pub fn on_spans(
        constant: f64,
        n: usize,
        spans: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut flags = vec![false; n * n];
        for (i, j) in spans {
            flags[i * n + j] = true;
        }
        Penalty {
            constant,
            targets: PenaltyTargets::Spans { n, flags },
        }
    }

    #[inline]
    pub fn targets(&self, i: usize, j: usize) -> bool {
        match &self.targets {
            PenaltyTargets::All => true,
            PenaltyTargets::Spans { n, flags } => flags[i * n + j],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !self.constant.is_finite() || self.constant < 0.0 {
            return Err(Error::Parameter(format!(
                "penalty constant must be finite and >= 0, got {}",
                self.constant
            )));
        }
        if let PenaltyTargets::Spans { n: m, .. } = &self.targets {
            if *m != n {
                return Err(Error::Shape(format!(
                    "penalty targets built for {m} tokens, scores for {n}"
                )));
            }
        }
        Ok(())
    }
}

/// Filled Eisner-Satta chart for one semiring.
#[derive(Clone, Debug)]
pub struct Chart<S: Semiring> {
    pub(crate) n: usize,
    /// `H` before the penalty, read by attach rules and the root.
    pub(crate) h_pre: Vec<S::Elem>,
    /// `H` after the penalty, read by complete rules.
    pub(crate) h_post: Vec<S::Elem>,
    pub(crate) p: Vec<S::Elem>,
    pub(crate) root: S::Elem,
    pub(crate) weights: SpanWeights,
    pub(crate) arc: Vec<f64>,
    pub(crate) penalty: Option<Penalty>,
}

#[inline]
pub(crate) fn idx(n: usize, i: usize, j: usize, x: usize) -> usize {
    (i * n + j) * n + x
}

impl<S: Semiring> Chart<S> {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Root value: `log Z` under the log semiring, the best score under max.
    pub fn root(&self) -> S::Elem {
        self.root
    }

    pub fn h(&self, i: usize, j: usize, h: usize) -> S::Elem {
        self.h_pre[idx(self.n, i, j, h)]
    }

    pub fn h_penalized(&self, i: usize, j: usize, h: usize) -> S::Elem {
        self.h_post[idx(self.n, i, j, h)]
    }

    pub fn p(&self, i: usize, j: usize, parent: usize) -> S::Elem {
        self.p[idx(self.n, i, j, parent)]
    }

    pub fn span_weights(&self) -> &SpanWeights {
        &self.weights
    }

    pub fn penalty(&self) -> Option<&Penalty> {
        self.penalty.as_ref()
    }

    #[inline]
    pub(crate) fn arc_weight(&self, parent: usize, child: usize) -> S::Elem {
        S::weight(self.arc[parent * self.n + child])
    }

    #[inline]
    pub(crate) fn is_penalized(&self, i: usize, j: usize) -> bool {
        self.penalty.as_ref().is_some_and(|p| p.targets(i, j))
    }

    /// The term of the complete rule for head `h` of `[i, k]` split at `r`.
    #[inline]
    pub(crate) fn complete_term(&self, i: usize, k: usize, h: usize, r: usize) -> S::Elem {
        let n = self.n;
        if h > r {
            S::times(self.p[idx(n, i, r, h)], self.h_post[idx(n, r + 1, k, h)])
        } else {
            S::times(self.h_post[idx(n, i, r, h)], self.p[idx(n, r + 1, k, h)])
        }
    }

    /// The term of the attach rule joining head `h` of `[i, j]` to `parent`.
    #[inline]
    pub(crate) fn attach_term(&self, i: usize, j: usize, h: usize, parent: usize) -> S::Elem {
        S::times(self.h_pre[idx(self.n, i, j, h)], self.arc_weight(parent, h))
    }
}

/// Runs the Eisner-Satta inside pass.
///
/// `mode` decides how span label channels enter the span weights (free, or
/// forced by a mask); `penalty` enables the soft head constraint.
pub fn inside_eisner_satta<S: Semiring>(
    scores: &ScoreSet,
    mode: SpanMode<'_>,
    penalty: Option<&Penalty>,
) -> Result<Chart<S>> {
    let n = scores.n();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    scores.check_valid()?;
    if let Some(p) = penalty {
        p.validate(n)?;
    }
    let weights = SpanWeights::compute::<S>(scores, mode)?;
    let size = n * n * n;
    let mut chart = Chart::<S> {
        n,
        h_pre: vec![S::zero(); size],
        h_post: vec![S::zero(); size],
        p: vec![S::zero(); size],
        root: S::zero(),
        weights,
        arc: scores.arc_data().to_vec(),
        penalty: penalty.cloned(),
    };
    let pen = penalty.map(|p| S::penalty(p.constant));
    let mut terms: Vec<S::Elem> = Vec::with_capacity(2 * n);

    for i in 0..n {
        let v = S::weight(chart.weights.get(i, i));
        chart.h_pre[idx(n, i, i, i)] = v;
        for parent in (0..n).filter(|&q| q != i) {
            chart.p[idx(n, i, i, parent)] = S::times(v, chart.arc_weight(parent, i));
        }
        chart.h_post[idx(n, i, i, i)] = match pen {
            Some(c) if chart.is_penalized(i, i) => S::times(v, c),
            _ => v,
        };
    }

    for width in 1..n {
        for i in 0..n - width {
            let k = i + width;
            let w = S::weight(chart.weights.get(i, k));
            if S::is_zero(&w) {
                continue;
            }
            for h in i..=k {
                terms.clear();
                for r in i..k {
                    terms.push(chart.complete_term(i, k, h, r));
                }
                chart.h_pre[idx(n, i, k, h)] = S::times(w, S::sum(&terms));
            }
            for parent in (0..i).chain(k + 1..n) {
                terms.clear();
                for h in i..=k {
                    terms.push(chart.attach_term(i, k, h, parent));
                }
                chart.p[idx(n, i, k, parent)] = S::sum(&terms);
            }
            let penalized = chart.is_penalized(i, k);
            for h in i..=k {
                let at = idx(n, i, k, h);
                chart.h_post[at] = match pen {
                    Some(c) if penalized => S::times(chart.h_pre[at], c),
                    _ => chart.h_pre[at],
                };
            }
        }
    }

    terms.clear();
    for h in 0..n {
        terms.push(chart.attach_term(0, n - 1, h, n));
    }
    chart.root = S::sum(&terms);
    Ok(chart)
}

/// `log Z` of the lexicalized TreeCRF.
pub fn log_partition(scores: &ScoreSet, mode: SpanMode<'_>) -> Result<f64> {
    Ok(inside_eisner_satta::<crate::semiring::LogSemiring>(scores, mode, None)?.root())
}

/// Log-sum over the lexicalized trees compatible with a mask.
///
/// A valid (non-crossing) entity set always leaves at least one tree, so an
/// impossible result means the mask and scores disagree.
pub fn masked_log_numerator(scores: &ScoreSet, mask: &crate::mask::MaskPlan) -> Result<f64> {
    let value = log_partition(scores, SpanMode::Forced(mask))?;
    if crate::semiring::is_impossible(value) {
        return Err(Error::Annotation(
            "no lexicalized tree is compatible with the observed entities".into(),
        ));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::build_mask;
    use crate::semiring::{LogSemiring, MaxSemiring};
    use crate::types::{Entity, EntitySet, LabelScheme};

    fn zero_scores(n: usize) -> ScoreSet {
        // free mode on a single channel keeps every span weight at 0
        ScoreSet::zeros(n, LabelScheme::Unlabeled)
    }

    #[test]
    fn single_token_partition_is_zero() {
        let z = log_partition(&zero_scores(1), SpanMode::Free).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn three_tokens_have_eight_lexicalized_trees() {
        let z = log_partition(&zero_scores(3), SpanMode::Free).unwrap();
        assert!((z - 8f64.ln()).abs() < 1e-12);
        let best = inside_eisner_satta::<MaxSemiring>(&zero_scores(3), SpanMode::Free, None)
            .unwrap()
            .root();
        assert_eq!(best, 0.0);
    }

    #[test]
    fn two_tokens_under_full_span_entity() {
        let set = EntitySet::new(vec![Entity::new(0, 1, vec![0])], 2).unwrap();
        let mask = build_mask(&set, 2).unwrap();
        let scores = ScoreSet::zeros(2, LabelScheme::ZeroOne);
        let num = masked_log_numerator(&scores, &mask).unwrap();
        assert!((num - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_and_nan_inputs_fail() {
        let empty = ScoreSet::zeros(0, LabelScheme::ZeroOne);
        assert!(matches!(
            log_partition(&empty, SpanMode::Free),
            Err(Error::EmptyInput)
        ));
        let mut bad = ScoreSet::zeros(2, LabelScheme::ZeroOne);
        bad.set_span(0, 1, 1, f64::NAN);
        assert!(matches!(
            log_partition(&bad, SpanMode::Free),
            Err(Error::InvalidScore(_))
        ));
    }

    #[test]
    fn negative_penalty_is_rejected() {
        let s = zero_scores(2);
        let p = Penalty::everywhere(-0.1);
        assert!(inside_eisner_satta::<LogSemiring>(&s, SpanMode::Free, Some(&p)).is_err());
    }

    #[test]
    fn penalty_lowers_partition() {
        let s = zero_scores(4);
        let z = log_partition(&s, SpanMode::Free).unwrap();
        let p = Penalty::everywhere(DEFAULT_PENALTY);
        let zq = inside_eisner_satta::<LogSemiring>(&s, SpanMode::Free, Some(&p))
            .unwrap()
            .root();
        assert!(zq < z);
    }
}

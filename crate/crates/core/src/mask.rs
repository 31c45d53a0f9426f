//! Masks derived from observed entities, and span weights under a mask.

use crate::error::{Error, Result};
use crate::semiring::{is_impossible, Semiring, NEG_INF};
use crate::types::{spans_cross, EntitySet, LabelScheme, ScoreSet};

/// Which spans are compatible with a set of observed entities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    n: usize,
    banned: Vec<bool>,
    gold: Vec<Option<Vec<usize>>>,
}

impl MaskPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_banned(&self, i: usize, j: usize) -> bool {
        self.banned[i * self.n + j]
    }

    pub fn is_gold(&self, i: usize, j: usize) -> bool {
        self.gold[i * self.n + j].is_some()
    }

    /// Label ids of the gold entity at `(i, j)`, if any.
    pub fn gold_labels(&self, i: usize, j: usize) -> Option<&[usize]> {
        self.gold[i * self.n + j].as_deref()
    }

    /// The forced 0-1 label of an unbanned span: 1 for gold entities, 0 otherwise.
    pub fn forced_label(&self, i: usize, j: usize) -> Option<u8> {
        if self.is_banned(i, j) {
            None
        } else if self.is_gold(i, j) {
            Some(1)
        } else {
            Some(0)
        }
    }

    /// All banned spans in row-major order.
    pub fn banned_spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i..self.n {
                if self.is_banned(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn gold_spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i..self.n {
                if self.is_gold(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Bans every span that crosses an observed entity.
pub fn build_mask(entities: &EntitySet, n: usize) -> Result<MaskPlan> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    entities.validate(n)?;
    let mut banned = vec![false; n * n];
    let mut gold = vec![None; n * n];
    for e in entities {
        gold[e.start * n + e.end] = Some(e.labels.clone());
        for i in 0..n {
            for j in i..n {
                if spans_cross((i, j), e.span()) {
                    banned[i * n + j] = true;
                }
            }
        }
    }
    Ok(MaskPlan { n, banned, gold })
}

/// How span label channels are combined into a span weight.
#[derive(Clone, Copy, Debug)]
pub enum SpanMode<'a> {
    /// Every channel is allowed.
    Free,
    /// Labels forced by a mask: gold spans take their entity channel(s),
    /// other compatible spans the latent channel, crossing spans are impossible.
    Forced(&'a MaskPlan),
}

/// Channels that participate in span `(i, j)` under a mode, or `None` if banned.
fn active_channels(
    scores: &ScoreSet,
    i: usize,
    j: usize,
    mode: SpanMode<'_>,
) -> Option<Vec<usize>> {
    let c = scores.channels();
    match mode {
        SpanMode::Free => Some((0..c).collect()),
        SpanMode::Forced(mask) => {
            if mask.is_banned(i, j) {
                return None;
            }
            match (scores.scheme(), mask.gold_labels(i, j)) {
                (LabelScheme::ZeroOne, Some(_)) => Some(vec![1]),
                (LabelScheme::Labeled(_), Some(labels)) => {
                    Some(labels.iter().map(|l| l + 1).collect())
                }
                _ => Some(vec![0]),
            }
        }
    }
}

/// Span weight of `(i, j)` in log-sum form.
///
/// Free mode gives `logsumexp` over the channels; forced mode gives the
/// forced channel's score, or the impossible sentinel when the span is banned.
pub fn span_weight(scores: &ScoreSet, i: usize, j: usize, mode: SpanMode<'_>) -> f64 {
    match active_channels(scores, i, j, mode) {
        None => NEG_INF,
        Some(chs) => {
            let vals: Vec<f64> = chs.iter().map(|&c| scores.span(i, j, c)).collect();
            crate::semiring::log_sum(&vals)
        }
    }
}

/// Span weights of a whole sentence, with the derivative of each weight
/// with respect to its channel scores.
#[derive(Clone, Debug)]
pub struct SpanWeights {
    n: usize,
    channels: usize,
    weight: Vec<f64>,
    dweight: Vec<f64>,
    best_channel: Vec<usize>,
}

impl SpanWeights {
    pub fn compute<S: Semiring>(scores: &ScoreSet, mode: SpanMode<'_>) -> Result<Self> {
        let n = scores.n();
        let channels = scores.channels();
        if let SpanMode::Forced(mask) = mode {
            if mask.n() != n {
                return Err(Error::Shape(format!(
                    "mask built for {} tokens, scores for {n}",
                    mask.n()
                )));
            }
        }
        let mut weight = vec![NEG_INF; n * n];
        let mut dweight = vec![0.0; n * n * channels];
        let mut best_channel = vec![0; n * n];
        let mut vals = Vec::with_capacity(channels);
        for i in 0..n {
            for j in i..n {
                let Some(chs) = active_channels(scores, i, j, mode) else {
                    continue;
                };
                vals.clear();
                vals.extend(chs.iter().map(|&c| scores.span(i, j, c)));
                let w = S::combine_channels(&vals);
                weight[i * n + j] = w;
                let mut best = 0;
                for (k, v) in vals.iter().enumerate() {
                    if *v > vals[best] {
                        best = k;
                    }
                }
                best_channel[i * n + j] = chs[best];
                if is_impossible(w) {
                    continue;
                }
                for (k, &c) in chs.iter().enumerate() {
                    let d = if is_impossible(vals[k]) {
                        0.0
                    } else {
                        (vals[k] - w).exp()
                    };
                    dweight[(i * n + j) * channels + c] = d;
                }
            }
        }
        Ok(SpanWeights {
            n,
            channels,
            weight,
            dweight,
            best_channel,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.n + j]
    }

    /// Highest-scoring active channel of `(i, j)`; ties go to the lower channel.
    pub fn best_channel(&self, i: usize, j: usize) -> usize {
        self.best_channel[i * self.n + j]
    }

    /// Pushes `d/d weight` back onto the channel scores.
    ///
    /// For log-sum weights this is the channel softmax; `span_grads` is laid
    /// out like the span tensor of a [`ScoreSet`].
    pub fn backprop(&self, dweight: &[f64], span_grads: &mut [f64]) {
        let c = self.channels;
        for i in 0..self.n {
            for j in i..self.n {
                let g = dweight[i * self.n + j];
                if g == 0.0 {
                    continue;
                }
                let at = (i * self.n + j) * c;
                for ch in 0..c {
                    span_grads[at + ch] += g * self.dweight[at + ch];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semiring::LogSemiring;
    use crate::types::Entity;

    fn brute_force_banned(n: usize, gold: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in i..n {
                // overlap without containment, either way round
                let crosses = gold.iter().any(|&(a, b)| {
                    let overlap = i.max(a) <= j.min(b);
                    let nested = (a <= i && j <= b) || (i <= a && b <= j);
                    overlap && !nested
                });
                if crosses {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn mask_for_single_inner_entity() {
        let set = EntitySet::new(vec![Entity::new(1, 3, vec![0])], 5).unwrap();
        let mask = build_mask(&set, 5).unwrap();
        assert_eq!(mask.banned_spans(), vec![(0, 1), (0, 2), (2, 4), (3, 4)]);
        assert_eq!(mask.banned_spans(), brute_force_banned(5, &[(1, 3)]));
        assert_eq!(mask.forced_label(1, 3), Some(1));
        assert_eq!(mask.forced_label(0, 4), Some(0));
        assert_eq!(mask.forced_label(0, 1), None);
    }

    #[test]
    fn empty_and_full_span_masks_ban_nothing() {
        assert!(build_mask(&EntitySet::empty(), 3)
            .unwrap()
            .banned_spans()
            .is_empty());
        let full = EntitySet::new(vec![Entity::new(0, 1, vec![0])], 2).unwrap();
        assert!(build_mask(&full, 2).unwrap().banned_spans().is_empty());
    }

    #[test]
    fn entities_out_of_range_are_rejected() {
        let set = EntitySet::new(vec![Entity::new(1, 4, vec![0])], 5).unwrap();
        assert!(matches!(build_mask(&set, 3), Err(Error::Annotation(_))));
        assert!(matches!(build_mask(&set, 0), Err(Error::EmptyInput)));
    }

    #[test]
    fn span_weight_modes() {
        let mut s = ScoreSet::zeros(3, LabelScheme::ZeroOne);
        assert!((span_weight(&s, 0, 1, SpanMode::Free) - 2f64.ln()).abs() < 1e-15);
        s.set_span(1, 2, 1, 0.7);
        s.set_span(1, 2, 0, -0.3);
        let set = EntitySet::new(vec![Entity::new(1, 2, vec![0])], 3).unwrap();
        let mask = build_mask(&set, 3).unwrap();
        assert_eq!(span_weight(&s, 1, 2, SpanMode::Forced(&mask)), 0.7);
        assert_eq!(span_weight(&s, 0, 1, SpanMode::Forced(&mask)), NEG_INF);
        assert_eq!(span_weight(&s, 0, 2, SpanMode::Forced(&mask)), 0.0);
    }

    #[test]
    fn weights_backprop_is_softmax() {
        let mut s = ScoreSet::zeros(2, LabelScheme::ZeroOne);
        s.set_span(0, 1, 0, 0.2);
        s.set_span(0, 1, 1, 1.0);
        let w = SpanWeights::compute::<LogSemiring>(&s, SpanMode::Free).unwrap();
        let mut g = vec![0.0; 8];
        let mut dw = vec![0.0; 4];
        dw[1] = 1.0;
        w.backprop(&dw, &mut g);
        let z = (0.2f64).exp() + 1f64.exp();
        assert!((g[2] - 0.2f64.exp() / z).abs() < 1e-15);
        assert!((g[3] - 1f64.exp() / z).abs() < 1e-15);
        assert_eq!(w.best_channel(0, 1), 1);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::types::Entity;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn gold_spans_are_never_banned(n in 1usize..8, picks in proptest::collection::vec((0usize..8, 0usize..8), 0..5)) {
            // keep a non-crossing subset of the proposed spans
            let mut kept: Vec<Entity> = Vec::new();
            for (a, b) in picks {
                let (s, e) = (a.min(b) % n, a.max(b) % n);
                let (s, e) = (s.min(e), s.max(e));
                if kept.iter().all(|k| k.span() != (s, e) && !spans_cross(k.span(), (s, e))) {
                    kept.push(Entity::new(s, e, vec![0]));
                }
            }
            let set = EntitySet::new(kept.clone(), n).unwrap();
            let mask = build_mask(&set, n).unwrap();
            for e in &kept {
                prop_assert!(!mask.is_banned(e.start, e.end));
            }
            for i in 0..n {
                for j in i..n {
                    let crosses = kept.iter().any(|e| spans_cross(e.span(), (i, j)));
                    prop_assert_eq!(mask.is_banned(i, j), crosses);
                }
            }
        }
    }
}

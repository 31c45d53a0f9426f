//! Viterbi lexicalized trees and two-stage entity prediction.

use crate::chart::{idx, inside_eisner_satta, Chart, Penalty};
use crate::cyk::Bracketing;
use crate::error::{Error, Result};
use crate::marginals::backward_marginals;
use crate::mask::SpanMode;
use crate::semiring::{is_impossible, LogSemiring, MaxSemiring, Semiring};
use crate::types::{spans_cross, Entity, ScoreSet};

/// One constituent of a decoded tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constituent {
    pub start: usize,
    pub end: usize,
    pub head: usize,
    /// Chosen span channel (0/1 under the 0-1 scheme).
    pub label: usize,
    /// Indices of the two children, `None` for a leaf.
    pub children: Option<(usize, usize)>,
}

/// A lexicalized binary tree.
#[derive(Clone, Debug, PartialEq)]
pub struct LexTree {
    n: usize,
    /// Pre-order; the first entry spans the sentence.
    constituents: Vec<Constituent>,
    /// `(parent, child)`; parent `n` is the virtual root.
    arcs: Vec<(usize, usize)>,
    score: f64,
}

impl LexTree {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn constituents(&self) -> &[Constituent] {
        &self.constituents
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    /// Chart score of the tree as returned by the Viterbi pass.
    pub fn score(&self) -> f64 {
        self.score
    }

    /// Parent of every token, `n` for the root's dependent.
    pub fn parents(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n];
        for &(p, c) in &self.arcs {
            out[c] = p;
        }
        out
    }

    /// Checks the structural invariants: `2n - 1` constituents forming a
    /// binary bracketing, inherited heads, and a well-formed dependency tree.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let bad = |m: String| Err(Error::Internal(m));
        if self.constituents.len() != 2 * n - 1 {
            return bad(format!(
                "{} constituents for {n} tokens",
                self.constituents.len()
            ));
        }
        let top = &self.constituents[0];
        if (top.start, top.end) != (0, n - 1) {
            return bad("top constituent does not span the sentence".into());
        }
        let mut seen = vec![false; self.constituents.len()];
        seen[0] = true;
        for c in &self.constituents {
            if c.head < c.start || c.head > c.end {
                return bad(format!("head {} outside ({}, {})", c.head, c.start, c.end));
            }
            match c.children {
                None if c.start != c.end => return bad("non-leaf without children".into()),
                None => {}
                Some((l, r)) => {
                    let (lc, rc) = (&self.constituents[l], &self.constituents[r]);
                    if lc.start != c.start || rc.end != c.end || lc.end + 1 != rc.start {
                        return bad("children do not partition their parent".into());
                    }
                    if (lc.head == c.head) == (rc.head == c.head) {
                        return bad("head is not inherited from exactly one child".into());
                    }
                    for x in [l, r] {
                        if seen[x] {
                            return bad("constituent reached twice".into());
                        }
                        seen[x] = true;
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("unreachable constituent".into());
        }
        if self.arcs.len() != n {
            return bad(format!("{} arcs for {n} tokens", self.arcs.len()));
        }
        let parents = self.parents();
        if parents.iter().filter(|&&p| p == n).count() != 1 || parents.contains(&usize::MAX) {
            return bad("dependency tree needs exactly one root arc".into());
        }
        for start in 0..n {
            let mut t = start;
            for _ in 0..=n {
                if t == n {
                    break;
                }
                t = parents[t];
            }
            if t != n {
                return bad("dependency cycle".into());
            }
        }
        Ok(())
    }

    /// Recomputes the score from the scores, in the same association order
    /// as the chart, so that it equals the Viterbi root value exactly.
    pub fn rescore(&self, scores: &ScoreSet, penalty: Option<&Penalty>) -> f64 {
        let top = &self.constituents[0];
        MaxSemiring::times(
            self.node_value(0, scores, penalty),
            scores.arc(self.n, top.head),
        )
    }

    fn node_value(&self, at: usize, scores: &ScoreSet, penalty: Option<&Penalty>) -> f64 {
        let c = &self.constituents[at];
        let w = MaxSemiring::weight(scores.span(c.start, c.end, c.label));
        let Some((l, r)) = c.children else {
            return w;
        };
        let (inherit, dep) = if self.constituents[l].head == c.head {
            (l, r)
        } else {
            (r, l)
        };
        let dep_head = self.constituents[dep].head;
        let attached = MaxSemiring::times(
            self.node_value(dep, scores, penalty),
            scores.arc(c.head, dep_head),
        );
        let ic = &self.constituents[inherit];
        let mut kept = self.node_value(inherit, scores, penalty);
        if let Some(p) = penalty {
            if p.targets(ic.start, ic.end) {
                kept = MaxSemiring::times(kept, MaxSemiring::penalty(p.constant));
            }
        }
        let term = if dep == l {
            MaxSemiring::times(attached, kept)
        } else {
            MaxSemiring::times(kept, attached)
        };
        MaxSemiring::times(w, term)
    }

    /// Constituents carrying span channel `label`.
    pub fn with_label(&self, label: usize) -> impl Iterator<Item = &Constituent> {
        self.constituents.iter().filter(move |c| c.label == label)
    }
}

/// Decode-time soft constraint on the spans whose entity channel wins.
///
/// Every binary tree continues a head upward exactly `n - 1` times, so a
/// penalty on all cells shifts every tree equally; restricting it to entity
/// candidates charges `c` whenever a predicted entity's head goes on to head
/// a larger constituent.
pub fn candidate_penalty(scores: &ScoreSet, constant: f64) -> Penalty {
    let n = scores.n();
    let mut spans = Vec::new();
    for i in 0..n {
        for j in i..n {
            let ch = scores.span_channels(i, j);
            if ch.len() > 1 && argmax(ch) == 1 {
                spans.push((i, j));
            }
        }
    }
    Penalty::on_spans(constant, n, spans)
}

/// Best 0-1 labeled lexicalized tree over free span channels.
pub fn viterbi_lexicalized(scores: &ScoreSet, decode_penalty: Option<&Penalty>) -> Result<LexTree> {
    viterbi_lexicalized_in(scores, SpanMode::Free, decode_penalty)
}

/// Best lexicalized tree under any span mode.
///
/// Ties prefer the lower split point, then the lower head.
pub fn viterbi_lexicalized_in(
    scores: &ScoreSet,
    mode: SpanMode<'_>,
    decode_penalty: Option<&Penalty>,
) -> Result<LexTree> {
    let chart = inside_eisner_satta::<MaxSemiring>(scores, mode, decode_penalty)?;
    let n = chart.n();
    if is_impossible(chart.root()) {
        return Err(Error::Annotation("no tree survives the mask".into()));
    }
    let root_head = (0..n)
        .find(|&h| chart.attach_term(0, n - 1, h, n) == chart.root())
        .ok_or_else(|| Error::Internal("root backpointer not found".into()))?;
    let mut tree = LexTree {
        n,
        constituents: Vec::with_capacity(2 * n - 1),
        arcs: vec![(n, root_head)],
        score: chart.root(),
    };
    backtrack(&chart, &mut tree, 0, n - 1, root_head)?;
    Ok(tree)
}

fn backtrack(
    chart: &Chart<MaxSemiring>,
    tree: &mut LexTree,
    i: usize,
    k: usize,
    h: usize,
) -> Result<usize> {
    let n = chart.n();
    let at = tree.constituents.len();
    tree.constituents.push(Constituent {
        start: i,
        end: k,
        head: h,
        label: chart.span_weights().best_channel(i, k),
        children: None,
    });
    if i == k {
        return Ok(at);
    }
    let terms: Vec<f64> = (i..k).map(|r| chart.complete_term(i, k, h, r)).collect();
    let best = MaxSemiring::sum(&terms);
    let r = i + terms
        .iter()
        .position(|&t| t == best)
        .ok_or_else(|| Error::Internal("split backpointer not found".into()))?;
    // the dependent side is the item attached to h
    let (dep_span, head_span) = if h > r {
        ((i, r), (r + 1, k))
    } else {
        ((r + 1, k), (i, r))
    };
    let p_val = chart.p[idx(n, dep_span.0, dep_span.1, h)];
    let dep_head = (dep_span.0..=dep_span.1)
        .find(|&d| chart.attach_term(dep_span.0, dep_span.1, d, h) == p_val)
        .ok_or_else(|| Error::Internal("attach backpointer not found".into()))?;
    tree.arcs.push((h, dep_head));
    let (left, right) = if h > r {
        let l = backtrack(chart, tree, dep_span.0, dep_span.1, dep_head)?;
        let rr = backtrack(chart, tree, head_span.0, head_span.1, h)?;
        (l, rr)
    } else {
        let l = backtrack(chart, tree, head_span.0, head_span.1, h)?;
        let rr = backtrack(chart, tree, dep_span.0, dep_span.1, dep_head)?;
        (l, rr)
    };
    tree.constituents[at].children = Some((left, right));
    Ok(at)
}

/// Entities predicted for one sentence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prediction {
    pub entities: Vec<Entity>,
}

impl Prediction {
    pub fn has_crossing(&self) -> bool {
        let e = &self.entities;
        (0..e.len()).any(|a| (a + 1..e.len()).any(|b| spans_cross(e[a].span(), e[b].span())))
    }
}

/// Multilabel decision: every label scoring above 0, else the single argmax
/// (lowest index on ties).
pub fn label_set(scores: &[f64]) -> Vec<usize> {
    let set: Vec<usize> = (0..scores.len()).filter(|&l| scores[l] > 0.0).collect();
    if !set.is_empty() || scores.is_empty() {
        return set;
    }
    let mut best = 0;
    for l in 1..scores.len() {
        if scores[l] > scores[best] {
            best = l;
        }
    }
    vec![best]
}

/// Decision for a labeler whose class 0 is the empty label: the entity
/// labels among [`label_set`], or `None` when no entity label survives.
pub fn label_set_with_empty(scores: &[f64]) -> Option<Vec<usize>> {
    let labels: Vec<usize> = label_set(scores)
        .into_iter()
        .filter(|&l| l > 0)
        .map(|l| l - 1)
        .collect();
    (!labels.is_empty()).then_some(labels)
}

/// Stage II: types every constituent labeled 1 using its head.
pub fn label_entities<F>(tree: &LexTree, mut label_scorer: F) -> Result<Prediction>
where
    F: FnMut(usize, usize, usize) -> Result<Vec<f64>>,
{
    let mut entities = Vec::new();
    for c in tree.with_label(1) {
        let s = label_scorer(c.start, c.end, c.head)?;
        entities.push(Entity::new(c.start, c.end, label_set(&s)).with_head(c.head));
    }
    sort_entities(&mut entities);
    Ok(Prediction { entities })
}

/// Stage II for an unlabeled tree: every constituent is typed, with class 0
/// meaning "not an entity".
pub fn label_constituents<F>(tree: &LexTree, mut label_scorer: F) -> Result<Prediction>
where
    F: FnMut(usize, usize, usize) -> Result<Vec<f64>>,
{
    let mut entities = Vec::new();
    for c in tree.constituents() {
        let s = label_scorer(c.start, c.end, c.head)?;
        if let Some(labels) = label_set_with_empty(&s) {
            entities.push(Entity::new(c.start, c.end, labels).with_head(c.head));
        }
    }
    sort_entities(&mut entities);
    Ok(Prediction { entities })
}

/// One-stage labeled bracketing: constituents with a non-empty channel.
pub fn bracketing_entities(b: &Bracketing) -> Prediction {
    let mut entities: Vec<Entity> = b
        .constituents
        .iter()
        .filter(|c| c.2 > 0)
        .map(|&(i, j, c)| Entity::new(i, j, vec![c - 1]))
        .collect();
    sort_entities(&mut entities);
    Prediction { entities }
}

/// One-stage labeled lexicalized tree: constituents with a non-empty channel.
pub fn labeled_tree_entities(tree: &LexTree) -> Prediction {
    let mut entities: Vec<Entity> = tree
        .constituents()
        .iter()
        .filter(|c| c.label > 0)
        .map(|c| Entity::new(c.start, c.end, vec![c.label - 1]).with_head(c.head))
        .collect();
    sort_entities(&mut entities);
    Prediction { entities }
}

/// Local decoding without parsing: every span whose entity channel beats the
/// latent channel, with its most probable head under the free chart.
pub fn local_spans(scores: &ScoreSet) -> Result<Vec<(usize, usize, usize)>> {
    let chart = inside_eisner_satta::<LogSemiring>(scores, SpanMode::Free, None)?;
    let m = backward_marginals(&chart);
    let n = scores.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            if scores.span(i, j, 1) > scores.span(i, j, 0) {
                let head = match m.head_alpha(i, j) {
                    Some(a) => i + argmax(&a),
                    None => i,
                };
                out.push((i, j, head));
            }
        }
    }
    Ok(out)
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..xs.len() {
        if xs[k] > xs[best] {
            best = k;
        }
    }
    best
}

pub(crate) fn sort_entities(entities: &mut [Entity]) {
    entities.sort_by_key(|e| (e.start, e.end));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LabelScheme;

    #[test]
    fn single_token_tree() {
        let mut s = ScoreSet::zeros(1, LabelScheme::ZeroOne);
        s.set_span(0, 0, 1, 0.5);
        let t = viterbi_lexicalized(&s, None).unwrap();
        assert_eq!(t.constituents().len(), 1);
        assert_eq!(t.constituents()[0].label, 1);
        assert_eq!(t.constituents()[0].head, 0);
        assert_eq!(t.arcs(), &[(1, 0)]);
        t.validate().unwrap();
    }

    #[test]
    fn zero_scores_tie_break() {
        let s = ScoreSet::zeros(3, LabelScheme::ZeroOne);
        let t = viterbi_lexicalized(&s, None).unwrap();
        assert_eq!(t.score(), 0.0);
        t.validate().unwrap();
        // lowest root head, lowest split, labels 0
        assert_eq!(t.constituents()[0].head, 0);
        assert_eq!(t.constituents()[1].start..=t.constituents()[1].end, 0..=0);
        assert!(t.constituents().iter().all(|c| c.label == 0));
    }

    #[test]
    fn label_decisions() {
        assert_eq!(label_set(&[1.0, -1.0, -1.0]), vec![0]);
        assert_eq!(label_set(&[-1.0, -1.0]), vec![0]);
        assert_eq!(label_set(&[-2.0, -1.0]), vec![1]);
        assert_eq!(label_set(&[2.0, 1.0, -3.0]), vec![0, 1]);
        assert_eq!(label_set_with_empty(&[1.0, -1.0]), None);
        assert_eq!(label_set_with_empty(&[-1.0, -2.0, -0.5]), Some(vec![1]));
        assert_eq!(label_set_with_empty(&[0.5, 0.2, -0.5]), Some(vec![0]));
    }

    #[test]
    fn decoded_entity_gets_its_head() {
        let mut s = ScoreSet::zeros(3, LabelScheme::ZeroOne);
        s.set_span(0, 1, 1, 4.0);
        s.set_arc(1, 0, 3.0);
        let t = viterbi_lexicalized(&s, None).unwrap();
        let p = label_entities(&t, |_, _, _| Ok(vec![-1.0, 0.3])).unwrap();
        assert_eq!(p.entities, vec![Entity::new(0, 1, vec![1]).with_head(1)]);
        assert_eq!(t.rescore(&s, None), t.score());
    }

    #[test]
    fn large_decode_penalty_forbids_shared_heads() {
        let mut s = ScoreSet::zeros(4, LabelScheme::ZeroOne);
        for (i, j) in [(0, 3), (1, 3), (2, 3), (3, 3)] {
            s.set_span(i, j, 1, 1.0);
        }
        for h in 0..3 {
            s.set_arc(3, h, 1.0);
        }
        let free = viterbi_lexicalized(&s, None).unwrap();
        let shared = |t: &LexTree| {
            let heads: Vec<usize> = t.with_label(1).map(|c| c.head).collect();
            heads.len() - heads.iter().collect::<std::collections::HashSet<_>>().len()
        };
        assert!(shared(&free) > 0);
        let everywhere = Penalty::everywhere(100.0);
        let same = viterbi_lexicalized(&s, Some(&everywhere)).unwrap();
        assert_eq!(same.constituents(), free.constituents());
        let pen = candidate_penalty(&s, 100.0);
        let hard = viterbi_lexicalized(&s, Some(&pen)).unwrap();
        hard.validate().unwrap();
        assert_eq!(hard.rescore(&s, Some(&pen)), hard.score());
        assert!(shared(&hard) < shared(&free));
    }
}

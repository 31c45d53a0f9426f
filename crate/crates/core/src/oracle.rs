//! Brute-force reference by explicit tree enumeration.
//!
//! Only usable for short sentences. Every quantity is recomputed from the
//! list of trees with plain arithmetic so it shares no code with the charts.

use crate::chart::Penalty;
use crate::error::{Error, Result};
use crate::mask::{MaskPlan, SpanMode};
use crate::types::{LabelScheme, ScoreSet};

/// Longest sentence the oracle will enumerate.
pub const ORACLE_MAX_LEN: usize = 7;

/// One constituent of a lexicalized binary tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OracleNode {
    pub start: usize,
    pub end: usize,
    pub head: usize,
    /// Parent token of `head`, `n` for the virtual root, `None` when the head
    /// continues into the enclosing constituent.
    pub attached_to: Option<usize>,
}

/// A lexicalized binary tree as its `2n - 1` constituents.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OracleTree {
    pub nodes: Vec<OracleNode>,
}

impl OracleTree {
    /// Arcs `(parent, child)` of the induced dependency tree, root included.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .filter_map(|c| c.attached_to.map(|p| (p, c.head)))
            .collect()
    }
}

fn trees_over(i: usize, k: usize) -> Vec<Vec<OracleNode>> {
    // each returned tree has its top node first, with attached_to = None
    let mut out = Vec::new();
    if i == k {
        out.push(vec![OracleNode {
            start: i,
            end: i,
            head: i,
            attached_to: None,
        }]);
        return out;
    }
    for r in i..k {
        let left = trees_over(i, r);
        let right = trees_over(r + 1, k);
        for l in &left {
            for rt in &right {
                for head_from_left in [true, false] {
                    let (lh, rh) = (l[0].head, rt[0].head);
                    let head = if head_from_left { lh } else { rh };
                    let mut nodes = vec![OracleNode {
                        start: i,
                        end: k,
                        head,
                        attached_to: None,
                    }];
                    let mut lc = l.clone();
                    let mut rc = rt.clone();
                    if head_from_left {
                        rc[0].attached_to = Some(lh);
                    } else {
                        lc[0].attached_to = Some(rh);
                    }
                    nodes.extend(lc);
                    nodes.extend(rc);
                    out.push(nodes);
                }
            }
        }
    }
    out
}

/// All lexicalized binary trees over `n` tokens.
///
/// There are `Catalan(n - 1) * 2^(n - 1)` of them.
pub fn enumerate_lex_trees(n: usize) -> Result<Vec<OracleTree>> {
    check_len(n)?;
    Ok(trees_over(0, n - 1)
        .into_iter()
        .map(|mut nodes| {
            nodes[0].attached_to = Some(n);
            OracleTree { nodes }
        })
        .collect())
}

/// All binary bracketings over `n` tokens, as span lists.
pub fn enumerate_bracketings(n: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    check_len(n)?;
    fn go(i: usize, k: usize) -> Vec<Vec<(usize, usize)>> {
        if i == k {
            return vec![vec![(i, i)]];
        }
        let mut out = Vec::new();
        for r in i..k {
            for l in go(i, r) {
                for rt in go(r + 1, k) {
                    let mut t = vec![(i, k)];
                    t.extend(l.iter().copied());
                    t.extend(rt);
                    out.push(t);
                }
            }
        }
        out
    }
    Ok(go(0, n - 1))
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n > ORACLE_MAX_LEN {
        return Err(Error::TooLong {
            n,
            max: ORACLE_MAX_LEN,
        });
    }
    Ok(())
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Channels allowed at a span, `None` if the span is banned.
fn allowed(scores: &ScoreSet, i: usize, j: usize, mode: SpanMode<'_>) -> Option<Vec<usize>> {
    let all: Vec<usize> = (0..scores.channels()).collect();
    let SpanMode::Forced(mask) = mode else {
        return Some(all);
    };
    if mask.is_banned(i, j) {
        return None;
    }
    Some(match (scores.scheme(), mask.gold_labels(i, j)) {
        (LabelScheme::ZeroOne, Some(_)) => vec![1],
        (LabelScheme::Labeled(_), Some(ls)) => ls.iter().map(|l| l + 1).collect(),
        _ => vec![0],
    })
}

/// Explicitly summed quantities of the lexicalized TreeCRF.
#[derive(Clone, Debug)]
pub struct OracleQuantities {
    pub n: usize,
    pub log_z: f64,
    /// Best score over trees with one channel chosen per constituent.
    pub max_score: f64,
    /// Number of trees with a finite score.
    pub support: usize,
    /// `[i][j][channel]`.
    pub span_marginals: Vec<f64>,
    /// `[parent][child]` with the root row last.
    pub arc_marginals: Vec<f64>,
    /// `[i][j][h]`: probability that `(i, j)` occurs with head `h`.
    pub span_head: Vec<f64>,
    /// Expected penalized-constituent count under the penalized distribution.
    pub expected_penalties: f64,
    /// `KL(q || p)`, or 0 without a penalty.
    pub kl: f64,
    pub log_z_penalized: f64,
}

impl OracleQuantities {
    /// Head distribution of span `(i, j)` given that it occurs.
    pub fn head_alpha(&self, i: usize, j: usize) -> Option<Vec<f64>> {
        let n = self.n;
        let row: Vec<f64> = (i..=j)
            .map(|h| self.span_head[(i * n + j) * n + h])
            .collect();
        let t: f64 = row.iter().sum();
        (t > 0.0).then(|| row.iter().map(|v| v / t).collect())
    }
}

/// Enumerates every tree and sums its potential directly.
///
/// A tree's potential is the sum of its arc scores plus, per constituent, the
/// log-sum of its allowed channel scores. With a penalty, `q` subtracts `c`
/// once per targeted constituent whose head also heads its parent.
pub fn oracle_quantities(
    scores: &ScoreSet,
    mode: SpanMode<'_>,
    penalty: Option<&Penalty>,
) -> Result<OracleQuantities> {
    let n = scores.n();
    check_len(n)?;
    scores.check_valid()?;
    let ch = scores.channels();
    let trees = enumerate_lex_trees(n)?;

    let mut tree_scores = Vec::with_capacity(trees.len());
    let mut tree_pens = Vec::with_capacity(trees.len());
    let mut max_score = f64::NEG_INFINITY;
    for t in &trees {
        let mut s = 0.0;
        let mut best = 0.0;
        let mut ok = true;
        for c in &t.nodes {
            match allowed(scores, c.start, c.end, mode) {
                None => ok = false,
                Some(chs) => {
                    let v: Vec<f64> = chs
                        .iter()
                        .map(|&k| scores.span(c.start, c.end, k))
                        .collect();
                    s += lse(&v);
                    best += v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
        for (p, h) in t.arcs() {
            s += scores.arc(p, h);
            best += scores.arc(p, h);
        }
        if ok {
            max_score = max_score.max(best);
        }
        let count = match penalty {
            Some(p) => t
                .nodes
                .iter()
                .filter(|c| c.attached_to.is_none() && p.targets(c.start, c.end))
                .count(),
            None => 0,
        };
        tree_scores.push(if ok { s } else { f64::NEG_INFINITY });
        tree_pens.push(count as f64);
    }
    let log_z = lse(&tree_scores);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::Annotation("no tree survives the mask".into()));
    }
    let support = tree_scores.iter().filter(|s| s.is_finite()).count();

    let mut span_marginals = vec![0.0; n * n * ch];
    let mut arc_marginals = vec![0.0; (n + 1) * n];
    let mut span_head = vec![0.0; n * n * n];
    for (t, &s) in trees.iter().zip(&tree_scores) {
        if !s.is_finite() {
            continue;
        }
        let prob = (s - log_z).exp();
        for c in &t.nodes {
            let chs = allowed(scores, c.start, c.end, mode).expect("scored tree");
            let v: Vec<f64> = chs
                .iter()
                .map(|&k| scores.span(c.start, c.end, k))
                .collect();
            let w = lse(&v);
            for (&k, x) in chs.iter().zip(&v) {
                span_marginals[(c.start * n + c.end) * ch + k] += prob * (x - w).exp();
            }
            span_head[(c.start * n + c.end) * n + c.head] += prob;
        }
        for (p, h) in t.arcs() {
            arc_marginals[p * n + h] += prob;
        }
    }

    let (mut expected_penalties, mut kl, mut log_z_penalized) = (0.0, 0.0, log_z);
    if let Some(p) = penalty {
        let q_scores: Vec<f64> = tree_scores
            .iter()
            .zip(&tree_pens)
            .map(|(s, k)| s - p.constant * k)
            .collect();
        log_z_penalized = lse(&q_scores);
        for ((qs, s), k) in q_scores.iter().zip(&tree_scores).zip(&tree_pens) {
            if !qs.is_finite() {
                continue;
            }
            let lq = qs - log_z_penalized;
            let lp = s - log_z;
            let q = lq.exp();
            expected_penalties += q * k;
            kl += q * (lq - lp);
        }
    }
    Ok(OracleQuantities {
        n,
        log_z,
        max_score,
        support,
        span_marginals,
        arc_marginals,
        span_head,
        expected_penalties,
        kl,
        log_z_penalized,
    })
}

/// `log Z` of the unlexicalized bracketing CRF by enumeration.
pub fn oracle_cyk_log_z(scores: &ScoreSet, mode: SpanMode<'_>) -> Result<f64> {
    let n = scores.n();
    let mut vals = Vec::new();
    for b in enumerate_bracketings(n)? {
        let mut s = 0.0;
        for (i, j) in b {
            match allowed(scores, i, j, mode) {
                None => s = f64::NEG_INFINITY,
                Some(chs) => {
                    let v: Vec<f64> = chs.iter().map(|&k| scores.span(i, j, k)).collect();
                    s += lse(&v);
                }
            }
        }
        vals.push(s);
    }
    Ok(lse(&vals))
}

/// True when every constituent of the tree is compatible with the mask.
pub fn tree_is_compatible(tree: &OracleTree, mask: &MaskPlan) -> bool {
    tree.nodes.iter().all(|c| !mask.is_banned(c.start, c.end))
}

/// Number of trees compatible with the mask, by enumeration.
pub fn count_compatible(n: usize, mask: &MaskPlan) -> Result<usize> {
    Ok(enumerate_lex_trees(n)?
        .iter()
        .filter(|t| tree_is_compatible(t, mask))
        .count())
}

pub fn catalan(m: usize) -> u64 {
    let mut c: u64 = 1;
    for k in 0..m as u64 {
        c = c * 2 * (2 * k + 1) / (k + 2);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_counts() {
        for n in 1..=6 {
            let expected = catalan(n - 1) * (1u64 << (n - 1));
            assert_eq!(enumerate_lex_trees(n).unwrap().len() as u64, expected);
            assert_eq!(
                enumerate_bracketings(n).unwrap().len() as u64,
                catalan(n - 1)
            );
        }
        assert_eq!(catalan(4), 14);
    }

    #[test]
    fn trees_are_well_formed() {
        for t in enumerate_lex_trees(4).unwrap() {
            assert_eq!(t.nodes.len(), 7);
            let arcs = t.arcs();
            assert_eq!(arcs.len(), 4);
            let mut children: Vec<usize> = arcs.iter().map(|a| a.1).collect();
            children.sort();
            assert_eq!(children, vec![0, 1, 2, 3]);
        }
        let distinct: std::collections::HashSet<_> =
            enumerate_lex_trees(4).unwrap().into_iter().collect();
        assert_eq!(distinct.len(), 40);
    }

    #[test]
    fn too_long_is_rejected() {
        let s = ScoreSet::zeros(8, LabelScheme::ZeroOne);
        assert!(matches!(
            oracle_quantities(&s, SpanMode::Free, None),
            Err(Error::TooLong { n: 8, .. })
        ));
    }
}

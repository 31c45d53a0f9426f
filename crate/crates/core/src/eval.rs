//! Labeled span metrics, head metrics and the error confusion matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::data::CorpusRecord;
use crate::error::{Error, Result};

/// Gold label by (predicted label or miss) counts over gold units.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    /// `counts[gold][pred]`; the last column counts gold units with no
    /// predicted entity on their span.
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn miss_column(&self) -> usize {
        self.labels.len()
    }

    pub fn row_total(&self, gold: usize) -> usize {
        self.counts[gold].iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted_units: usize,
    pub gold_units: usize,
    /// `None` when no correctly predicted multi-word span has a gold head.
    pub head_accuracy: Option<f64>,
    pub shared_head_count: usize,
    pub confusion: Confusion,
}

type Span = (usize, usize);

fn units(r: &CorpusRecord) -> BTreeSet<(Span, &str)> {
    r.entities
        .iter()
        .flat_map(|e| e.labels.iter().map(move |l| ((e.start, e.end), l.as_str())))
        .collect()
}

fn check_aligned(pred: &[CorpusRecord], gold: &[CorpusRecord]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

/// Precision, recall and F1 over (span, label) units, plus the confusion
/// matrix. Precision is 0 when nothing is predicted.
pub fn metrics_f1(pred: &[CorpusRecord], gold: &[CorpusRecord]) -> Result<EvalReport> {
    check_aligned(pred, gold)?;
    let mut tp = 0;
    let mut n_pred = 0;
    let mut n_gold = 0;
    let mut names: BTreeSet<String> = BTreeSet::new();
    for r in pred.iter().chain(gold) {
        for e in &r.entities {
            names.extend(e.labels.iter().cloned());
        }
    }
    let labels: Vec<String> = names.into_iter().collect();
    let col: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut counts = vec![vec![0; labels.len() + 1]; labels.len()];
    for (p, g) in pred.iter().zip(gold) {
        let pu = units(p);
        let gu = units(g);
        n_pred += pu.len();
        n_gold += gu.len();
        tp += pu.intersection(&gu).count();
        let mut pred_by_span: BTreeMap<Span, Vec<&str>> = BTreeMap::new();
        for (s, l) in &pu {
            pred_by_span.entry(*s).or_default().push(l);
        }
        for (s, l) in &gu {
            let row = col[l];
            let c = if pu.contains(&(*s, *l)) {
                row
            } else if let Some(ls) = pred_by_span.get(s) {
                let wrong = ls
                    .iter()
                    .find(|x| !gu.contains(&(*s, **x)))
                    .unwrap_or(&ls[0]);
                col[wrong]
            } else {
                labels.len()
            };
            counts[row][c] += 1;
        }
    }
    let precision = if n_pred == 0 {
        0.0
    } else {
        tp as f64 / n_pred as f64
    };
    let recall = if n_gold == 0 {
        0.0
    } else {
        tp as f64 / n_gold as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let (head_accuracy, shared_head_count) = head_metrics(pred, gold)?;
    Ok(EvalReport {
        precision,
        recall,
        f1,
        true_positives: tp,
        predicted_units: n_pred,
        gold_units: n_gold,
        head_accuracy,
        shared_head_count,
        confusion: Confusion { labels, counts },
    })
}

/// Head accuracy over correctly predicted multi-word spans with a gold head,
/// and the number of predicted entities sharing their head with another.
pub fn head_metrics(pred: &[CorpusRecord], gold: &[CorpusRecord]) -> Result<(Option<f64>, usize)> {
    check_aligned(pred, gold)?;
    let mut correct = 0;
    let mut total = 0;
    let mut shared = 0;
    for (p, g) in pred.iter().zip(gold) {
        let gold_heads: HashMap<Span, Option<usize>> = g
            .entities
            .iter()
            .map(|e| ((e.start, e.end), e.head))
            .collect();
        for e in &p.entities {
            if e.end == e.start {
                continue;
            }
            if let (Some(Some(gh)), Some(ph)) = (gold_heads.get(&(e.start, e.end)), e.head) {
                total += 1;
                if *gh == ph {
                    correct += 1;
                }
            }
        }
        let mut per_head: HashMap<usize, usize> = HashMap::new();
        for h in p.entities.iter().filter_map(|e| e.head) {
            *per_head.entry(h).or_default() += 1;
        }
        shared += per_head.values().filter(|&&c| c > 1).sum::<usize>();
    }
    let acc = (total > 0).then(|| correct as f64 / total as f64);
    Ok((acc, shared))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RecordEntity;

    fn rec(n: usize, ents: &[(usize, usize, &[&str], Option<usize>)]) -> CorpusRecord {
        CorpusRecord {
            tokens: (0..n).map(|k| format!("w{k}")).collect(),
            entities: ents
                .iter()
                .map(|&(s, e, ls, h)| RecordEntity {
                    start: s,
                    end: e,
                    labels: ls.iter().map(|l| l.to_string()).collect(),
                    head: h,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_predictions_score_one() {
        let g = vec![rec(3, &[(0, 1, &["A"], None), (2, 2, &["B"], None)])];
        let r = metrics_f1(&g, &g).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_predictions_score_zero() {
        let g = vec![rec(3, &[(0, 1, &["A"], None)])];
        let p = vec![rec(3, &[])];
        let r = metrics_f1(&p, &g).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.confusion.counts[0][r.confusion.miss_column()], 1);
    }

    #[test]
    fn multilabel_units() {
        let g = vec![rec(2, &[(0, 1, &["A", "B"], None)])];
        let p = vec![rec(2, &[(0, 1, &["A"], None)])];
        let r = metrics_f1(&p, &g).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        for (row, label) in r.confusion.labels.iter().enumerate() {
            let gold_units = g[0].entities[0]
                .labels
                .iter()
                .filter(|l| *l == label)
                .count();
            assert_eq!(r.confusion.row_total(row), gold_units);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(metrics_f1(&[rec(1, &[])], &[]).is_err());
    }

    #[test]
    fn head_metric_examples() {
        let single = vec![rec(2, &[(0, 0, &["A"], Some(0))])];
        assert_eq!(head_metrics(&single, &single).unwrap(), (None, 0));
        let shared = vec![rec(3, &[(0, 2, &["A"], Some(1)), (1, 2, &["A"], Some(1))])];
        assert_eq!(head_metrics(&shared, &shared).unwrap().1, 2);
        let gold = vec![rec(4, &[(0, 1, &["A"], Some(1)), (2, 3, &["A"], Some(3))])];
        let pred = vec![rec(4, &[(0, 1, &["A"], Some(1)), (2, 3, &["A"], Some(2))])];
        assert_eq!(head_metrics(&pred, &gold).unwrap().0, Some(0.5));
    }

    #[test]
    fn order_invariance() {
        let g = vec![
            rec(3, &[(0, 1, &["A"], None)]),
            rec(2, &[(1, 1, &["B"], None)]),
        ];
        let p = vec![
            rec(3, &[(0, 1, &["A"], None), (2, 2, &["B"], None)]),
            rec(2, &[]),
        ];
        let a = metrics_f1(&p, &g).unwrap();
        let rg: Vec<_> = g.iter().rev().cloned().collect();
        let mut rp: Vec<_> = p.iter().rev().cloned().collect();
        rp[1].entities.reverse();
        let b = metrics_f1(&rp, &rg).unwrap();
        assert_eq!((a.precision, a.recall, a.f1), (b.precision, b.recall, b.f1));
    }
}

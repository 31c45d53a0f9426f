//! Randomized property suite comparing the charts with brute-force enumeration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chart::{inside_eisner_satta, Penalty};
use crate::decode::{candidate_penalty, label_entities, viterbi_lexicalized_in};
use crate::error::Result;
use crate::marginals::{gold_penalty, kl_closed_form, kl_constrained, logz_marginals};
use crate::mask::{build_mask, SpanMode};
use crate::oracle::{oracle_quantities, ORACLE_MAX_LEN};
use crate::semiring::MaxSemiring;
use crate::types::{spans_cross, Entity, EntitySet, LabelScheme, ScoreSet};

/// Penalty constants swept by the KL monotonicity check.
pub const PENALTY_GRID: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

#[derive(Clone, Debug)]
pub struct CheckConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            n_min: 2,
            n_max: 5,
            trials: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed deviation (0 for boolean checks).
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub failure: Option<String>,
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    cases: usize,
    failure: Option<String>,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tracker {
            name,
            tolerance,
            worst: 0.0,
            cases: 0,
            failure: None,
        }
    }

    fn close(&mut self, a: f64, b: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        let d = (a - b).abs();
        let d = if d.is_nan() { f64::INFINITY } else { d };
        self.worst = self.worst.max(d);
        if d > self.tolerance && self.failure.is_none() {
            self.failure = Some(format!("{}: {a} vs {b}", what()));
        }
    }

    fn holds(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            passed: self.failure.is_none(),
            worst: self.worst,
            tolerance: self.tolerance,
            cases: self.cases,
            failure: self.failure,
        }
    }
}

/// Scores uniform in `[-2, 2)`.
pub fn random_scores<R: Rng>(rng: &mut R, n: usize, scheme: LabelScheme) -> ScoreSet {
    let mut s = ScoreSet::zeros(n, scheme);
    for v in s.span_data_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    for v in s.arc_data_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    s
}

/// Up to three non-crossing entities, some with two labels.
pub fn random_entities<R: Rng>(rng: &mut R, n: usize, labels: usize) -> EntitySet {
    let mut kept: Vec<Entity> = Vec::new();
    for _ in 0..rng.gen_range(0..4) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(a..n);
        if kept
            .iter()
            .all(|e| e.span() != (a, b) && !spans_cross(e.span(), (a, b)))
        {
            let mut ls = vec![rng.gen_range(0..labels)];
            if rng.gen_bool(0.2) {
                ls.push(rng.gen_range(0..labels));
            }
            kept.push(Entity::new(a, b, ls));
        }
    }
    EntitySet::new(kept, n).expect("non-crossing by construction")
}

const SCHEMES: [LabelScheme; 3] = [
    LabelScheme::ZeroOne,
    LabelScheme::Unlabeled,
    LabelScheme::Labeled(3),
];

/// Runs every check on `trials` random fixtures.
pub fn run_property_suite(cfg: &CheckConfig) -> Result<Vec<CheckResult>> {
    if cfg.n_min == 0 || cfg.n_min > cfg.n_max || cfg.n_max > ORACLE_MAX_LEN {
        return Err(crate::Error::Config(format!(
            "sentence lengths must satisfy 1 <= n_min <= n_max <= {ORACLE_MAX_LEN}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut inside = Tracker::new("inside_logz", 1e-6);
    let mut viterbi = Tracker::new("viterbi_max", 1e-9);
    let mut rescore = Tracker::new("viterbi_rescore_exact", 0.0);
    let mut marg = Tracker::new("marginals", 1e-8);
    let mut alpha_sum = Tracker::new("head_alpha_normalized", 1e-9);
    let mut alpha = Tracker::new("head_alpha_oracle", 1e-8);
    let mut kl_closed = Tracker::new("kl_semiring_vs_closed_form", 1e-8);
    let mut kl_oracle = Tracker::new("kl_vs_oracle", 1e-8);
    let mut kl_zero = Tracker::new("kl_zero_at_c0", 1e-12);
    let mut kl_sign = Tracker::new("kl_nonnegative_monotone", 1e-12);
    let mut structure = Tracker::new("tree_structure", 0.0);
    for trial in 0..cfg.trials {
        let n = cfg.n_min + trial % (cfg.n_max - cfg.n_min + 1);
        let scheme = SCHEMES[trial % SCHEMES.len()];
        let s = random_scores(&mut rng, n, scheme);
        let set = random_entities(&mut rng, n, 3);
        let mask = build_mask(&set, n)?;
        for (mode_name, mode) in [
            ("free", SpanMode::Free),
            ("masked", SpanMode::Forced(&mask)),
        ] {
            let tag = || format!("trial {trial} n={n} {scheme:?} {mode_name}");
            let o = oracle_quantities(&s, mode, None)?;
            let (z, m, _) = logz_marginals(&s, mode, None)?;
            inside.close(z, o.log_z, tag);
            let best = inside_eisner_satta::<MaxSemiring>(&s, mode, None)?.root();
            viterbi.close(best, o.max_score, tag);
            let exact_channels =
                matches!(mode, SpanMode::Free) || scheme != LabelScheme::Labeled(3);
            let tree = viterbi_lexicalized_in(&s, mode, None)?;
            if exact_channels {
                let r = tree.rescore(&s, None);
                rescore.holds(r == best, || {
                    format!("{}: rescored {r} vs root {best}", tag())
                });
            }
            structure.holds(tree.validate().is_ok(), || {
                format!("{}: {:?}", tag(), tree.validate())
            });
            for (a, b) in m.span_mu.iter().zip(&o.span_marginals) {
                marg.close(*a, *b, tag);
            }
            for (a, b) in m.arc_mu.iter().zip(&o.arc_marginals) {
                marg.close(*a, *b, tag);
            }
            if let SpanMode::Forced(_) = mode {
                for e in &set {
                    let (i, j) = e.span();
                    let a = m.head_alpha(i, j);
                    let b = o.head_alpha(i, j);
                    match (a, b) {
                        (Some(a), Some(b)) => {
                            alpha_sum.close(a.iter().sum::<f64>(), 1.0, tag);
                            for (x, y) in a.iter().zip(&b) {
                                alpha.close(*x, *y, tag);
                            }
                        }
                        (a, b) => alpha.holds(false, || format!("{}: alpha {a:?} vs {b:?}", tag())),
                    }
                }
            }
        }
        if scheme == LabelScheme::ZeroOne {
            let tree = viterbi_lexicalized_in(&s, SpanMode::Free, None)?;
            let pred = label_entities(&tree, |_, _, _| Ok(vec![1.0]))?;
            structure.holds(!pred.has_crossing(), || {
                format!("trial {trial}: crossing prediction")
            });
            let pen = candidate_penalty(&s, 0.4);
            let t2 = viterbi_lexicalized_in(&s, SpanMode::Free, Some(&pen))?;
            structure.holds(t2.validate().is_ok(), || {
                format!("trial {trial}: penalized tree invalid")
            });
        }
        let penalties: Vec<(&str, SpanMode<'_>, Penalty)> = vec![
            (
                "masked/gold",
                SpanMode::Forced(&mask),
                gold_penalty(&mask, 0.0),
            ),
            ("free/gold", SpanMode::Free, gold_penalty(&mask, 0.0)),
            ("free/everywhere", SpanMode::Free, Penalty::everywhere(0.0)),
        ];
        for (name, mode, base) in penalties {
            let tag = || format!("trial {trial} n={n} {scheme:?} {name}");
            let mut last = -1.0;
            for &c in &PENALTY_GRID {
                let mut p = base.clone();
                p.constant = c;
                let r = kl_constrained(&s, mode, &p)?;
                if c == 0.0 {
                    kl_zero.close(r.kl, 0.0, tag);
                }
                kl_sign.holds(r.kl >= 0.0 && r.kl >= last - kl_sign.tolerance, || {
                    format!("{}: KL {} after {last} at c={c}", tag(), r.kl)
                });
                last = r.kl;
                if c == 0.4 || c == 0.6 {
                    let closed = kl_closed_form(&s, mode, &p)?;
                    kl_closed.close(r.kl, closed, tag);
                    let o = oracle_quantities(&s, mode, Some(&p))?;
                    kl_oracle.close(r.kl, o.kl, tag);
                }
            }
        }
    }
    Ok(vec![
        inside.finish(),
        viterbi.finish(),
        rescore.finish(),
        marg.finish(),
        alpha_sum.finish(),
        alpha.finish(),
        kl_closed.finish(),
        kl_oracle.finish(),
        kl_zero.finish(),
        kl_sign.finish(),
        structure.finish(),
    ])
}

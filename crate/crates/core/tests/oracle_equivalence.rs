use lexcrf::chart::{inside_eisner_satta, log_partition, Penalty};
use lexcrf::cyk::{cyk_grad_logz, inside_cyk};
use lexcrf::marginals::{gold_penalty, kl_closed_form, kl_constrained, logz_marginals};
use lexcrf::mask::{build_mask, SpanMode};
use lexcrf::oracle::{count_compatible, oracle_cyk_log_z, oracle_quantities};
use lexcrf::semiring::MaxSemiring;
use lexcrf::types::{spans_cross, Entity, EntitySet, LabelScheme, ScoreSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scores(rng: &mut ChaCha8Rng, n: usize, scheme: LabelScheme) -> ScoreSet {
    let mut s = ScoreSet::zeros(n, scheme);
    for v in s.span_data_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    for v in s.arc_data_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    s
}

fn random_entities(rng: &mut ChaCha8Rng, n: usize, labels: usize) -> EntitySet {
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
    EntitySet::new(kept, n).unwrap()
}

const SCHEMES: [LabelScheme; 3] = [
    LabelScheme::ZeroOne,
    LabelScheme::Unlabeled,
    LabelScheme::Labeled(3),
];

#[test]
fn partition_and_marginals_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..120 {
        let n = 1 + trial % 6;
        let scheme = SCHEMES[trial % 3];
        let s = random_scores(&mut rng, n, scheme);
        let set = random_entities(&mut rng, n, 3);
        let mask = build_mask(&set, n).unwrap();
        for mode in [SpanMode::Free, SpanMode::Forced(&mask)] {
            let o = oracle_quantities(&s, mode, None).unwrap();
            let (z, m, g) = logz_marginals(&s, mode, None).unwrap();
            assert!(
                (z - o.log_z).abs() < 1e-9,
                "trial {trial}: {z} vs {}",
                o.log_z
            );
            let best = inside_eisner_satta::<MaxSemiring>(&s, mode, None)
                .unwrap()
                .root();
            assert!((best - o.max_score).abs() < 1e-9);
            for (k, (a, b)) in g.span.iter().zip(&o.span_marginals).enumerate() {
                assert!(
                    (a - b).abs() < 1e-9,
                    "trial {trial} {scheme:?} n={n} k={k}: {a} vs {b}"
                );
            }
            for (a, b) in m.arc_mu.iter().zip(&o.arc_marginals) {
                assert!((a - b).abs() < 1e-9);
            }
            for i in 0..n {
                for j in i..n {
                    match (m.head_alpha(i, j), o.head_alpha(i, j)) {
                        (Some(a), Some(b)) => {
                            for (x, y) in a.iter().zip(&b) {
                                assert!((x - y).abs() < 1e-8);
                            }
                        }
                        (a, b) => assert!(a.is_none() && b.is_none(), "{i},{j}: {a:?} {b:?}"),
                    }
                }
            }
        }
    }
}

#[test]
fn penalized_quantities_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..80 {
        let n = 1 + trial % 6;
        let scheme = SCHEMES[trial % 3];
        let s = random_scores(&mut rng, n, scheme);
        let set = random_entities(&mut rng, n, 3);
        let mask = build_mask(&set, n).unwrap();
        let c = rng.gen_range(0.0..1.0);
        for (mode, pen) in [
            (SpanMode::Free, Penalty::everywhere(c)),
            (SpanMode::Forced(&mask), gold_penalty(&mask, c)),
            (SpanMode::Free, gold_penalty(&mask, c)),
        ] {
            let o = oracle_quantities(&s, mode, Some(&pen)).unwrap();
            let chart =
                inside_eisner_satta::<lexcrf::semiring::LogSemiring>(&s, mode, Some(&pen)).unwrap();
            assert!((chart.root() - o.log_z_penalized).abs() < 1e-9);
            let (_, m, _) = logz_marginals(&s, mode, Some(&pen)).unwrap();
            assert!((m.expected_penalties - o.expected_penalties).abs() < 1e-9);
            let r = kl_constrained(&s, mode, &pen).unwrap();
            let closed = kl_closed_form(&s, mode, &pen).unwrap();
            assert!(
                (r.kl - o.kl).abs() < 1e-9,
                "trial {trial}: {} vs {}",
                r.kl,
                o.kl
            );
            assert!((closed - o.kl).abs() < 1e-9);
        }
    }
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..10 {
        let n = 2 + trial % 3;
        let s = random_scores(&mut rng, n, LabelScheme::ZeroOne);
        let set = random_entities(&mut rng, n, 2);
        let mask = build_mask(&set, n).unwrap();
        let pen = if set.is_empty() {
            Penalty::everywhere(0.4)
        } else {
            gold_penalty(&mask, 0.4)
        };
        let mode = SpanMode::Forced(&mask);
        let r = kl_constrained(&s, mode, &pen).unwrap();
        let eps = 1e-6;
        for k in 0..s.span_data().len() {
            let mut a = s.clone();
            a.span_data_mut()[k] += eps;
            let mut b = s.clone();
            b.span_data_mut()[k] -= eps;
            let fd = (kl_constrained(&a, mode, &pen).unwrap().kl
                - kl_constrained(&b, mode, &pen).unwrap().kl)
                / (2.0 * eps);
            assert!(
                (fd - r.grads.span[k]).abs() < 1e-6,
                "span {k}: {fd} vs {}",
                r.grads.span[k]
            );
        }
        for k in 0..s.arc_data().len() {
            let mut a = s.clone();
            a.arc_data_mut()[k] += eps;
            let mut b = s.clone();
            b.arc_data_mut()[k] -= eps;
            let fd = (kl_constrained(&a, mode, &pen).unwrap().kl
                - kl_constrained(&b, mode, &pen).unwrap().kl)
                / (2.0 * eps);
            assert!(
                (fd - r.grads.arc[k]).abs() < 1e-6,
                "arc {k}: {fd} vs {}",
                r.grads.arc[k]
            );
        }
    }
}

#[test]
fn cyk_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..60 {
        let n = 1 + trial % 6;
        let s = random_scores(&mut rng, n, SCHEMES[trial % 3]);
        let set = random_entities(&mut rng, n, 3);
        let mask = build_mask(&set, n).unwrap();
        for mode in [SpanMode::Free, SpanMode::Forced(&mask)] {
            let z = inside_cyk(&s, mode).unwrap();
            assert!((z - oracle_cyk_log_z(&s, mode).unwrap()).abs() < 1e-9);
            let (_, g) = cyk_grad_logz(&s, mode).unwrap();
            let eps = 1e-6;
            for k in 0..s.span_data().len() {
                let mut a = s.clone();
                a.span_data_mut()[k] += eps;
                let mut b = s.clone();
                b.span_data_mut()[k] -= eps;
                let fd =
                    (inside_cyk(&a, mode).unwrap() - inside_cyk(&b, mode).unwrap()) / (2.0 * eps);
                assert!((fd - g.span[k]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn masked_chart_counts_compatible_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..40 {
        let n = 1 + trial % 6;
        let set = random_entities(&mut rng, n, 2);
        let mask = build_mask(&set, n).unwrap();
        let s = ScoreSet::zeros(n, LabelScheme::Unlabeled);
        let z = log_partition(&s, SpanMode::Forced(&mask)).unwrap();
        let count = count_compatible(n, &mask).unwrap();
        assert!((z - (count as f64).ln()).abs() < 1e-9);
    }
}

#![allow(dead_code)]

use lexcrf::data::{Example, LabelInventory, Vocab};
use lexcrf::losses::{loss_label, loss_reg, loss_tree, LabelTarget};
use lexcrf::marginals::logz_marginals;
use lexcrf::mask::{build_mask, SpanMode};
use lexcrf::model::{Model, ModelDims, Staging, Variant};
use lexcrf::scorer::Params;
use lexcrf::types::{Entity, EntitySet, LabelScheme, ScoreSet, Sentence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, scheme: LabelScheme) -> ScoreSet {
    lexcrf::check::random_scores(rng, n, scheme)
}

/// Non-crossing entities with at least one member.
pub fn nonempty_entities(rng: &mut ChaCha8Rng, n: usize, labels: usize) -> EntitySet {
    loop {
        let set = lexcrf::check::random_entities(rng, n, labels);
        if !set.is_empty() {
            return set;
        }
    }
}

pub fn entities(n: usize, spans: &[(usize, usize, &[usize])]) -> EntitySet {
    EntitySet::new(
        spans
            .iter()
            .map(|&(a, b, l)| Entity::new(a, b, l.to_vec()))
            .collect(),
        n,
    )
    .unwrap()
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_differences(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|k| {
            buf[k] = x[k] + step;
            let hi = f(&buf);
            buf[k] = x[k] - step;
            let lo = f(&buf);
            buf[k] = x[k];
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

pub fn with_span(s: &ScoreSet, span: &[f64]) -> ScoreSet {
    ScoreSet::from_parts(s.n(), s.scheme(), span.to_vec(), s.arc_data().to_vec()).unwrap()
}

pub fn with_arc(s: &ScoreSet, arc: &[f64]) -> ScoreSet {
    ScoreSet::from_parts(s.n(), s.scheme(), s.span_data().to_vec(), arc.to_vec()).unwrap()
}

/// Largest absolute gap between analytic and numeric gradients on valid cells.
pub fn max_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Span cells with `i <= j`; the rest of the tensor is padding.
pub fn valid_span_mask(n: usize, channels: usize) -> Vec<bool> {
    let mut m = vec![false; n * n * channels];
    for i in 0..n {
        for j in i..n {
            for c in 0..channels {
                m[(i * n + j) * channels + c] = true;
            }
        }
    }
    m
}

pub fn tiny_vocab() -> Vocab {
    let mut toks: Vec<String> = ["<pad>", "<unk>", "<bos>", "<eos>"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    toks.extend(["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()));
    Vocab::from_tokens(toks)
}

pub fn tiny_model(variant: Variant, labels: usize, seed: u64) -> Model {
    let inv = LabelInventory::new((0..labels).map(|l| format!("L{l}")).collect());
    let dims = ModelDims {
        d_emb: 3,
        window: 1,
        hidden: 3,
        k: 3,
        k_label: 2,
    };
    let mut r = rng(seed);
    let mut m = Model::new(variant, &dims, tiny_vocab(), inv, &mut r).unwrap();
    // Larger weights so every term has a visible gradient.
    for v in m.scorer.params.data_mut() {
        *v += r.gen_range(-0.3..0.3);
    }
    m
}

/// Largest gap between analytic score gradients and central differences of
/// `f`, over valid span cells and non-self arcs.
pub fn score_gradient_gap(
    s: &ScoreSet,
    analytic_span: &[f64],
    analytic_arc: &[f64],
    step: f64,
    f: impl Fn(&ScoreSet) -> f64,
) -> f64 {
    let valid = valid_span_mask(s.n(), s.channels());
    let num_span = central_differences(s.span_data(), step, |x| f(&with_span(s, x)));
    let mut worst: f64 = 0.0;
    for (k, ok) in valid.iter().enumerate() {
        if *ok {
            worst = worst.max((num_span[k] - analytic_span[k]).abs());
        }
    }
    let num_arc = central_differences(s.arc_data(), step, |x| f(&with_arc(s, x)));
    let n = s.n();
    for p in 0..=n {
        for c in 0..n {
            if p != c {
                let k = p * n + c;
                worst = worst.max((num_arc[k] - analytic_arc[k]).abs());
            }
        }
    }
    worst
}

/// The training objective with the head weights of the label loss frozen at
/// `frozen`, assembled from the public loss pieces.
fn frozen_objective(model: &Model, ex: &Example, frozen: &[LabelTarget]) -> f64 {
    let fw = model
        .scorer
        .forward(&model.ids(ex.sentence.tokens()))
        .unwrap();
    let scores = fw.scores();
    let mask = build_mask(&ex.entities, ex.sentence.len()).unwrap();
    let v = &model.variant;
    let mut total = loss_tree(&scores, &mask).unwrap().0;
    if v.regularize {
        total += loss_reg(&scores, &mask, v.penalty).unwrap().0;
    }
    total
        + loss_label(frozen, |i, j, hs| model.scorer.label_scores(&fw, i, j, hs))
            .unwrap()
            .0
}

fn objective_value(model: &Model, ex: &Example, frozen: Option<&[LabelTarget]>) -> f64 {
    match frozen {
        Some(t) => frozen_objective(model, ex, t),
        None => {
            let mut g = Params::zeros(model.scorer.dims());
            model.objective(ex, &mut g).unwrap().total
        }
    }
}

/// Largest relative gap between the analytic parameter gradient of the
/// objective and central differences on a five-token sentence. Head weights
/// are held fixed because the objective treats them as constants.
pub fn parameter_gradient_error(variant: Variant, labels: usize, seed: u64, step: f64) -> f64 {
    let head_aware = variant.head_aware && variant.staging == Staging::TwoStageZeroOne;
    let mut model = tiny_model(variant, labels, seed);
    let sentence = Sentence::from_words(&["a", "b", "zzz", "c", "d"]).unwrap();
    let ex = Example {
        sentence,
        entities: entities(5, &[(0, 2, &[0]), (1, 2, &[1 % labels]), (4, 4, &[0])]),
    };
    let mut grads = Params::zeros(model.scorer.dims());
    let report = model.objective(&ex, &mut grads).unwrap();
    let frozen: Option<Vec<LabelTarget>> = head_aware.then(|| {
        let fw = model
            .scorer
            .forward(&model.ids(ex.sentence.tokens()))
            .unwrap();
        let mask = build_mask(&ex.entities, 5).unwrap();
        let (_, m, _) = logz_marginals(&fw.scores(), SpanMode::Forced(&mask), None).unwrap();
        ex.entities
            .iter()
            .map(|e| LabelTarget::from_alpha(e.start, e.end, e.labels.clone(), Some(&m)).unwrap())
            .collect()
    });
    if let Some(t) = &frozen {
        assert!((frozen_objective(&model, &ex, t) - report.total).abs() < 1e-10);
    }
    let base = model.scorer.params.data().to_vec();
    let mut worst: f64 = 0.0;
    for (k, &x) in base.iter().enumerate() {
        model.scorer.params.data_mut()[k] = x + step;
        let hi = objective_value(&model, &ex, frozen.as_deref());
        model.scorer.params.data_mut()[k] = x - step;
        let lo = objective_value(&model, &ex, frozen.as_deref());
        model.scorer.params.data_mut()[k] = x;
        let fd = (hi - lo) / (2.0 * step);
        let an = grads.data()[k];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
    }
    worst
}

//! Model variants, the per-sentence objective and end-to-end decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cyk::viterbi_cyk;
use crate::data::{entities_to_record, CorpusRecord, Example, LabelInventory, Vocab};
use crate::decode::{
    bracketing_entities, candidate_penalty, label_constituents, label_entities, label_set,
    label_set_with_empty, labeled_tree_entities, local_spans, sort_entities, viterbi_lexicalized,
    viterbi_lexicalized_in, Prediction,
};
use crate::error::{Error, Result};
use crate::losses::{
    loss_label, loss_reg, loss_tree_cyk, loss_tree_lexicalized, LabelTarget, LossReport,
};
use crate::mask::{build_mask, SpanMode};
use crate::scorer::{Forward, Params, Scorer, ScorerDims};
use crate::types::{spans_cross, Entity, LabelScheme, ScoreGradients};

/// Tree family used for structure scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Lexicalized trees (Eisner-Satta).
    Lexicalized,
    /// Plain binary bracketings (CYK).
    Bracketing,
}

/// How span structure and entity labels are split between the stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Staging {
    /// 0-1 labeled tree, then typing of the entity constituents.
    TwoStageZeroOne,
    /// Unlabeled tree, then typing of every constituent with an empty class.
    TwoStage,
    /// Entity labels are tree channels; no separate labeler.
    OneStage,
}

/// Ablation switches and loss settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub structure: Structure,
    pub staging: Staging,
    /// Weight labeling terms by head marginals instead of uniformly.
    pub head_aware: bool,
    pub regularize: bool,
    /// Decode with a tree; `false` decides spans locally.
    pub parsing: bool,
    /// Training penalty constant of the head regularizer.
    pub penalty: f64,
    /// Decode-time penalty on entity candidates whose head continues upward.
    pub decode_penalty: f64,
    pub w_tree: f64,
    pub w_label: f64,
    pub w_reg: f64,
}

impl Default for Variant {
    fn default() -> Self {
        Variant {
            structure: Structure::Lexicalized,
            staging: Staging::TwoStageZeroOne,
            head_aware: true,
            regularize: true,
            parsing: true,
            penalty: crate::chart::DEFAULT_PENALTY,
            decode_penalty: 0.0,
            w_tree: 1.0,
            w_label: 1.0,
            w_reg: 1.0,
        }
    }
}

impl Variant {
    pub fn scheme(&self, labels: usize) -> LabelScheme {
        match self.staging {
            Staging::TwoStageZeroOne => LabelScheme::ZeroOne,
            Staging::TwoStage => LabelScheme::Unlabeled,
            Staging::OneStage => LabelScheme::Labeled(labels),
        }
    }

    pub fn label_classes(&self, labels: usize) -> usize {
        match self.staging {
            Staging::TwoStageZeroOne => labels,
            Staging::TwoStage => labels + 1,
            Staging::OneStage => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("penalty", self.penalty),
            ("decode_penalty", self.decode_penalty),
            ("w_tree", self.w_tree),
            ("w_label", self.w_label),
            ("w_reg", self.w_reg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        if !self.parsing && self.staging != Staging::TwoStageZeroOne {
            return Err(Error::Config(
                "local span decoding needs the 0-1 label scheme".into(),
            ));
        }
        Ok(())
    }

    fn uses_reg(&self) -> bool {
        self.regularize
            && self.structure == Structure::Lexicalized
            && self.penalty > 0.0
            && self.w_reg > 0.0
    }
}

/// Encoder and projection sizes chosen by the user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_emb: usize,
    pub window: usize,
    pub hidden: usize,
    pub k: usize,
    pub k_label: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_emb: 32,
            window: 1,
            hidden: 48,
            k: 32,
            k_label: 32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub variant: Variant,
    pub scorer: Scorer,
    pub vocab: Vocab,
    pub labels: LabelInventory,
}

impl Model {
    pub fn new<R: Rng>(
        variant: Variant,
        dims: &ModelDims,
        vocab: Vocab,
        labels: LabelInventory,
        rng: &mut R,
    ) -> Result<Self> {
        variant.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("the label inventory is empty".into()));
        }
        let sd = ScorerDims {
            vocab: vocab.len(),
            d_emb: dims.d_emb,
            window: dims.window,
            hidden: dims.hidden,
            k: dims.k,
            k_label: dims.k_label,
            span_channels: variant.scheme(labels.len()).channels(),
            label_classes: variant.label_classes(labels.len()),
        };
        sd.validate()?;
        let params = Params::init(&sd, rng);
        Self::from_parts(variant, params, vocab, labels)
    }

    pub fn from_parts(
        variant: Variant,
        params: Params,
        vocab: Vocab,
        labels: LabelInventory,
    ) -> Result<Self> {
        variant.validate()?;
        let d = params.dims();
        if d.vocab != vocab.len() || d.label_classes != variant.label_classes(labels.len()) {
            return Err(Error::Shape(
                "parameters do not match the vocabulary or label inventory".into(),
            ));
        }
        let scorer = Scorer::new(params, variant.scheme(labels.len()))?;
        Ok(Model {
            variant,
            scorer,
            vocab,
            labels,
        })
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.ids(tokens)
    }

    /// Loss of one annotated sentence; parameter gradients are added to `grads`.
    pub fn objective(&self, example: &Example, grads: &mut Params) -> Result<LossReport> {
        let v = &self.variant;
        let n = example.sentence.len();
        let fw = self.scorer.forward(&self.ids(example.sentence.tokens()))?;
        let scores = fw.scores();
        let mask = build_mask(&example.entities, n)?;

        let (l_tree, tree_grads, masked) = match v.structure {
            Structure::Lexicalized => {
                let t = loss_tree_lexicalized(&scores, &mask)?;
                (t.value, t.grads, Some(t.masked))
            }
            Structure::Bracketing => {
                let (value, g) = loss_tree_cyk(&scores, &mask)?;
                (value, g, None)
            }
        };
        let mut d = ScoreGradients::zeros_like(&scores);
        d.add_scaled(&tree_grads, v.w_tree);

        let mut l_reg = 0.0;
        if v.uses_reg() {
            let (value, g) = loss_reg(&scores, &mask, v.penalty)?;
            l_reg = value;
            d.add_scaled(&g, v.w_reg);
        }

        let alpha = if v.head_aware { masked.as_ref() } else { None };
        let mut targets = Vec::new();
        match v.staging {
            Staging::OneStage => {}
            Staging::TwoStageZeroOne => {
                for e in &example.entities {
                    targets.push(LabelTarget::from_alpha(
                        e.start,
                        e.end,
                        e.labels.clone(),
                        alpha,
                    )?);
                }
            }
            Staging::TwoStage => {
                for e in &example.entities {
                    let omega = e.labels.iter().map(|l| l + 1).collect();
                    targets.push(LabelTarget::from_alpha(e.start, e.end, omega, alpha)?);
                }
                match v.structure {
                    Structure::Lexicalized => {
                        let tree = viterbi_lexicalized_in(&scores, SpanMode::Forced(&mask), None)?;
                        for c in tree.constituents() {
                            if !mask.is_gold(c.start, c.end) {
                                targets.push(LabelTarget {
                                    start: c.start,
                                    end: c.end,
                                    omega: vec![0],
                                    heads: vec![(c.head, 1.0)],
                                });
                            }
                        }
                    }
                    Structure::Bracketing => {
                        let b = viterbi_cyk(&scores, SpanMode::Forced(&mask))?;
                        for &(i, j, _) in &b.constituents {
                            if !mask.is_gold(i, j) {
                                targets.push(LabelTarget::from_alpha(i, j, vec![0], None)?);
                            }
                        }
                    }
                }
            }
        }
        let (l_label, mut label_grads) = if targets.is_empty() || v.w_label == 0.0 {
            (0.0, Vec::new())
        } else {
            loss_label(&targets, |i, j, heads| {
                self.scorer.label_scores(&fw, i, j, heads)
            })?
        };
        for lg in &mut label_grads {
            for (_, g) in &mut lg.heads {
                g.iter_mut().for_each(|x| *x *= v.w_label);
            }
        }
        self.scorer
            .backward(&fw, &d.span, &d.arc, &label_grads, grads)?;
        let report = LossReport {
            l_tree,
            l_label,
            l_reg,
            total: v.w_tree * l_tree + v.w_label * l_label + v.w_reg * l_reg,
        };
        if !report.total.is_finite() {
            return Err(Error::Internal(format!("non-finite loss {report:?}")));
        }
        Ok(report)
    }

    /// Predicted entities of one sentence.
    pub fn decode(&self, tokens: &[String]) -> Result<Prediction> {
        let fw = self.scorer.forward(&self.ids(tokens))?;
        self.decode_forward(&fw)
    }

    pub fn decode_forward(&self, fw: &Forward) -> Result<Prediction> {
        let v = &self.variant;
        let scores = fw.scores();
        let label = |i: usize, j: usize, h: usize| self.scorer.score_label(fw, i, j, h);
        let prediction = match (v.structure, v.staging) {
            (_, Staging::TwoStageZeroOne) if !v.parsing => {
                let mut spans: Vec<(f64, usize, usize, usize)> = local_spans(&scores)?
                    .into_iter()
                    .map(|(i, j, h)| (scores.span(i, j, 1) - scores.span(i, j, 0), i, j, h))
                    .collect();
                spans.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
                let mut entities: Vec<Entity> = Vec::new();
                for (_, i, j, h) in spans {
                    if entities.iter().any(|e| spans_cross(e.span(), (i, j))) {
                        continue;
                    }
                    let labels = match v.structure {
                        Structure::Lexicalized => label_set(&label(i, j, h)?),
                        Structure::Bracketing => label_set(&self.head_averaged(fw, i, j)?),
                    };
                    let mut e = Entity::new(i, j, labels);
                    if v.structure == Structure::Lexicalized {
                        e.head = Some(h);
                    }
                    entities.push(e);
                }
                sort_entities(&mut entities);
                Prediction { entities }
            }
            (Structure::Lexicalized, Staging::TwoStageZeroOne) => {
                let penalty =
                    (v.decode_penalty > 0.0).then(|| candidate_penalty(&scores, v.decode_penalty));
                let tree = viterbi_lexicalized(&scores, penalty.as_ref())?;
                label_entities(&tree, label)?
            }
            (Structure::Lexicalized, Staging::TwoStage) => {
                let tree = viterbi_lexicalized(&scores, None)?;
                label_constituents(&tree, label)?
            }
            (Structure::Lexicalized, Staging::OneStage) => {
                labeled_tree_entities(&viterbi_lexicalized(&scores, None)?)
            }
            (Structure::Bracketing, Staging::OneStage) => {
                bracketing_entities(&viterbi_cyk(&scores, SpanMode::Free)?)
            }
            (Structure::Bracketing, staging) => {
                let b = viterbi_cyk(&scores, SpanMode::Free)?;
                let mut entities = Vec::new();
                for &(i, j, ch) in &b.constituents {
                    if staging == Staging::TwoStageZeroOne && ch != 1 {
                        continue;
                    }
                    let s = self.head_averaged(fw, i, j)?;
                    let labels = match staging {
                        Staging::TwoStageZeroOne => Some(label_set(&s)),
                        _ => label_set_with_empty(&s),
                    };
                    if let Some(labels) = labels {
                        entities.push(Entity::new(i, j, labels));
                    }
                }
                sort_entities(&mut entities);
                Prediction { entities }
            }
        };
        Ok(prediction)
    }

    /// Label scores averaged over every head position of a span.
    fn head_averaged(&self, fw: &Forward, i: usize, j: usize) -> Result<Vec<f64>> {
        let heads: Vec<usize> = (i..=j).collect();
        let all = self.scorer.label_scores(fw, i, j, &heads)?;
        let mut mean = vec![0.0; all[0].len()];
        for s in &all {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x / heads.len() as f64;
            }
        }
        Ok(mean)
    }

    pub fn predict_record(&self, tokens: &[String]) -> Result<CorpusRecord> {
        let p = self.decode(tokens)?;
        Ok(entities_to_record(tokens, &p.entities, &self.labels))
    }
}

//! Core domain types: sentences, observed entity sets and score tensors.
//!
//! Spans are inclusive, 0-based token ranges `(start, end)`.

use crate::error::{Error, Result};

/// A tokenized sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(pos) = tokens.iter().position(|t| t.is_empty()) {
            return Err(Error::Annotation(format!("token {pos} is empty")));
        }
        Ok(Sentence { tokens })
    }

    pub fn from_words(words: &[&str]) -> Result<Self> {
        Self::new(words.iter().map(|w| w.to_string()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One observed entity: an inclusive span, its label ids and an optional gold head.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Entity {
    pub start: usize,
    pub end: usize,
    pub labels: Vec<usize>,
    pub head: Option<usize>,
}

impl Entity {
    pub fn new(start: usize, end: usize, labels: Vec<usize>) -> Self {
        let mut labels = labels;
        labels.sort_unstable();
        labels.dedup();
        Entity {
            start,
            end,
            labels,
            head: None,
        }
    }

    pub fn with_head(mut self, head: usize) -> Self {
        self.head = Some(head);
        self
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }
}

/// True when the two inclusive spans overlap without one containing the other.
pub fn spans_cross(a: (usize, usize), b: (usize, usize)) -> bool {
    (a.0 < b.0 && b.0 <= a.1 && a.1 < b.1) || (b.0 < a.0 && a.0 <= b.1 && b.1 < a.1)
}

/// The observed entities of a sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntitySet {
    entities: Vec<Entity>,
}

impl EntitySet {
    /// Builds a set and checks it against a sentence of length `n`.
    pub fn new(entities: Vec<Entity>, n: usize) -> Result<Self> {
        let set = EntitySet { entities };
        set.validate(n)?;
        Ok(set)
    }

    pub fn empty() -> Self {
        EntitySet::default()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (k, e) in self.entities.iter().enumerate() {
            if e.start > e.end || e.end >= n {
                return Err(Error::Annotation(format!(
                    "entity {k} span ({}, {}) is invalid for a sentence of {n} tokens",
                    e.start, e.end
                )));
            }
            if e.labels.is_empty() {
                return Err(Error::Annotation(format!("entity {k} has no labels")));
            }
            if let Some(h) = e.head {
                if h < e.start || h > e.end {
                    return Err(Error::Annotation(format!(
                        "entity {k} head {h} lies outside ({}, {})",
                        e.start, e.end
                    )));
                }
            }
        }
        for a in 0..self.entities.len() {
            for b in a + 1..self.entities.len() {
                let (x, y) = (self.entities[a].span(), self.entities[b].span());
                if x == y {
                    return Err(Error::Annotation(format!(
                        "duplicate entity span ({}, {})",
                        x.0, x.1
                    )));
                }
                if spans_cross(x, y) {
                    return Err(Error::Annotation(format!(
                        "entities ({}, {}) and ({}, {}) cross",
                        x.0, x.1, y.0, y.1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Entity> {
        self.entities.iter()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, start: usize, end: usize) -> Option<&Entity> {
        self.entities
            .iter()
            .find(|e| e.start == start && e.end == end)
    }

    pub fn into_vec(self) -> Vec<Entity> {
        self.entities
    }
}

impl<'a> IntoIterator for &'a EntitySet {
    type Item = &'a Entity;
    type IntoIter = std::slice::Iter<'a, Entity>;

    fn into_iter(self) -> Self::IntoIter {
        self.entities.iter()
    }
}

/// How the span-score channels are interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelScheme {
    /// Two channels: 0 = latent span, 1 = entity span.
    ZeroOne,
    /// A single unlabeled channel.
    Unlabeled,
    /// Channel 0 is the empty label, channel `1 + l` is entity label `l`.
    Labeled(usize),
}

impl LabelScheme {
    pub fn channels(self) -> usize {
        match self {
            LabelScheme::ZeroOne => 2,
            LabelScheme::Unlabeled => 1,
            LabelScheme::Labeled(labels) => labels + 1,
        }
    }
}

/// Span and arc log-potentials for one sentence.
///
/// `span` is laid out `[i][j][channel]` over an `n x n` grid (only `i <= j`
/// is meaningful); `arc` is `[parent][child]` with `n + 1` rows, the last
/// row holding the virtual-root attachment scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    n: usize,
    scheme: LabelScheme,
    span: Vec<f64>,
    arc: Vec<f64>,
}

impl ScoreSet {
    pub fn zeros(n: usize, scheme: LabelScheme) -> Self {
        ScoreSet {
            n,
            scheme,
            span: vec![0.0; n * n * scheme.channels()],
            arc: vec![0.0; (n + 1) * n],
        }
    }

    pub fn from_parts(
        n: usize,
        scheme: LabelScheme,
        span: Vec<f64>,
        arc: Vec<f64>,
    ) -> Result<Self> {
        if span.len() != n * n * scheme.channels() {
            return Err(Error::Shape(format!(
                "span tensor has {} entries, expected {}",
                span.len(),
                n * n * scheme.channels()
            )));
        }
        if arc.len() != (n + 1) * n {
            return Err(Error::Shape(format!(
                "arc tensor has {} entries, expected {}",
                arc.len(),
                (n + 1) * n
            )));
        }
        Ok(ScoreSet {
            n,
            scheme,
            span,
            arc,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scheme(&self) -> LabelScheme {
        self.scheme
    }

    pub fn channels(&self) -> usize {
        self.scheme.channels()
    }

    /// Row index of the virtual root in the arc tensor.
    pub fn root(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn span_index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.n + j) * self.channels() + c
    }

    #[inline]
    pub fn span(&self, i: usize, j: usize, c: usize) -> f64 {
        self.span[self.span_index(i, j, c)]
    }

    #[inline]
    pub fn span_channels(&self, i: usize, j: usize) -> &[f64] {
        let c = self.channels();
        let at = (i * self.n + j) * c;
        &self.span[at..at + c]
    }

    pub fn set_span(&mut self, i: usize, j: usize, c: usize, value: f64) {
        let at = self.span_index(i, j, c);
        self.span[at] = value;
    }

    #[inline]
    pub fn arc(&self, parent: usize, child: usize) -> f64 {
        self.arc[parent * self.n + child]
    }

    pub fn set_arc(&mut self, parent: usize, child: usize, value: f64) {
        self.arc[parent * self.n + child] = value;
    }

    pub fn span_data(&self) -> &[f64] {
        &self.span
    }

    pub fn span_data_mut(&mut self) -> &mut [f64] {
        &mut self.span
    }

    pub fn arc_data(&self) -> &[f64] {
        &self.arc
    }

    pub fn arc_data_mut(&mut self) -> &mut [f64] {
        &mut self.arc
    }

    /// Rejects NaN entries among the meaningful cells.
    pub fn check_valid(&self) -> Result<()> {
        let c = self.channels();
        for i in 0..self.n {
            for j in i..self.n {
                for ch in 0..c {
                    if self.span(i, j, ch).is_nan() {
                        return Err(Error::InvalidScore(format!("span ({i}, {j}, {ch}) is NaN")));
                    }
                }
            }
        }
        for p in 0..=self.n {
            for h in 0..self.n {
                if p != h && self.arc(p, h).is_nan() {
                    return Err(Error::InvalidScore(format!("arc ({p} -> {h}) is NaN")));
                }
            }
        }
        Ok(())
    }
}

/// Gradients with the same layout as a [`ScoreSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGradients {
    n: usize,
    channels: usize,
    pub span: Vec<f64>,
    pub arc: Vec<f64>,
}

impl ScoreGradients {
    pub fn zeros(n: usize, channels: usize) -> Self {
        ScoreGradients {
            n,
            channels,
            span: vec![0.0; n * n * channels],
            arc: vec![0.0; (n + 1) * n],
        }
    }

    pub fn zeros_like(scores: &ScoreSet) -> Self {
        Self::zeros(scores.n(), scores.channels())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn span(&self, i: usize, j: usize, c: usize) -> f64 {
        self.span[(i * self.n + j) * self.channels + c]
    }

    #[inline]
    pub fn span_mut(&mut self, i: usize, j: usize, c: usize) -> &mut f64 {
        &mut self.span[(i * self.n + j) * self.channels + c]
    }

    #[inline]
    pub fn arc(&self, parent: usize, child: usize) -> f64 {
        self.arc[parent * self.n + child]
    }

    #[inline]
    pub fn arc_mut(&mut self, parent: usize, child: usize) -> &mut f64 {
        &mut self.arc[parent * self.n + child]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ScoreGradients, scale: f64) {
        for (a, b) in self.span.iter_mut().zip(&other.span) {
            *a += scale * b;
        }
        for (a, b) in self.arc.iter_mut().zip(&other.arc) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.span
            .iter()
            .chain(&self.arc)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

//! Synthetic nested-entity corpus from a head-driven template grammar.
//!
//! The entity type is a function of the head token; nesting arises from
//! `of` attachments ("the mayor of the capital of france") and place-name
//! premodifiers ("paris university").

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CorpusRecord, RecordEntity};
use crate::error::{Error, Result};

pub const MAX_SYNTH_LEN: usize = 12;

const SURNAMES: &[&str] = &[
    "smith", "jones", "garcia", "chen", "patel", "novak", "okafor", "silva", "khan", "meyer",
];
const FIRST: &[&str] = &["john", "mary", "ana", "li", "omar", "eva"];
const TITLES: &[&str] = &["dr", "mr", "ms", "judge"];
const ROLES: &[&str] = &["mayor", "president", "minister", "director", "governor"];
const ORG_NOUNS: &[&str] = &[
    "bank",
    "university",
    "council",
    "ministry",
    "museum",
    "court",
];
const ORG_NAMES: &[&str] = &["acme", "globex", "initech", "umbrella"];
const ORG_SUFFIX: &[&str] = &["corp", "group", "airlines"];
const PLACES: &[&str] = &[
    "paris", "london", "berlin", "tokyo", "france", "brazil", "kenya", "canada",
];
const GEO_NAMES: &[&str] = &["nile", "alpine", "amazon", "sahara", "rocky"];
const GEO_NOUNS: &[&str] = &["river", "mountains", "desert", "valley"];
const REGIONS: &[&str] = &["north", "south", "coast"];
const VERBS: &[&str] = &[
    "visited",
    "praised",
    "met",
    "criticized",
    "joined",
    "left",
    "funded",
    "described",
];
const OBJECTS: &[&str] = &[
    "the report",
    "a deal",
    "the plan",
    "new talks",
    "the budget",
];
const ADVERBS: &[&str] = &["yesterday", "today", "again", "quietly"];
const PREPS: &[&str] = &["in", "near", "with"];

#[derive(Default)]
struct Builder {
    tokens: Vec<String>,
    entities: Vec<RecordEntity>,
}

impl Builder {
    fn word(&mut self, w: &str) -> usize {
        for part in w.split(' ') {
            self.tokens.push(part.to_string());
        }
        self.tokens.len() - 1
    }

    fn entity(&mut self, start: usize, labels: &[&str], head: usize) {
        self.entities.push(RecordEntity {
            start,
            end: self.tokens.len() - 1,
            labels: labels.iter().map(|l| l.to_string()).collect(),
            head: Some(head),
        });
    }
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("lexicon lists are non-empty")
}

/// Geo-political or location phrase, possibly nested.
fn place<R: Rng>(b: &mut Builder, rng: &mut R, depth: usize) {
    let start = b.tokens.len();
    match rng.gen_range(0..11) {
        0..=4 => {
            let h = b.word(pick(rng, PLACES));
            b.entity(start, &["GPE"], h);
        }
        6 => {
            b.word("the");
            let h = b.word("capital");
            if depth < 2 && rng.gen_bool(0.5) {
                b.word("of");
                place(b, rng, depth + 1);
            }
            b.entity(start, &["GPE", "LOC"], h);
        }
        7 | 8 => {
            b.word("the");
            b.word(pick(rng, GEO_NAMES));
            let h = b.word(pick(rng, GEO_NOUNS));
            b.entity(start, &["LOC"], h);
        }
        5 => {
            let inner = b.tokens.len();
            let ih = b.word(pick(rng, PLACES));
            b.entity(inner, &["GPE"], ih);
            let h = b.word(pick(rng, REGIONS));
            b.entity(start, &["LOC"], h);
        }
        _ => {
            b.word("the");
            let h = b.word(pick(rng, REGIONS));
            b.word("of");
            let inner = b.tokens.len();
            let ih = b.word(pick(rng, PLACES));
            b.entity(inner, &["GPE"], ih);
            b.entity(start, &["LOC"], h);
        }
    }
}

fn organization<R: Rng>(b: &mut Builder, rng: &mut R, depth: usize) {
    let start = b.tokens.len();
    if rng.gen_bool(0.25) {
        let inner = b.tokens.len();
        let ih = b.word(pick(rng, PLACES));
        b.entity(inner, &["GPE"], ih);
        let h = b.word(pick(rng, ORG_NOUNS));
        b.entity(start, &["ORG"], h);
        return;
    }
    if rng.gen_bool(0.35) {
        b.word(pick(rng, ORG_NAMES));
        let h = b.word(pick(rng, ORG_SUFFIX));
        b.entity(start, &["ORG"], h);
        return;
    }
    b.word("the");
    let h = b.word(pick(rng, ORG_NOUNS));
    if depth < 2 && rng.gen_bool(0.6) {
        b.word("of");
        place(b, rng, depth + 1);
    }
    b.entity(start, &["ORG"], h);
}

fn person<R: Rng>(b: &mut Builder, rng: &mut R, depth: usize) {
    let start = b.tokens.len();
    if depth < 2 && rng.gen_bool(0.35) {
        b.word("the");
        let h = b.word(pick(rng, ROLES));
        b.word("of");
        if rng.gen_bool(0.6) {
            place(b, rng, depth + 1);
        } else {
            organization(b, rng, depth + 1);
        }
        b.entity(start, &["PER"], h);
        return;
    }
    if rng.gen_bool(0.2) {
        let inner = b.tokens.len();
        let ih = b.word(pick(rng, PLACES));
        b.entity(inner, &["GPE"], ih);
        b.word(pick(rng, ROLES));
        let h = b.word(pick(rng, SURNAMES));
        b.entity(start, &["PER"], h);
        return;
    }
    if rng.gen_bool(0.4) {
        b.word(pick(rng, TITLES));
    }
    if rng.gen_bool(0.5) {
        b.word(pick(rng, FIRST));
    }
    let h = b.word(pick(rng, SURNAMES));
    b.entity(start, &["PER"], h);
}

fn noun_phrase<R: Rng>(b: &mut Builder, rng: &mut R) {
    match rng.gen_range(0..3) {
        0 => person(b, rng, 0),
        1 => organization(b, rng, 0),
        _ => place(b, rng, 0),
    }
}

fn sentence<R: Rng>(rng: &mut R) -> Builder {
    let mut b = Builder::default();
    noun_phrase(&mut b, rng);
    b.word(pick(rng, VERBS));
    if rng.gen_bool(0.75) {
        noun_phrase(&mut b, rng);
    } else {
        b.word(pick(rng, OBJECTS));
    }
    if rng.gen_bool(0.3) {
        b.word(pick(rng, PREPS));
        place(&mut b, rng, 1);
    }
    if rng.gen_bool(0.3) {
        b.word(pick(rng, ADVERBS));
    }
    b
}

/// Deterministic corpus of `size` sentences of at most 12 tokens.
pub fn generate_synthetic_corpus(seed: u64, size: usize) -> Result<Vec<CorpusRecord>> {
    if size == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let b = sentence(&mut rng);
        if b.tokens.len() > MAX_SYNTH_LEN {
            continue;
        }
        let mut entities = b.entities;
        entities.sort_by_key(|e| (e.start, std::cmp::Reverse(e.end)));
        out.push(CorpusRecord {
            tokens: b.tokens,
            entities,
        });
    }
    Ok(out)
}

/// Train, dev and test splits drawn from one stream.
pub fn generate_splits(
    seed: u64,
    train: usize,
    dev: usize,
    test: usize,
) -> Result<(Vec<CorpusRecord>, Vec<CorpusRecord>, Vec<CorpusRecord>)> {
    let mut all = generate_synthetic_corpus(seed, train + dev + test)?;
    let test_set = all.split_off(train + dev);
    let dev_set = all.split_off(train);
    Ok((all, dev_set, test_set))
}

/// Whether a record has an entity strictly inside another.
pub fn has_nested(r: &CorpusRecord) -> bool {
    r.entities.iter().any(|a| {
        r.entities
            .iter()
            .any(|b| (a.start, a.end) != (b.start, b.end) && a.start <= b.start && b.end <= a.end)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_valid_nested_and_reproducible() {
        let a = generate_synthetic_corpus(7, 500).unwrap();
        assert_eq!(a, generate_synthetic_corpus(7, 500).unwrap());
        assert_ne!(a, generate_synthetic_corpus(8, 500).unwrap());
        for r in &a {
            r.validate().unwrap();
            assert!(r.tokens.len() <= MAX_SYNTH_LEN);
            for e in &r.entities {
                let h = e.head.unwrap();
                assert!(e.start <= h && h <= e.end);
            }
        }
        let nested = a.iter().filter(|r| has_nested(r)).count();
        assert!(nested as f64 >= 0.3 * a.len() as f64, "{nested}");
        assert!(a
            .iter()
            .any(|r| r.entities.iter().any(|e| e.labels.len() > 1)));
    }

    #[test]
    fn gold_heads_are_never_shared() {
        for r in generate_synthetic_corpus(3, 300).unwrap() {
            let mut heads: Vec<usize> = r.entities.iter().filter_map(|e| e.head).collect();
            let n = heads.len();
            heads.sort_unstable();
            heads.dedup();
            assert_eq!(heads.len(), n);
        }
    }
}

//! JSONL corpora, label inventories and vocabularies.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::{BOS, EOS, PAD, UNK};
use crate::types::{Entity, EntitySet, Sentence};

/// One entity as stored on disk; `end` is inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntity {
    pub start: usize,
    pub end: usize,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
}

/// One sentence as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<RecordEntity>,
}

impl CorpusRecord {
    /// Checks the entity-set invariants without a label inventory.
    pub fn validate(&self) -> Result<()> {
        Sentence::new(self.tokens.clone())?;
        let mut names: Vec<&str> = self
            .entities
            .iter()
            .flat_map(|e| e.labels.iter().map(String::as_str))
            .collect();
        names.sort_unstable();
        names.dedup();
        let local: Vec<Entity> = self
            .entities
            .iter()
            .map(|e| {
                let ids = e
                    .labels
                    .iter()
                    .map(|l| names.binary_search(&l.as_str()).unwrap())
                    .collect();
                let mut ent = Entity::new(e.start, e.end, ids);
                ent.head = e.head;
                ent
            })
            .collect();
        EntitySet::new(local, self.tokens.len())?;
        Ok(())
    }
}

/// Reads and validates a JSONL corpus; blank lines are skipped.
pub fn load_jsonl(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?;
        record.validate().map_err(|e| Error::Validation {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn write_records<W: Write>(w: &mut W, records: &[CorpusRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r).map_err(|e| Error::Internal(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Sorted entity label names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInventory {
    names: Vec<String>,
}

impl LabelInventory {
    pub fn new(names: Vec<String>) -> Self {
        let set: BTreeSet<String> = names.into_iter().collect();
        LabelInventory {
            names: set.into_iter().collect(),
        }
    }

    pub fn from_records(records: &[CorpusRecord]) -> Self {
        Self::new(
            records
                .iter()
                .flat_map(|r| r.entities.iter().flat_map(|e| e.labels.iter().cloned()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }
}

/// Token vocabulary with the reserved ids of the scorer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build(records: &[CorpusRecord], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in records {
            for t in &r.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<&str> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .map(|(t, _)| t)
            .collect();
        kept.sort_unstable();
        let mut tokens: Vec<String> = ["<pad>", "<unk>", "<bos>", "<eos>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(kept.into_iter().map(String::from));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) if i > EOS => i,
            _ => UNK,
        }
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

const _: () = assert!(PAD == 0 && UNK == 1 && BOS == 2 && EOS == 3);

/// A record resolved against a label inventory.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub sentence: Sentence,
    pub entities: EntitySet,
}

impl Example {
    pub fn from_record(record: &CorpusRecord, labels: &LabelInventory) -> Result<Self> {
        let sentence = Sentence::new(record.tokens.clone())?;
        let mut ents = Vec::with_capacity(record.entities.len());
        for e in &record.entities {
            let mut ids = Vec::with_capacity(e.labels.len());
            for l in &e.labels {
                ids.push(labels.id(l).ok_or_else(|| {
                    Error::Annotation(format!("label {l:?} is not in the inventory"))
                })?);
            }
            let mut ent = Entity::new(e.start, e.end, ids);
            ent.head = e.head;
            ents.push(ent);
        }
        let entities = EntitySet::new(ents, sentence.len())?;
        Ok(Example { sentence, entities })
    }

    pub fn to_record(&self, labels: &LabelInventory) -> CorpusRecord {
        entities_to_record(self.sentence.tokens(), self.entities.iter(), labels)
    }
}

pub fn entities_to_record<'a>(
    tokens: &[String],
    entities: impl IntoIterator<Item = &'a Entity>,
    labels: &LabelInventory,
) -> CorpusRecord {
    CorpusRecord {
        tokens: tokens.to_vec(),
        entities: entities
            .into_iter()
            .map(|e| RecordEntity {
                start: e.start,
                end: e.end,
                labels: e
                    .labels
                    .iter()
                    .map(|&l| labels.name(l).to_string())
                    .collect(),
                head: e.head,
            })
            .collect(),
    }
}

pub fn resolve(records: &[CorpusRecord], labels: &LabelInventory) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| Example::from_record(r, labels))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tokens: &[&str], ents: &[(usize, usize, &[&str])]) -> CorpusRecord {
        CorpusRecord {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            entities: ents
                .iter()
                .map(|&(s, e, ls)| RecordEntity {
                    start: s,
                    end: e,
                    labels: ls.iter().map(|l| l.to_string()).collect(),
                    head: None,
                })
                .collect(),
        }
    }

    #[test]
    fn round_trip_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let mut r = rec(
            &["the", "city", "of", "Paris"],
            &[(0, 3, &["GPE"]), (3, 3, &["GPE", "LOC"])],
        );
        r.entities[0].head = Some(1);
        write_jsonl(&p, &[r.clone()]).unwrap();
        assert_eq!(load_jsonl(&p).unwrap(), vec![r]);
        let empty = dir.path().join("e.jsonl");
        std::fs::File::create(&empty).unwrap();
        assert!(load_jsonl(&empty).unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, r#"{{"tokens":["a"],"entities":[]}}"#).unwrap();
        writeln!(
            f,
            r#"{{"tokens":["a","b"],"entities":[{{"start":1,"end":0,"labels":["X"]}}]}}"#
        )
        .unwrap();
        match load_jsonl(&p) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let q = dir.path().join("junk.jsonl");
        std::fs::write(&q, "{\"tokens\": [\n").unwrap();
        assert!(matches!(load_jsonl(&q), Err(Error::Parse { line: 1, .. })));
        let c = dir.path().join("cross.jsonl");
        std::fs::write(&c, r#"{"tokens":["a","b","c"],"entities":[{"start":0,"end":1,"labels":["X"]},{"start":1,"end":2,"labels":["X"]}]}"#).unwrap();
        assert!(matches!(
            load_jsonl(&c),
            Err(Error::Validation { line: 1, .. })
        ));
    }

    #[test]
    fn inventory_and_vocab() {
        let rs = vec![rec(&["a", "b", "a"], &[(0, 0, &["Y"]), (1, 2, &["X"])])];
        let inv = LabelInventory::from_records(&rs);
        assert_eq!(inv.names(), &["X".to_string(), "Y".to_string()]);
        let ex = Example::from_record(&rs[0], &inv).unwrap();
        assert_eq!(ex.entities.get(0, 0).unwrap().labels, vec![1]);
        assert_eq!(ex.to_record(&inv), rs[0]);
        let v = Vocab::build(&rs, 2);
        assert_eq!(v.len(), 5);
        assert_eq!(
            v.ids(&["a".into(), "b".into(), "<bos>".into()]),
            vec![4, UNK, UNK]
        );
        let bad = rec(&["a"], &[(0, 0, &["Z"])]);
        assert!(Example::from_record(&bad, &inv).is_err());
    }
}

//! Passages, QA pairs, and the tokenizer shared by indexing, answer
//! matching, the reader, and the EM/F1 metrics.
//!
//! Both file formats are JSONL, one object per line:
//!
//! ```text
//! passages.jsonl  {"id": str, "title": str|null, "text": str}
//! qa.jsonl        {"id": str, "question": str, "answers": [str, ...], "client": int}
//! ```

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Passage identifier, unique within a corpus.
pub type PassageId = String;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },
    #[error("{0}")]
    Validation(String),
}

/// A unit of corpus text available for retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: PassageId,
    pub title: Option<String>,
    pub text: String,
}

/// A question with its gold answers and a client assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub client: usize,
}

/// An ordered sequence of normalized terms. Every token is lowercase and
/// non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    /// Joins tokens with single spaces (inverse of whitespace splitting).
    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn tokenize(text: &str) -> Vec<String> {
    // Lowercase, map anything that is neither alphanumeric nor whitespace to
    // a space, then split on whitespace.
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                cleaned.push(lower);
            }
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(|t| t.to_string()).collect()
}

/// Index-path normalization: lowercase, punctuation to spaces, whitespace
/// split. Articles are kept so BM25 statistics stay standard.
pub fn normalize(text: &str) -> TokenSeq {
    TokenSeq(tokenize(text))
}

/// Metric-path normalization: like [`normalize`] but with the English
/// articles "a", "an", "the" removed (the usual EM/F1 convention).
pub fn normalize_metric(text: &str) -> TokenSeq {
    TokenSeq(
        tokenize(text)
            .into_iter()
            .filter(|t| !ARTICLES.contains(&t.as_str()))
            .collect(),
    )
}

/// True iff some normalized answer occurs contiguously in the normalized
/// passage token sequence. Answers that normalize to nothing never match.
pub fn contains_answer(passage: &Passage, answers: &[String]) -> bool {
    let hay = normalize(&passage.text);
    answers.iter().any(|ans| {
        let needle = normalize(ans);
        !needle.is_empty() && contains_contiguous(hay.as_slice(), needle.as_slice())
    })
}

fn contains_contiguous(hay: &[String], needle: &[String]) -> bool {
    if needle.len() > hay.len() {
        return false;
    }
    hay.windows(needle.len()).any(|w| w == needle)
}

/// An id-addressable collection of passages.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    items: Vec<Arc<Passage>>,
    by_id: HashMap<PassageId, usize>,
}

impl Corpus {
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for p in passages {
            if normalize(&p.text).is_empty() {
                return Err(CorpusError::Validation(format!(
                    "passage `{}` has empty text after normalization",
                    p.id
                )));
            }
            if corpus.by_id.contains_key(&p.id) {
                return Err(CorpusError::DuplicateId { id: p.id });
            }
            corpus.by_id.insert(p.id.clone(), corpus.items.len());
            corpus.items.push(Arc::new(p));
        }
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Passage>> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Arc<Passage>> {
        self.items.iter()
    }

    /// All passage ids in ascending order.
    pub fn sorted_ids(&self) -> Vec<PassageId> {
        let mut ids: Vec<PassageId> = self.by_id.keys().cloned().collect();
        ids.sort_unstable();
        ids
    }

    /// Resolves a store (set of ids) to its passages, in ascending id order.
    pub fn subset(&self, ids: &BTreeSet<PassageId>) -> Result<Vec<Arc<Passage>>, CorpusError> {
        ids.iter()
            .map(|id| {
                self.get(id).cloned().ok_or_else(|| {
                    CorpusError::Validation(format!("store references unknown passage `{id}`"))
                })
            })
            .collect()
    }
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            path: display.clone(),
            line: lineno + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|source| CorpusError::Parse {
            path: display.clone(),
            line: 0,
            source,
        })?;
        writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).map_err(
            |source| CorpusError::Io {
                path: display.clone(),
                source,
            },
        )?;
    }
    writer.flush().map_err(|source| CorpusError::Io {
        path: display,
        source,
    })
}

/// Loads passages from JSONL, rejecting duplicate ids and empty text.
pub fn load_passages(path: &Path) -> Result<Vec<Passage>, CorpusError> {
    let passages: Vec<Passage> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for p in &passages {
        if !seen.insert(p.id.clone()) {
            return Err(CorpusError::DuplicateId { id: p.id.clone() });
        }
        if normalize(&p.text).is_empty() {
            return Err(CorpusError::Validation(format!(
                "passage `{}` has empty text after normalization",
                p.id
            )));
        }
    }
    Ok(passages)
}

/// Loads QA pairs from JSONL, rejecting duplicate ids and empty answer lists.
pub fn load_qa(path: &Path) -> Result<Vec<QAPair>, CorpusError> {
    let pairs: Vec<QAPair> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for qa in &pairs {
        if !seen.insert(qa.id.clone()) {
            return Err(CorpusError::DuplicateId { id: qa.id.clone() });
        }
        if qa.answers.is_empty() {
            return Err(CorpusError::Validation(format!(
                "qa pair `{}` has no answers",
                qa.id
            )));
        }
    }
    Ok(pairs)
}

pub fn save_passages(path: &Path, passages: &[Passage]) -> Result<(), CorpusError> {
    write_jsonl(path, passages)
}

pub fn save_qa(path: &Path, pairs: &[QAPair]) -> Result<(), CorpusError> {
    write_jsonl(path, pairs)
}

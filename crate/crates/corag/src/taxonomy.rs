//! Per-QA passage categorization: relevant, hard-negative, irrelevant.
//!
//! The query is the question concatenated with the first gold answer. Among
//! the top-ranked BM25 results, passages in the top `top_r` that contain a
//! gold answer are relevant; everything else retrieved down to rank `hn_hi`
//! is a hard negative (including top-ranked passages that lack the answer);
//! the rest of the store is implicitly irrelevant.

use crate::corpus::{contains_answer, normalize, Corpus, PassageId, QAPair, TokenSeq};
use crate::index::Bm25Index;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown qa id `{0}`")]
    UnknownQa(String),
    #[error("taxonomy io: {0}")]
    Io(#[from] crate::corpus::CorpusError),
}

/// Rank windows for categorization: relevant candidates come from ranks
/// `1..=top_r`, hard negatives extend to rank `hn_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankWindow {
    pub top_r: usize,
    pub hn_lo: usize,
    pub hn_hi: usize,
}

impl Default for RankWindow {
    fn default() -> Self {
        RankWindow { top_r: 5, hn_lo: 6, hn_hi: 50 }
    }
}

/// One QA pair's categorization. `relevant` and `hard_negative` are kept in
/// retrieval rank order; the irrelevant set is the store complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub qa_id: String,
    pub relevant: Vec<PassageId>,
    pub hard_negative: Vec<PassageId>,
}

impl TaxonomyEntry {
    pub fn relevant_set(&self) -> BTreeSet<PassageId> {
        self.relevant.iter().cloned().collect()
    }

    pub fn hard_negative_set(&self) -> BTreeSet<PassageId> {
        self.hard_negative.iter().cloned().collect()
    }
}

/// Categorizations for a set of QA pairs over one store.
#[derive(Debug, Clone, Default)]
pub struct StoreTaxonomy {
    pub window: RankWindow,
    entries: BTreeMap<String, TaxonomyEntry>,
}

impl StoreTaxonomy {
    pub fn new(window: RankWindow) -> Self {
        StoreTaxonomy { window, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, entry: TaxonomyEntry) {
        self.entries.insert(entry.qa_id.clone(), entry);
    }

    pub fn get(&self, qa_id: &str) -> Option<&TaxonomyEntry> {
        self.entries.get(qa_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaxonomyEntry> {
        self.entries.values()
    }

    /// Union of relevant sets over a subset of QA ids.
    pub fn union_relevant<'a, I>(&self, qa_ids: I) -> Result<BTreeSet<PassageId>, TaxonomyError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = BTreeSet::new();
        for id in qa_ids {
            let entry = self
                .entries
                .get(id)
                .ok_or_else(|| TaxonomyError::UnknownQa(id.to_string()))?;
            out.extend(entry.relevant.iter().cloned());
        }
        Ok(out)
    }

    /// Union of hard-negative sets over a subset of QA ids.
    pub fn union_hard_negative<'a, I>(
        &self,
        qa_ids: I,
    ) -> Result<BTreeSet<PassageId>, TaxonomyError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = BTreeSet::new();
        for id in qa_ids {
            let entry = self
                .entries
                .get(id)
                .ok_or_else(|| TaxonomyError::UnknownQa(id.to_string()))?;
            out.extend(entry.hard_negative.iter().cloned());
        }
        Ok(out)
    }

    /// Highest-ranked relevant passage per QA pair, unioned over the subset.
    pub fn union_top1_relevant<'a, I>(
        &self,
        qa_ids: I,
    ) -> Result<BTreeSet<PassageId>, TaxonomyError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = BTreeSet::new();
        for id in qa_ids {
            let entry = self
                .entries
                .get(id)
                .ok_or_else(|| TaxonomyError::UnknownQa(id.to_string()))?;
            if let Some(first) = entry.relevant.first() {
                out.insert(first.clone());
            }
        }
        Ok(out)
    }

    /// Writes `{"qa_id":…, "relevant":[…], "hard_negative":[…]}` lines.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), TaxonomyError> {
        let owned: Vec<TaxonomyEntry> = self.entries.values().cloned().collect();
        crate::corpus::write_jsonl(path, &owned)?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path, window: RankWindow) -> Result<Self, TaxonomyError> {
        let entries: Vec<TaxonomyEntry> = crate::corpus::read_jsonl(path)?;
        let mut tax = StoreTaxonomy::new(window);
        for e in entries {
            tax.insert(e);
        }
        Ok(tax)
    }
}

/// The taxonomy query: question plus the first gold answer.
pub fn taxonomy_query(qa: &QAPair) -> TokenSeq {
    let first = qa.answers.first().map(String::as_str).unwrap_or("");
    normalize(&format!("{} {}", qa.question, first))
}

/// Categorizes one QA pair against an index built over the candidate store.
pub fn categorize(
    qa: &QAPair,
    index: &Bm25Index,
    corpus: &Corpus,
    window: RankWindow,
) -> TaxonomyEntry {
    let ranked = index.search(&taxonomy_query(qa), window.hn_hi);
    let mut relevant = Vec::new();
    let mut hard_negative = Vec::new();
    for (rank0, (id, _)) in ranked.entries.iter().enumerate() {
        let rank = rank0 + 1;
        let has_answer = corpus
            .get(id)
            .map(|p| contains_answer(p, &qa.answers))
            .unwrap_or(false);
        if rank <= window.top_r && has_answer {
            relevant.push(id.clone());
        } else {
            hard_negative.push(id.clone());
        }
    }
    TaxonomyEntry { qa_id: qa.id.clone(), relevant, hard_negative }
}

/// Categorizes every QA pair. Pure per pair, so order has no effect.
pub fn categorize_all(
    qas: &[QAPair],
    index: &Bm25Index,
    corpus: &Corpus,
    window: RankWindow,
) -> StoreTaxonomy {
    let mut tax = StoreTaxonomy::new(window);
    for qa in qas {
        tax.insert(categorize(qa, index, corpus, window));
    }
    tax
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::index::Bm25Params;
    use std::sync::Arc;

    fn corpus_from(texts: &[(&str, &str)]) -> Corpus {
        Corpus::from_passages(
            texts
                .iter()
                .map(|(id, t)| Passage { id: id.to_string(), title: None, text: t.to_string() })
                .collect(),
        )
        .unwrap()
    }

    fn qa(id: &str, question: &str, answer: &str) -> QAPair {
        QAPair {
            id: id.to_string(),
            question: question.to_string(),
            answers: vec![answer.to_string()],
            client: 0,
        }
    }

    fn index_over(corpus: &Corpus) -> Bm25Index {
        let passages: Vec<Arc<Passage>> = corpus.iter().cloned().collect();
        Bm25Index::build(&passages, Bm25Params::default()).unwrap()
    }

    #[test]
    fn answer_bearing_top_hit_is_relevant() {
        let corpus = corpus_from(&[
            ("p1", "the quartz mine lies near oslo fjord"),
            ("p2", "quartz mine report without the place name"),
            ("p3", "unrelated text about cooking"),
        ]);
        let index = index_over(&corpus);
        let entry = categorize(
            &qa("q1", "where is the quartz mine", "oslo"),
            &index,
            &corpus,
            RankWindow::default(),
        );
        assert_eq!(entry.relevant, vec!["p1"]);
        assert!(entry.hard_negative.contains(&"p2".to_string()));
        assert!(!entry.hard_negative.contains(&"p1".to_string()));
    }

    #[test]
    fn zero_term_overlap_means_all_irrelevant() {
        let corpus = corpus_from(&[("p1", "alpha beta"), ("p2", "gamma delta")]);
        let index = index_over(&corpus);
        let entry = categorize(
            &qa("q1", "zzz qqq", "xxx"),
            &index,
            &corpus,
            RankWindow::default(),
        );
        assert!(entry.relevant.is_empty());
        assert!(entry.hard_negative.is_empty());
    }

    #[test]
    fn top_ranked_without_answer_is_hard_negative() {
        // p2 matches the query terms strongly but has no answer.
        let corpus = corpus_from(&[
            ("p1", "silver comet filler words here"),
            ("p2", "silver comet silver comet silver comet"),
        ]);
        let index = index_over(&corpus);
        let entry = categorize(
            &qa("q1", "silver comet", "filler"),
            &index,
            &corpus,
            RankWindow::default(),
        );
        assert_eq!(entry.relevant, vec!["p1"]);
        assert_eq!(entry.hard_negative, vec!["p2"]);
    }

    #[test]
    fn union_relevant_disjoint_adds() {
        let mut tax = StoreTaxonomy::new(RankWindow::default());
        tax.insert(TaxonomyEntry {
            qa_id: "q1".into(),
            relevant: vec!["p1".into(), "p2".into()],
            hard_negative: vec![],
        });
        tax.insert(TaxonomyEntry {
            qa_id: "q2".into(),
            relevant: vec!["p3".into()],
            hard_negative: vec![],
        });
        let u = tax.union_relevant(["q1", "q2"]).unwrap();
        assert_eq!(u.len(), 3);
        let single = tax.union_relevant(["q2"]).unwrap();
        assert_eq!(single.into_iter().collect::<Vec<_>>(), vec!["p3".to_string()]);
    }

    #[test]
    fn union_relevant_unknown_id_errors() {
        let tax = StoreTaxonomy::new(RankWindow::default());
        assert!(matches!(
            tax.union_relevant(["missing"]),
            Err(TaxonomyError::UnknownQa(_))
        ));
    }

    #[test]
    fn partition_property_on_synthetic_batch() {
        // Relevant, hard-negative, irrelevant must partition the store for
        // every QA pair, and every relevant passage must contain the answer.
        let (passages, qas) = crate::synth::generate(&crate::synth::SynthSpec {
            passages: 400,
            qa: 40,
            clients: 4,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let corpus = Corpus::from_passages(passages).unwrap();
        let index = index_over(&corpus);
        let store: BTreeSet<PassageId> = corpus.sorted_ids().into_iter().collect();
        for qa in &qas {
            let entry = categorize(qa, &index, &corpus, RankWindow::default());
            let rel = entry.relevant_set();
            let hn = entry.hard_negative_set();
            assert!(rel.is_disjoint(&hn), "overlap for {}", qa.id);
            assert!(rel.is_subset(&store) && hn.is_subset(&store));
            assert!(rel.len() <= 5);
            for id in &rel {
                assert!(contains_answer(corpus.get(id).unwrap(), &qa.answers));
            }
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut tax = StoreTaxonomy::new(RankWindow::default());
        tax.insert(TaxonomyEntry {
            qa_id: "q1".into(),
            relevant: vec!["p2".into(), "p1".into()],
            hard_negative: vec!["p9".into()],
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("taxonomy.jsonl");
        tax.save_jsonl(&path).unwrap();
        let loaded = StoreTaxonomy::load_jsonl(&path, RankWindow::default()).unwrap();
        assert_eq!(loaded.get("q1"), tax.get("q1"));
    }
}
